"""Generative model ``Y = Phi . t0 + sigma * eps`` and its random streams.

Randomness
----------
Every random quantity is drawn from a Philox4x64 bit generator whose seed
sequence is ``SeedSequence(seed, spawn_key=(crc32(label), *extra))``.  The
transformation draws use the label ``"phi"`` and the noise draws the label
``"eps"``, so the two streams are independent and each is consumed in
observation order: growing ``I`` never changes earlier observations.
Gaussian noise uses numpy's ``standard_normal`` on that stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .actions import (
    FiniteAction,
    GroupAction,
    Identity,
    as_vector,
)
from .errors import ContractViolation

STANDARDIZATION_TOL = 1e-12


def rng_stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, label, *extra)``."""
    if seed is None:
        raise ContractViolation("a seed is mandatory")
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(e) for e in extra)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Integer seed for an independent sub-experiment ``keys`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(0x5EED,) + tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Standardized noise: ``E(eps) = 0`` and ``E||eps||^2 = 1``.

    ``gaussian_iid`` has per-coordinate standard deviation ``w = 1/sqrt(N)``;
    ``finite_support`` draws one of ``atoms`` with ``probabilities``.
    """

    kind: str
    dimension: int
    w: float | None = None
    atoms: np.ndarray | None = None
    probabilities: np.ndarray | None = None

    @classmethod
    def gaussian(cls, n: int) -> "NoiseSpec":
        return cls("gaussian_iid", int(n), w=1.0 / np.sqrt(n))

    @classmethod
    def finite(cls, atoms, probabilities=None, check: bool = True) -> "NoiseSpec":
        a = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        if probabilities is None:
            p = np.full(len(a), 1.0 / len(a))
        else:
            p = np.asarray(probabilities, dtype=np.float64)
        if p.shape != (len(a),) or np.any(p < 0) or abs(p.sum() - 1.0) > STANDARDIZATION_TOL:
            raise ContractViolation("probabilities must be nonnegative and sum to 1")
        spec = cls("finite_support", a.shape[1], atoms=a, probabilities=p)
        if check:
            spec.check()
        return spec

    def moments(self):
        """``(mean vector, E||eps||^2)``."""
        if self.kind == "gaussian_iid":
            return np.zeros(self.dimension), self.dimension * self.w**2
        mean = self.probabilities @ self.atoms
        second = float(self.probabilities @ np.einsum("ij,ij->i", self.atoms, self.atoms))
        return mean, second

    def check(self):
        mean, second = self.moments()
        if np.max(np.abs(mean)) > STANDARDIZATION_TOL or abs(second - 1.0) > STANDARDIZATION_TOL:
            raise ContractViolation(
                f"noise is not standardized (|mean|={np.max(np.abs(mean)):.3g}, E||eps||^2={second:.6g})"
            )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian_iid":
            return self.w * rng.standard_normal((size, self.dimension))
        idx = rng.choice(len(self.atoms), size=size, p=self.probabilities)
        return self.atoms[idx]

    def to_dict(self) -> dict:
        if self.kind == "gaussian_iid":
            return {"kind": self.kind, "dimension": self.dimension, "w": self.w}
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "atoms": self.atoms.tolist(),
            "probabilities": self.probabilities.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        if d["kind"] == "gaussian_iid":
            return cls.gaussian(int(d["dimension"]))
        return cls.finite(d["atoms"], d["probabilities"])


def standardize_noise(spec: NoiseSpec) -> NoiseSpec:
    """Recentre and rescale ``spec`` so that it is exactly standardized."""
    if spec.kind == "gaussian_iid":
        return NoiseSpec.gaussian(spec.dimension)
    mean, second = spec.moments()
    if np.max(np.abs(mean)) <= STANDARDIZATION_TOL and abs(second - 1.0) <= STANDARDIZATION_TOL:
        return spec
    centred = spec.atoms - mean
    var = float(spec.probabilities @ np.einsum("ij,ij->i", centred, centred))
    if var <= 0.0:
        raise ContractViolation("degenerate noise: all atoms coincide")
    return NoiseSpec.finite(centred / np.sqrt(var), spec.probabilities)


@dataclass(frozen=True, eq=False)
class TransformationLaw:
    """Distribution of the random group element.

    ``uniform_finite`` and ``custom_discrete`` pick among ``elements`` with
    ``weights``; ``fixed_element`` always returns ``elements[0]``.
    """

    kind: str
    elements: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.elements),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation("law weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, action: FiniteAction) -> "TransformationLaw":
        if not getattr(action, "finite", False):
            raise ContractViolation("uniform law needs a finite action")
        els = tuple(action.elements())
        return cls("uniform_finite", els, np.full(len(els), 1.0 / len(els)))

    @classmethod
    def fixed(cls, element=None) -> "TransformationLaw":
        return cls("fixed_element", (element if element is not None else Identity(),), np.ones(1))

    @classmethod
    def custom(cls, elements, weights) -> "TransformationLaw":
        return cls("custom_discrete", tuple(elements), weights)

    def draw_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "fixed_element":
            return np.zeros(size, dtype=np.int64)
        if self.kind == "uniform_finite":
            return rng.integers(0, len(self.elements), size=size)
        return rng.choice(len(self.elements), size=size, p=self.weights)

    def describe(self) -> str:
        if self.kind == "fixed_element":
            return f"fixed:{self.elements[0]!r}"
        return f"{self.kind}:{len(self.elements)}"


@dataclass(eq=False)
class ObservationSample:
    """``I`` observations (rows of ``observations``) plus provenance.

    ``phi_indices`` index ``law.elements`` and record the hidden
    transformations; they exist only for simulated data.
    """

    observations: np.ndarray
    meta: dict = field(default_factory=dict)
    phi_indices: np.ndarray | None = None
    law: TransformationLaw | None = None

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.observations, dtype=np.float64))
        if Y.size == 0 or len(Y) == 0:
            raise ContractViolation("a sample needs at least one observation")
        self.observations = Y
        self.meta.setdefault("I", len(Y))

    def __len__(self):
        return len(self.observations)

    @property
    def dimension(self) -> int:
        return self.observations.shape[1]

    def true_transforms(self) -> list:
        if self.phi_indices is None or self.law is None:
            raise ContractViolation("sample carries no generating transformations")
        return [self.law.elements[i] for i in self.phi_indices]

    def prefix(self, i: int) -> "ObservationSample":
        meta = dict(self.meta, I=int(i))
        phi = None if self.phi_indices is None else self.phi_indices[:i]
        return ObservationSample(self.observations[:i], meta, phi, self.law)


def sample_observations(t0, sigma: float, law: TransformationLaw, noise: NoiseSpec, I: int,
                        seed: int, action: GroupAction, template_id: str = "custom",
                        ) -> ObservationSample:
    """Draw ``Y_i = Phi_i . t0 + sigma * eps_i`` for ``i = 1..I``."""
    t0 = as_vector(t0, action.dimension)
    if sigma < 0:
        raise ContractViolation("sigma must be nonnegative")
    if int(I) < 1:
        raise ContractViolation("I must be >= 1")
    if noise.dimension != action.dimension:
        raise ContractViolation("noise dimension does not match the action")
    noise.check()

    phi_idx = law.draw_indices(rng_stream(seed, "phi"), int(I))
    eps = noise.sample(rng_stream(seed, "eps"), int(I))
    orbit_pts = np.stack([action.apply(g, t0) for g in law.elements])
    Y = orbit_pts[phi_idx] + sigma * eps
    meta = {
        "sigma": float(sigma),
        "seed": int(seed),
        "action": action.kind,
        "noise": noise.kind,
        "law": law.describe(),
        "template": template_id,
        "I": int(I),
        "N": action.dimension,
    }
    return ObservationSample(Y, meta, phi_idx, law)
