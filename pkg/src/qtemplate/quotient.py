"""Quotient distance, polarization identity and registration scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actions import GroupAction, GroupElement, as_vector, row_distances
from .errors import ContractViolation, UnsupportedAction
from .model import NoiseSpec, ObservationSample, rng_stream

UNIT_TOL = 1e-9
CONGRUENCE_TOL = 1e-9


@dataclass(frozen=True)
class QuotientDistanceResult:
    distance: float
    registering_element: GroupElement
    sup_inner: float | None


@dataclass(frozen=True)
class RegistrationScore:
    direction: np.ndarray = field(repr=False)
    value: float
    std_error: float
    n_samples: int
    positive_part: float | None = None

    def csv_row(self, v_id) -> tuple:
        return (v_id, self.value, self.std_error, self.n_samples)


def quotient_distance(a, b, action: GroupAction) -> QuotientDistanceResult:
    """``inf_g ||a - g.b||`` together with the registering element.

    For isometric actions ``sup_g <a, g.b>`` is filled in as well.
    """
    a = as_vector(a, action.dimension)
    b = as_vector(b, action.dimension)
    reg = action.register(a, b)
    sup = float(np.dot(a, reg.registered)) if action.isometric else None
    return QuotientDistanceResult(reg.distance, reg.element, sup)


def polarization_check(a, b, action: GroupAction) -> float:
    """Residual of ``sup_g <a, g.b> = (||a||^2 + ||b||^2 - d_Q^2) / 2``."""
    if not action.isometric:
        raise UnsupportedAction("the polarization identity needs an isometric action")
    a = as_vector(a, action.dimension)
    reg = action.register(a, as_vector(b, action.dimension))
    gb = reg.registered
    # same reduction as the registration distance, so a = 0 gives exactly 0
    na, nb = row_distances(np.zeros_like(a), np.stack([a, gb]))
    d = reg.distance
    sup = float(np.dot(a, gb))
    return abs(sup - 0.5 * (na * na + nb * nb - d * d))


def _check_unit(v, n):
    v = as_vector(v, n)
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ContractViolation("direction must be a unit vector")
    return v


def _score(v, values: np.ndarray) -> RegistrationScore:
    n = len(values)
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    mean = float(np.mean(values))
    return RegistrationScore(v, mean, se, n, max(mean, 0.0))


def theta(v, noise: NoiseSpec, action: GroupAction, n_mc: int, seed: int,
          batch: int = 65536) -> RegistrationScore:
    """Monte-Carlo estimate of ``E sup_g <v, g.eps>`` for unit ``v``.

    Noise is drawn in fixed-size chunks from the ``"theta"`` stream and the
    per-draw values are reduced in draw order, so the result depends only on
    ``(seed, n_mc)``.
    """
    v = _check_unit(v, action.dimension)
    if int(n_mc) < 1:
        raise ContractViolation("n_mc must be >= 1")
    rng = rng_stream(seed, "theta")
    vals = np.empty(int(n_mc))
    for start in range(0, int(n_mc), batch):
        stop = min(start + batch, int(n_mc))
        vals[start:stop] = action.sup_inner(v, noise.sample(rng, stop - start))
    return _score(v, vals)


def lambda_score(v, sample: ObservationSample, action: GroupAction) -> RegistrationScore:
    """Empirical ``mean_i sup_g <v, g.Y_i>``; ``positive_part`` holds its
    positive part."""
    v = _check_unit(v, action.dimension)
    if len(sample) == 0:
        raise ContractViolation("empty sample")
    return _score(v, action.sup_inner(v, sample.observations))


@dataclass
class CongruenceSearch:
    exists: bool
    witness: tuple | None
    quotient_distances: tuple
    trace: list = field(repr=False, default_factory=list)


def congruent_triple_exists(p1, p2, p3, action: GroupAction) -> CongruenceSearch:
    """Search for representatives ``x in [p1], y in [p2], z in [p3]`` whose
    pairwise ambient distances equal the quotient distances.

    ``x`` is pinned to ``p1`` (any section can be re-gauged by a group
    element), leaving an exhaustive search over ``G x G``.  Each trace entry
    is ``(i2, i3, worst_violation)`` with element indices into
    ``action.elements()``.
    """
    if not action.finite:
        raise UnsupportedAction("exhaustive search needs a finite group")
    n = action.dimension
    p1, p2, p3 = (as_vector(p, n) for p in (p1, p2, p3))
    d12 = action.register(p1, p2).distance
    d13 = action.register(p1, p3).distance
    d23 = action.register(p2, p3).distance
    ys = action.orbit_matrix(p2)
    zs = action.orbit_matrix(p3)
    e12 = np.abs(row_distances(p1, ys) - d12)
    e13 = np.abs(row_distances(p1, zs) - d13)
    trace = []
    witness = None
    for i2, y in enumerate(ys):
        e23 = np.abs(row_distances(y, zs) - d23)
        for i3 in range(len(zs)):
            worst = float(max(e12[i2], e13[i3], e23[i3]))
            trace.append((i2, i3, worst))
            if witness is None and worst <= CONGRUENCE_TOL:
                witness = (p1.copy(), y.copy(), zs[i3].copy())
    return CongruenceSearch(witness is not None, witness, (d12, d13, d23), trace)
