"""Critical noise levels and pre-variances for actions that do not preserve
the distance.

For such actions the discrepancy ``inf_g ||g.m - y||`` is no longer
symmetric, and the natural objective is the pre-variance
``F(m) = E min_g ||g.m - Y||^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .actions import FiniteAction, GroupAction, as_vector, row_distances
from .errors import ContractViolation, PreconditionError, UnsupportedAction
from .model import NoiseSpec, ObservationSample, rng_stream
from .quotient import RegistrationScore, _score

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CriticalNoise:
    sigma_c: float
    regime: str
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"sigma_c": self.sigma_c, "regime": self.regime, "inputs": dict(self.inputs)}


def _check_bounds(a, A):
    if a < 0 or A <= 0:
        raise PreconditionError("orbit bounds need a >= 0 and A > 0")
    if a > A:
        raise PreconditionError(f"invalid orbit bounds: a={a} > A={A}")


def sigma_c_subgroup(t0_norm: float, theta_t0: float, theta_H: float, a: float, A: float
                     ) -> CriticalNoise:
    """Noise level above which ``t0`` cannot minimise the pre-variance when a
    subgroup ``H`` acts isometrically with registration score ``theta_H``."""
    if theta_H <= 0:
        raise PreconditionError("theta_H must be positive")
    _check_bounds(a, A)
    b = theta_t0 / theta_H + A
    s = (t0_norm / theta_H) * (b + math.sqrt(b * b + A * A - a * a))
    return CriticalNoise(s, "subgroup", {"t0_norm": t0_norm, "theta_t0": theta_t0,
                                         "theta_H": theta_H, "a": a, "A": A})


def _linear(t0_norm, theta_t0, a, A, omega, regime):
    if A >= SQRT2:
        raise PreconditionError(
            "the linear bound needs A < sqrt(2); re-anchoring the template at another "
            "orbit point may lower A (not done automatically)")
    if theta_t0 <= 0:
        raise PreconditionError("theta(t0) must be positive")
    if omega < 0:
        raise PreconditionError("Omega must be nonnegative")
    _check_bounds(a, A)
    c = 2.0 - A * A
    radicand = 1.0 - (a * a + omega / t0_norm**2) * c
    if radicand < 0:
        raise PreconditionError(
            f"negative radicand {radicand:.3g}: the sufficient condition says nothing here")
    s = (t0_norm / theta_t0) * (A * A + (1.0 + math.sqrt(radicand)) / c)
    inputs = {"t0_norm": t0_norm, "theta_t0": theta_t0, "a": a, "A": A}
    if regime == "linear_regularized":
        inputs["Omega"] = omega
    return CriticalNoise(s, regime, inputs)


def sigma_c_linear(t0_norm: float, theta_t0: float, a: float, A: float) -> CriticalNoise:
    """Critical noise level for a linear (non-isometric) action with
    ``a |t0| <= |g.t0| <= A |t0|`` and ``A < sqrt(2)``."""
    return _linear(t0_norm, theta_t0, a, A, 0.0, "linear")


def sigma_c_regularized(t0_norm: float, theta_t0: float, a: float, A: float, Omega: float
                        ) -> CriticalNoise:
    """As :func:`sigma_c_linear` with a group restricted to a set whose
    regulariser is bounded by ``Omega``."""
    return _linear(t0_norm, theta_t0, a, A, Omega, "linear_regularized")


@dataclass(frozen=True)
class OrbitBounds:
    a: float
    A: float
    t0_norm: float

    def __post_init__(self):
        if not (0 <= self.a <= 1 + 1e-12 and self.A >= 1 - 1e-12):
            raise ContractViolation(f"expected a <= 1 <= A, got a={self.a}, A={self.A}")


def orbit_bounds(t0, action: FiniteAction) -> OrbitBounds:
    """Tightest ``a, A`` with ``a |t0| <= |g.t0| <= A |t0|`` over the group."""
    if not action.finite:
        raise UnsupportedAction("orbit bounds are measured on finite groups")
    t0 = as_vector(t0, action.dimension)
    n0 = float(np.linalg.norm(t0))
    if n0 == 0:
        raise ContractViolation("t0 must be nonzero")
    r = row_distances(np.zeros_like(t0), action.orbit_matrix(t0)) / n0
    return OrbitBounds(float(r.min()), float(r.max()), n0)


@dataclass(frozen=True)
class ThetaCheck:
    estimate: float
    std_error: float
    positive: bool
    n_mc: int


def theta_positivity_check(t0, noise: NoiseSpec, action: GroupAction, n_mc: int, seed: int
                           ) -> ThetaCheck:
    """Monte-Carlo ``(1/|t0|) E sup_g <g.t0, eps>`` and whether it exceeds
    four standard errors."""
    t0 = as_vector(t0, action.dimension)
    n0 = np.linalg.norm(t0)
    if n0 == 0:
        raise ContractViolation("t0 must be nonzero")
    if action.is_fixed_point(t0):
        warnings.warn("t0 is a fixed point: the positivity argument does not apply",
                      RuntimeWarning, stacklevel=2)
    E = noise.sample(rng_stream(seed, "theta_t0"), int(n_mc))
    vals = action.sup_inner_orbit(t0, E) / n0
    sc = _score(t0 / n0, vals)
    return ThetaCheck(sc.value, sc.std_error, bool(sc.value > 4 * sc.std_error), int(n_mc))


def _obs(sample) -> np.ndarray:
    Y = sample.observations if isinstance(sample, ObservationSample) else sample
    return np.atleast_2d(np.asarray(Y, dtype=np.float64))


def affine_prevariance_minimizer(sample, subspace_basis) -> np.ndarray:
    """Projection of the sample mean onto the orthogonal complement of V."""
    Y = _obs(sample)
    n = Y.shape[1]
    if subspace_basis is None or len(subspace_basis) == 0:
        B = np.zeros((0, n))
    else:
        B = np.atleast_2d(np.asarray(subspace_basis, dtype=np.float64))
    if B.shape[1] != n:
        raise ContractViolation("subspace basis has the wrong dimension")
    if np.max(np.abs(B @ B.T - np.eye(len(B))), initial=0.0) > 1e-9:
        raise ContractViolation("subspace basis is not orthonormal")
    mean = np.add.reduce(Y, axis=0) / len(Y)
    return mean - B.T @ (B @ mean)


def prevariance_terms(m, sample, action: FiniteAction, admissible=None) -> np.ndarray:
    """Per-observation ``min_{g in B} ||g.m - Y_i||^2``; ``admissible`` is a
    boolean mask over ``action.elements()`` (default: the whole group)."""
    if not action.finite:
        raise UnsupportedAction("pre-variance is evaluated on finite groups")
    Y = _obs(sample)
    orbit = action.orbit_matrix(as_vector(m, action.dimension))
    if admissible is not None:
        mask = np.asarray(admissible, dtype=bool)
        if mask.shape != (len(orbit),):
            raise ContractViolation("admissible mask has the wrong length")
        if not mask.any():
            raise ContractViolation("empty admissible set")
        orbit = orbit[mask]
    # ||g.m - y||^2 over the orbit rows, one observation at a time to bound memory
    out = np.empty(len(Y))
    for i, y in enumerate(Y):
        d = row_distances(y, orbit)
        out[i] = np.min(d * d)
    return out


def prevariance(m, sample, action: FiniteAction) -> float:
    """``(1/I) sum_i min_g ||g.m - Y_i||^2``."""
    return float(np.mean(prevariance_terms(m, sample, action)))


def cyclic_ball(n: int, r: int) -> np.ndarray:
    """Mask of the shifts ``k`` with ``min(k, n - k) <= r``."""
    k = np.arange(n)
    return np.minimum(k, n - k) <= r


def prevariance_restricted(m, sample, action: FiniteAction, ball_radius_filter) -> float:
    """Pre-variance with the minimum restricted to admissible elements.

    ``ball_radius_filter`` is either an integer radius ``r`` (cyclic-type
    actions: shifts with ``min(k, N - k) <= r``), a boolean mask over the
    elements, or a predicate on element indices.
    """
    n = action.order
    f = ball_radius_filter
    if isinstance(f, (int, np.integer)):
        if f < 0:
            raise ContractViolation("radius must be nonnegative")
        mask = cyclic_ball(n, int(f))
    elif callable(f):
        mask = np.array([bool(f(k)) for k in range(n)])
    else:
        mask = np.asarray(f, dtype=bool)
    return float(np.mean(prevariance_terms(m, sample, action, mask)))


def lambda_t0(t0, sample, action: FiniteAction) -> RegistrationScore:
    """``(1/|t0|^2) mean_i sup_g <g.t0, Y_i>``; ``value`` is the scale factor."""
    t0 = as_vector(t0, action.dimension)
    n2 = float(np.dot(t0, t0))
    if n2 == 0:
        raise ContractViolation("t0 must be nonzero")
    vals = action.sup_inner_orbit(t0, _obs(sample)) / n2
    return _score(t0 / math.sqrt(n2), vals)


@dataclass
class InconsistencyRealization:
    sigma: float
    sigma_c: float
    lam: float
    F_t0: float
    F_lambda: float
    diff_mean: float
    diff_se: float
    bounds: OrbitBounds
    theta_t0: float

    @property
    def realized(self) -> bool:
        return self.diff_mean > 4 * self.diff_se

    def csv_row(self) -> tuple:
        return (self.sigma, self.F_t0, self.F_lambda, self.diff_se)


def inconsistency_realization(t0, action: FiniteAction, noise: NoiseSpec, I: int, seed: int,
                              sigma_factor: float = 2.0, n_mc: int = 20000, law=None
                              ) -> InconsistencyRealization:
    """Show that ``lambda(t0) t0`` beats ``t0`` on the pre-variance.

    Measures ``a, A`` on the orbit and ``theta(t0)`` by Monte Carlo, sets
    ``sigma = sigma_factor * sigma_c``, draws a sample and compares the
    pre-variance terms at ``t0`` and at ``lambda(t0) t0`` pairwise.
    """
    from .model import TransformationLaw, sample_observations

    t0 = as_vector(t0, action.dimension)
    bounds = orbit_bounds(t0, action)
    th = theta_positivity_check(t0, noise, action, n_mc, seed)
    crit = sigma_c_linear(bounds.t0_norm, th.estimate, bounds.a, bounds.A)
    sigma = sigma_factor * crit.sigma_c
    if law is None:
        law = TransformationLaw.uniform(action)
    s = sample_observations(t0, sigma, law, noise, I, seed, action)
    lam = lambda_t0(t0, s, action).value
    f0 = prevariance_terms(t0, s, action)
    f1 = prevariance_terms(lam * t0, s, action)
    d = f0 - f1
    se = float(np.std(d, ddof=1) / np.sqrt(len(d)))
    return InconsistencyRealization(sigma, crit.sigma_c, lam, float(f0.mean()), float(f1.mean()),
                                    float(d.mean()), se, bounds, th.estimate)


def prevariance_asymmetry(a, b, action: FiniteAction) -> float:
    """``|inf_g ||g.a - b|| - inf_g ||g.b - a|||``."""
    a = as_vector(a, action.dimension)
    b = as_vector(b, action.dimension)
    d_ab = float(np.min(row_distances(b, action.orbit_matrix(a))))
    d_ba = float(np.min(row_distances(a, action.orbit_matrix(b))))
    return abs(d_ab - d_ba)
