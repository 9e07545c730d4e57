"""Consistency bias: the constant K, its bounds and the empirical bias."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .actions import GroupAction, as_vector
from .errors import ContractViolation, UnsupportedAction
from .maxmax import max_max
from .model import NoiseSpec, ObservationSample, derive_seed, rng_stream
from .quotient import quotient_distance

DEFAULT_REPS = 8


def chi_mean(n: int) -> float:
    """``E||z||`` for ``z ~ N(0, I_n / n)``, i.e. ``sqrt(2/n) Gamma((n+1)/2) / Gamma(n/2)``."""
    return math.sqrt(2.0 / n) * math.exp(math.lgamma((n + 1) / 2) - math.lgamma(n / 2))


@dataclass
class KEstimate:
    """Estimate of K over ``reps`` independent repetitions.

    ``value`` is the held-out registration score of the direction found by
    max-max on pure noise; ``plugin`` is the in-sample norm ``||m_hat||``,
    which overshoots K by a term of order ``1/sqrt(n_mc)``.
    """

    value: float
    std_error: float
    method: str
    reps: int
    n_mc: int
    plugin: float
    plugin_std_error: float
    per_rep: list = field(default_factory=list, repr=False)
    direction: np.ndarray | None = field(default=None, repr=False)
    sphere_search: float | None = None
    sphere_search_std_error: float | None = None

    def __iter__(self):
        # allows ``K, se = estimate_K(...)``
        return iter((self.value, self.std_error))


def _mean_se(values) -> tuple:
    values = np.asarray(values, dtype=np.float64)
    se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(np.mean(values)), se


def _unit_or_first_axis(m: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(m)
    if nrm == 0.0:
        v = np.zeros_like(m)
        v[0] = 1.0
        return v
    return m / nrm


def _k_rep(noise: NoiseSpec, action: GroupAction, n_mc: int, seed: int, rep: int):
    train = noise.sample(rng_stream(seed, "k_train", rep), n_mc)
    m_hat = max_max(train, action).estimate
    v = _unit_or_first_axis(m_hat)
    test = noise.sample(rng_stream(seed, "k_test", rep), n_mc)
    return float(np.mean(action.sup_inner(v, test))), float(np.linalg.norm(m_hat)), v


def estimate_K(noise: NoiseSpec, action: GroupAction, n_mc: int, seed: int,
               reps: int = DEFAULT_REPS, cross_check: bool = False,
               n_candidates: int = 16, executor=None) -> KEstimate:
    """Estimate ``K = sup_{|v|=1} E sup_g <v, g.eps>``.

    Each repetition runs max-max on ``n_mc`` pure-noise draws; the norm of
    the result is the plug-in value of K and its direction ``v`` is then
    scored on ``n_mc`` fresh draws.  The reported value is the mean of the
    held-out scores, with the standard error taken across repetitions.

    With ``cross_check`` the best of ``theta(v)`` over the normalised first
    observations of a noise draw and the max-max directions is reported in
    ``sphere_search``.
    """
    if not action.isometric:
        raise UnsupportedAction("K is defined for isometric actions")
    if noise.dimension != action.dimension:
        raise ContractViolation("noise dimension does not match the action")
    noise.check()
    n_mc, reps = int(n_mc), int(reps)
    if n_mc < 1 or reps < 1:
        raise ContractViolation("n_mc and reps must be >= 1")

    def run(rep):
        return _k_rep(noise, action, n_mc, seed, rep)

    rows = list(executor.map(run, range(reps))) if executor is not None else [run(r) for r in range(reps)]
    held = [r[0] for r in rows]
    plug = [r[1] for r in rows]
    value, se = _mean_se(held)
    p_value, p_se = _mean_se(plug)
    est = KEstimate(value, se, "maxmax_on_noise", reps, n_mc, p_value, p_se, held, rows[0][2])
    if cross_check:
        est.sphere_search, est.sphere_search_std_error = sphere_search_K(
            noise, action, n_mc, seed, extra_directions=[r[2] for r in rows],
            n_candidates=n_candidates)
    return est


def sphere_search_K(noise: NoiseSpec, action: GroupAction, n_mc: int, seed: int,
                    extra_directions=(), n_candidates: int = 16) -> tuple:
    """Max over candidate unit directions of a Monte-Carlo ``theta(v)``.

    Candidates are normalised noise draws plus ``extra_directions``; every
    candidate is scored on the same fresh draws.  Returns ``(value, se)``
    of the winning direction.
    """
    cands = noise.sample(rng_stream(seed, "k_candidates"), int(n_candidates))
    cands = [c for c in cands if np.linalg.norm(c) > 0] + list(extra_directions)
    if not cands:
        raise ContractViolation("no usable candidate direction")
    E = noise.sample(rng_stream(seed, "k_sphere"), int(n_mc))
    best = (-np.inf, 0.0)
    for c in cands:
        vals = action.sup_inner(_unit_or_first_axis(np.asarray(c)), E)
        m, s = _mean_se(vals)
        if m > best[0]:
            best = (m, s)
    return best


def cb_bounds(sigma: float, t0_norm: float, K: float) -> tuple:
    """``(sigma K - 2|t0|, sigma K + 2|t0|)``."""
    if sigma < 0 or t0_norm < 0 or K < 0:
        raise ContractViolation("sigma, |t0| and K must be nonnegative")
    return sigma * K - 2.0 * t0_norm, sigma * K + 2.0 * t0_norm


def clamp_lower(lower: float) -> float:
    return max(0.0, lower)


def empirical_bias(t0, m_hat, action: GroupAction, sigma: float | None = None):
    """Quotient distance between the template and the estimate.

    Returns ``EB``, or ``(EB, EB / sigma)`` when ``sigma > 0`` is given.
    """
    eb = quotient_distance(t0, m_hat, action).distance
    if sigma is None:
        return eb
    if sigma <= 0:
        raise ContractViolation("sigma must be positive to normalise the bias")
    return eb, eb / sigma


def rotation_bias_closed_form(t0, sample: ObservationSample) -> float:
    """``|mean_i ||Y_i|| - ||t0|||``: bias of the norm section for rotations."""
    t0 = as_vector(t0)
    Y = sample.observations if isinstance(sample, ObservationSample) else np.atleast_2d(sample)
    if Y.shape[1] != t0.size:
        raise ContractViolation("dimension mismatch")
    return float(abs(np.mean(np.linalg.norm(Y, axis=1)) - np.linalg.norm(t0)))


def mean_knowing_transformations(sample: ObservationSample, action: GroupAction,
                                 true_transforms=None) -> np.ndarray:
    """``(1/I) sum_i Phi_i^{-1} . Y_i`` using the generating transformations."""
    if true_transforms is None:
        true_transforms = sample.true_transforms()
    Y = sample.observations
    if len(true_transforms) != len(Y):
        raise ContractViolation("one transformation per observation is required")
    inv = {}
    rows = np.empty_like(Y)
    for i, (g, y) in enumerate(zip(true_transforms, Y)):
        key = id(g)
        if key not in inv:
            inv[key] = action.inverse(g)
        rows[i] = action.apply(inv[key], y)
    return np.add.reduce(rows, axis=0) / len(Y)


@dataclass
class BiasReport:
    K_estimate: float
    K_std_error: float
    sigma: float
    t0_norm: float
    cb_lower: float
    cb_upper: float
    EB: float
    EB_over_sigma: float
    method: str

    def __post_init__(self):
        if self.cb_lower > self.cb_upper:
            raise ContractViolation("cb_lower exceeds cb_upper")
        if self.EB < 0:
            raise ContractViolation("EB must be nonnegative")

    @classmethod
    def build(cls, K: float, K_se: float, sigma: float, t0, m_hat, action, method: str):
        t0 = as_vector(t0, action.dimension)
        lo, hi = cb_bounds(sigma, float(np.linalg.norm(t0)), max(K, 0.0))
        eb = empirical_bias(t0, m_hat, action)
        return cls(K, K_se, sigma, float(np.linalg.norm(t0)), lo, hi, eb,
                   eb / sigma if sigma > 0 else 0.0, method)

    def in_envelope(self, slack: float = 0.0) -> bool:
        return clamp_lower(self.cb_lower) - slack <= self.EB <= self.cb_upper + slack

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "K_estimate", "K_std_error", "sigma", "t0_norm", "cb_lower", "cb_upper",
            "EB", "EB_over_sigma", "method")}


@dataclass
class LinearityRow:
    sigma: float
    EB: float
    EB_std_error: float
    K: float
    lower: float
    upper: float
    per_rep: list = field(default_factory=list, repr=False)

    @property
    def ratio(self) -> float:
        return self.EB / self.sigma


@dataclass
class LinearityResult:
    rows: list
    slope: float
    K: float
    K_std_error: float
    t0_norm: float

    def envelope_slopes(self) -> tuple:
        s_max = max(r.sigma for r in self.rows)
        return self.K - 2 * self.t0_norm / s_max, self.K + 2 * self.t0_norm / s_max

    def csv_rows(self) -> list:
        return [(r.sigma, r.EB, r.K, r.lower, r.upper) for r in self.rows]


def linearity_check(t0, noise: NoiseSpec, action: GroupAction, sigmas, I: int, seed: int,
                    reps: int = DEFAULT_REPS, law=None, K=None, n_fit: int = 2,
                    executor=None) -> LinearityResult:
    """Empirical bias ``EB(sigma)`` for a fixed template across noise levels.

    Each ``(sigma, rep)`` pair draws an independent sample (seeded by the
    position of ``sigma`` in the list and the repetition) and runs max-max
    from its first observation.  The slope is the least-squares slope of EB
    against sigma over the ``n_fit`` largest sigmas.  ``K`` may be passed as
    ``(value, se)``; otherwise it is estimated with ``I`` noise draws.
    """
    from .model import TransformationLaw, sample_observations

    t0 = as_vector(t0, action.dimension)
    sigmas = [float(s) for s in sigmas]
    if any(s <= 0 for s in sigmas):
        raise ContractViolation("sigmas must be positive")
    if law is None:
        law = TransformationLaw.uniform(action)
    if K is None:
        K = estimate_K(noise, action, I, seed, reps=reps, executor=executor)
    K_val, K_se = tuple(K)

    def run(job):
        j, rep = job
        s = sample_observations(t0, sigmas[j], law, noise, I, seed=derive_seed(seed, j, rep),
                                action=action)
        return empirical_bias(t0, max_max(s, action).estimate, action)

    jobs = [(j, r) for j in range(len(sigmas)) for r in range(reps)]
    ebs = list(executor.map(run, jobs)) if executor is not None else [run(jb) for jb in jobs]
    rows = []
    for j, s in enumerate(sigmas):
        vals = ebs[j * reps:(j + 1) * reps]
        m, se = _mean_se(vals)
        lo, hi = cb_bounds(s, float(np.linalg.norm(t0)), max(K_val, 0.0))
        rows.append(LinearityRow(s, m, se, K_val, lo, hi, list(vals)))
    top = sorted(rows, key=lambda r: r.sigma)[-max(2, n_fit):]
    xs = np.array([r.sigma for r in top])
    ys = np.array([r.EB for r in top])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return LinearityResult(rows, slope, K_val, K_se, float(np.linalg.norm(t0)))

