"""Empirical variance in the quotient and the max-max algorithm.

The max-max iteration alternates two exact minimisations of
``J(m, g) = (1/I) sum_i ||m - g_i . Y_i||^2``: registration of every
observation onto the current point, then averaging of the registered
observations.  For finite groups it stops as soon as the assignment vector
repeats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .actions import CyclicShiftAction, FiniteAction, GroupAction, as_vector
from .errors import CapacityError, ContractViolation, NonTerminationError
from .model import ObservationSample

BRUTE_FORCE_LIMIT = 10**6
DESCENT_SLACK = 1e-9
# stopping rule for actions without discrete assignments
CONTINUOUS_STOP_RTOL = 1e-12


def _observations(sample) -> np.ndarray:
    Y = sample.observations if isinstance(sample, ObservationSample) else sample
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape[0] == 0:
        raise ContractViolation("empty sample")
    return Y


class _Registrar:
    """Registers a fixed set of observations onto moving points, caching
    the Fourier transform of the observations for the cyclic action."""

    def __init__(self, action: GroupAction, Y: np.ndarray):
        if Y.shape[1] != action.dimension:
            raise ContractViolation("sample dimension does not match the action")
        self.action = action
        self.Y = Y
        self._Y_hat = np.fft.rfft(Y, axis=1) if isinstance(action, CyclicShiftAction) else None

    def __call__(self, m):
        if self._Y_hat is not None:
            return self.action.register_batch(m, self.Y, self._Y_hat)
        return self.action.register_batch(m, self.Y)


def _average(registered: np.ndarray) -> np.ndarray:
    # rows are accumulated in index order
    return np.add.reduce(registered, axis=0) / registered.shape[0]


def empirical_variance(x, sample, action: GroupAction) -> float:
    """``F_I(x) = (1/I) sum_i min_g ||x - g.Y_i||^2``."""
    Y = _observations(sample)
    x = as_vector(x, action.dimension)
    d = _Registrar(action, Y)(x).distances
    return float(np.mean(d * d))


def variance_terms(x, sample, action: GroupAction) -> np.ndarray:
    """Per-observation squared quotient distances ``min_g ||x - g.Y_i||^2``."""
    Y = _observations(sample)
    d = _Registrar(action, Y)(as_vector(x, action.dimension)).distances
    return d * d


@dataclass
class MaxMaxReport:
    estimate: np.ndarray
    iterations: int
    variance_trajectory: list
    assignments_final: np.ndarray | None
    karcher_verified: bool
    start_id: str = "Y1"
    elements_final: list = field(default_factory=list, repr=False)

    @property
    def variance(self) -> float:
        return self.variance_trajectory[-1]

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "iterations": int(self.iterations),
            "variance_trajectory": [float(v) for v in self.variance_trajectory],
            "assignments_final": (None if self.assignments_final is None
                                  else [int(k) for k in self.assignments_final]),
            "karcher_verified": bool(self.karcher_verified),
            "start_id": self.start_id,
        }


def iteration_cap(I: int) -> int:
    return 10 * int(I) + 1000


def max_max(sample, action: GroupAction, start=None, start_id: str | None = None,
            max_iter: int | None = None) -> MaxMaxReport:
    """Run the max-max algorithm from ``start`` (default: the first observation).

    ``iterations`` counts averaging steps.  The run stops when re-registering
    onto the new point reproduces the previous assignments; for actions
    without a finite element list it stops when the point stops moving.
    """
    Y = _observations(sample)
    I = len(Y)
    if start is None:
        m = Y[0].copy()
        start_id = start_id or "Y1"
    else:
        m = as_vector(start, action.dimension).copy()
        start_id = start_id or "custom"
    cap = iteration_cap(I) if max_iter is None else int(max_iter)
    reg_fn = _Registrar(action, Y)

    reg = reg_fn(m)
    trajectory = [float(np.mean(reg.distances**2))]
    iterations = 0
    while True:
        if iterations >= cap:
            raise NonTerminationError(f"max-max did not stabilise within {cap} iterations")
        m_new = _average(reg.registered)
        iterations += 1
        new_reg = reg_fn(m_new)
        trajectory.append(float(np.mean(new_reg.distances**2)))
        if reg.indices is not None:
            done = np.array_equal(new_reg.indices, reg.indices)
        else:
            step = np.linalg.norm(m_new - m)
            done = step <= CONTINUOUS_STOP_RTOL * max(1.0, np.linalg.norm(m))
        m, reg = m_new, new_reg
        if done:
            break

    elements = []
    if reg.indices is not None and isinstance(action, FiniteAction):
        els = action.elements()
        elements = [els[k] for k in reg.indices]
    return MaxMaxReport(
        estimate=m,
        iterations=iterations,
        variance_trajectory=trajectory,
        assignments_final=None if reg.indices is None else reg.indices.copy(),
        karcher_verified=bool(np.all(reg.unique)),
        start_id=start_id,
        elements_final=elements,
    )


def max_max_step(m, sample, action: GroupAction) -> np.ndarray:
    """One registration + averaging step from ``m``."""
    Y = _observations(sample)
    return _average(_Registrar(action, Y)(as_vector(m, action.dimension)).registered)


def gradient_step(m, sample, action: GroupAction, rho: float = 0.5) -> np.ndarray:
    """``m - rho * grad F_I(m)`` with ``grad F_I(m) = 2 (m - mean_i g(Y_i, m) . Y_i)``.

    Valid where every registration onto ``m`` is unique.
    """
    m = as_vector(m, action.dimension)
    mean = max_max_step(m, sample, action)
    return m - rho * 2.0 * (m - mean)


def karcher_check(m_hat, sample, action: GroupAction) -> bool:
    """True iff every observation registers uniquely onto ``m_hat``."""
    Y = _observations(sample)
    return bool(np.all(_Registrar(action, Y)(as_vector(m_hat, action.dimension)).unique))


def default_starts(sample, k: int = 5) -> list:
    """``[(id, point)]``: the first ``k`` observations and the sample mean."""
    Y = _observations(sample)
    starts = [(f"Y{i + 1}", Y[i].copy()) for i in range(min(k, len(Y)))]
    starts.append(("sample_mean", _average(Y)))
    return starts


def multi_start(sample, action: GroupAction, starts=None, executor=None) -> list:
    """Independent max-max runs sorted by final variance.

    ``starts`` is a list of points or of ``(id, point)`` pairs.  Returns a
    list of ``(start_id, m_hat, F_I(m_hat), report)``.
    """
    if starts is None:
        starts = default_starts(sample)
    if len(starts) == 0:
        raise ContractViolation("multi_start needs at least one start")
    pairs = []
    for j, s in enumerate(starts):
        if isinstance(s, tuple) and len(s) == 2 and isinstance(s[0], str):
            pairs.append(s)
        else:
            pairs.append((f"start{j}", s))

    def run(pair):
        sid, point = pair
        return max_max(sample, action, start=point, start_id=sid)

    reports = list(executor.map(run, pairs)) if executor is not None else [run(p) for p in pairs]
    out = [(r.start_id, r.estimate, r.variance, r) for r in reports]
    # stable sort keeps the input order among equal variances
    return sorted(out, key=lambda t: t[2])


@dataclass
class VarianceCurve:
    checkpoints: list

    def sizes(self) -> np.ndarray:
        return np.array([c[0] for c in self.checkpoints], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([c[1] for c in self.checkpoints])


def variance_curve(x, sample, action: GroupAction, checkpoints) -> VarianceCurve:
    """``F_{I_k}(x)`` on the prefixes of length ``I_k`` of the sample."""
    Y = _observations(sample)
    cps = [int(c) for c in checkpoints]
    if not cps:
        raise ContractViolation("no checkpoints")
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ContractViolation("checkpoints must be strictly increasing")
    if cps[0] < 1 or cps[-1] > len(Y):
        raise ContractViolation(f"checkpoints must lie in [1, {len(Y)}]")
    d2 = variance_terms(x, Y, action)
    csum = np.cumsum(d2)
    return VarianceCurve([(c, float(csum[c - 1] / c)) for c in cps])


def brute_force_frechet(sample, action: FiniteAction, limit: int = BRUTE_FORCE_LIMIT) -> np.ndarray:
    """Global minimiser of ``F_I`` over the candidate means
    ``(1/I) sum_i g_i . Y_i``.

    The first observation's element is pinned to the identity (the other
    choices give orbit copies of the same candidates).  The winner is then
    polished by max-max so that it is a fixed point of the averaging step
    computed with the same arithmetic as :func:`max_max`.
    """
    if not getattr(action, "finite", False):
        raise CapacityError("brute force needs a finite group")
    Y = _observations(sample)
    I = len(Y)
    G = action.order
    if G**I > limit:
        raise CapacityError(f"{G}^{I} assignments exceed the limit {limit}")
    orbits = np.stack([action.orbit_matrix(y) for y in Y])  # (I, G, N)
    best, best_F = None, np.inf
    for combo in itertools.product(range(G), repeat=I - 1):
        idx = (0,) + combo
        cand = _average(orbits[np.arange(I), idx])
        diff = orbits - cand
        F = float(np.mean(np.min(np.sum(diff * diff, axis=2), axis=1)))
        if F < best_F:
            best, best_F = cand, F
    return max_max(Y, action, start=best, start_id="brute_force").estimate
