"""Batch experiments.  Each one writes CSV/JSON artifacts plus a manifest
into an output directory; see ``docs/formats.md``."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io as qio
from .actions import (
    AffineTranslationAction,
    ConjugatedCyclicAction,
    GroupAction,
    make_action,
)
from .bias import (
    BiasReport,
    empirical_bias,
    estimate_K,
    linearity_check,
    mean_knowing_transformations,
)
from .errors import ContractViolation
from .maxmax import (
    default_starts,
    max_max,
    multi_start,
    variance_curve,
    variance_terms,
)
from .model import (
    NoiseSpec,
    TransformationLaw,
    derive_seed,
    rng_stream,
    sample_observations,
)
from .noninvariant import (
    inconsistency_realization,
    orbit_bounds,
    sigma_c_linear,
    sigma_c_regularized,
    sigma_c_subgroup,
    theta_positivity_check,
)
from .noninvariant import affine_prevariance_minimizer

EXPERIMENTS = (
    "step_template",
    "continuous_template",
    "multi_start",
    "variance_curve",
    "k_estimate",
    "linearity",
    "sigma_c",
    "affine_consistency",
    "noninvariant_demo",
)

STEP_AMPLITUDE = 1.0
SMOOTH_COEFFS = (0.5, 0.25)  # sin(2 pi s) and cos(4 pi s)


def builtin_template(name: str, n: int) -> np.ndarray:
    """Built-in templates on ``n >= 8`` samples.

    ``step``: ``STEP_AMPLITUDE`` on the middle half of the indices
    ``[n//4, 3n//4)`` and 0 elsewhere.
    ``smooth``: ``0.5 sin(2 pi s) + 0.25 cos(4 pi s)`` at ``s = k/n``.
    """
    if n < 8:
        raise ContractViolation("built-in templates need N >= 8")
    if name == "step":
        t = np.zeros(n)
        t[n // 4: 3 * n // 4] = STEP_AMPLITUDE
        return t
    if name == "smooth":
        s = np.arange(n) / n
        a, b = SMOOTH_COEFFS
        return a * np.sin(2 * np.pi * s) + b * np.cos(4 * np.pi * s)
    raise ContractViolation(f"unknown built-in template {name!r}")


def circular_total_variation(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(np.abs(np.roll(x, -1) - x)))


@dataclass
class RunConfig:
    experiment: str
    seed: int
    out: str = "out"
    n: int = 64
    i: int = 10000
    sigma: float = 10.0
    template: str = "step"
    action: str = "cyclic_shift"
    threads: int = 1
    reps: int = 8
    n_mc: int = 20000
    start: str = "Y1"
    n_starts: int = 5
    checkpoints: list = field(default_factory=list)
    sigmas: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 10.0])
    subspace_dim: int = 2
    omega: float = 0.0
    sigma_factor: float = 2.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ContractViolation(f"unknown experiment {self.experiment!r}")
        if self.seed is None:
            raise ContractViolation("a seed is mandatory")
        for name in ("n", "i", "threads", "reps", "n_mc", "n_starts"):
            if int(getattr(self, name)) < 1:
                raise ContractViolation(f"{name} must be positive")
        if self.sigma < 0:
            raise ContractViolation("sigma must be nonnegative")
        if self.subspace_dim < 0 or self.omega < 0 or self.sigma_factor <= 0:
            raise ContractViolation("subspace_dim, omega must be >= 0 and sigma_factor > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def echo(self) -> dict:
        """Config as recorded in the manifest (without the output path)."""
        d = asdict(self)
        d.pop("out")
        return d


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def load_template(cfg: RunConfig) -> np.ndarray:
    if cfg.template in ("step", "smooth"):
        return builtin_template(cfg.template, cfg.n)
    t = qio.read_vector_csv(cfg.template)
    if t.size != cfg.n:
        raise ContractViolation(f"template file has {t.size} entries, expected N={cfg.n}")
    return t


def build_action(cfg: RunConfig) -> GroupAction:
    if cfg.action == "conjugated_cyclic":
        return ConjugatedCyclicAction.random(cfg.n, rng_stream(cfg.seed, "diag"))
    if cfg.action == "affine_translation":
        k = min(cfg.subspace_dim, cfg.n)
        if k == 0:
            return AffineTranslationAction(cfg.n)
        q, _ = np.linalg.qr(rng_stream(cfg.seed, "subspace").standard_normal((cfg.n, k)))
        return AffineTranslationAction(cfg.n, q.T)
    return make_action(cfg.action, cfg.n)


def build_law(action: GroupAction, seed: int, n_elements: int = 64) -> TransformationLaw:
    """Uniform law for finite groups; otherwise uniform over ``n_elements``
    elements drawn once from the ``"law"`` stream."""
    if action.finite:
        return TransformationLaw.uniform(action)
    rng = rng_stream(seed, "law")
    if isinstance(action, AffineTranslationAction):
        from .actions import AffineTranslation

        els = [AffineTranslation(action.basis.T @ (10.0 * rng.standard_normal(len(action.basis))))
               for _ in range(n_elements)]
    else:
        els = [action.random_element(rng) for _ in range(n_elements)]
    return TransformationLaw.custom(els, np.full(n_elements, 1.0 / n_elements))


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


def _start_point(cfg: RunConfig, sample):
    if cfg.start == "Y1":
        return None, "Y1"
    if cfg.start == "mean":
        return np.add.reduce(sample.observations, axis=0) / len(sample), "sample_mean"
    if cfg.start.startswith("Y") and cfg.start[1:].isdigit():
        k = int(cfg.start[1:])
        if not 1 <= k <= len(sample):
            raise ContractViolation(f"start {cfg.start} outside the sample")
        return sample.observations[k - 1], cfg.start
    raise ContractViolation(f"unknown start {cfg.start!r} (use Y<k> or mean)")


def _summary(out: Path, experiment: str, values: dict, name: str = "summary.json"):
    qio.write_report_json({"report_type": "ExperimentSummary",
                           "data": {"experiment": experiment, "values": values}}, out / name)


def _paired(a: np.ndarray, b: np.ndarray) -> tuple:
    d = a - b
    return float(d.mean()), float(np.std(d, ddof=1) / np.sqrt(len(d)))


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _template_run(cfg: RunConfig, out: Path, ex) -> dict:
    """Shared body of the step and continuous template experiments."""
    action = build_action(cfg)
    t0 = load_template(cfg)
    noise = NoiseSpec.gaussian(cfg.n)
    law = build_law(action, cfg.seed)
    sample = sample_observations(t0, cfg.sigma, law, noise, cfg.i, cfg.seed, action,
                                 template_id=cfg.template)
    start, sid = _start_point(cfg, sample)
    rep = max_max(sample, action, start=start, start_id=sid)
    m_hat = rep.estimate
    oracle = mean_knowing_transformations(sample, action)
    K = estimate_K(noise, action, min(cfg.i, cfg.n_mc), cfg.seed, reps=cfg.reps, executor=ex) \
        if action.isometric else None

    # fresh sample for the variance comparison, so the estimate is not judged
    # on the data that produced it
    fresh = sample_observations(t0, cfg.sigma, law, noise, cfg.i, derive_seed(cfg.seed, 1),
                                action)
    f_t0 = variance_terms(t0, fresh, action)
    f_m = variance_terms(m_hat, fresh, action)
    diff, diff_se = _paired(f_t0, f_m)

    eb = empirical_bias(t0, m_hat, action)
    eb_oracle = empirical_bias(t0, oracle, action)
    tv_ratio = circular_total_variation(m_hat) / max(circular_total_variation(t0), 1e-300)

    qio.write_vector_csv(t0, out / "template.csv")
    qio.write_vector_csv(m_hat, out / "estimate.csv")
    qio.write_vector_csv(oracle, out / "oracle_mean.csv")
    qio.write_table_csv(out / "trajectory.csv", ["iteration", "F"],
                        list(enumerate(rep.variance_trajectory)))
    qio.write_report_json(rep, out / "maxmax_report.json")
    if K is not None and cfg.sigma > 0:
        qio.write_report_json(BiasReport.build(K.value, K.std_error, cfg.sigma, t0, m_hat,
                                               action, K.method), out / "bias_report.json")
    s = max(cfg.sigma, 1e-300)
    values = {
        "EB": eb,
        "EB_over_sigma": eb / s if cfg.sigma > 0 else 0.0,
        "oracle_EB": eb_oracle,
        "oracle_EB_over_sigma": eb_oracle / s if cfg.sigma > 0 else 0.0,
        "iterations": rep.iterations,
        "karcher_verified": rep.karcher_verified,
        "F_insample_estimate": rep.variance,
        "F_heldout_t0": float(f_t0.mean()),
        "F_heldout_estimate": float(f_m.mean()),
        "F_heldout_diff": diff,
        "F_heldout_diff_se": diff_se,
        "tv_ratio": tv_ratio,
        "t0_norm": float(np.linalg.norm(t0)),
        "estimate_norm": float(np.linalg.norm(m_hat)),
    }
    if K is not None:
        values.update(K=K.value, K_std_error=K.std_error)
    _summary(out, cfg.experiment, values)
    return values


def run_step_template(cfg, out, ex):
    return _template_run(cfg, out, ex)


def run_continuous_template(cfg, out, ex):
    return _template_run(cfg, out, ex)


def run_multi_start(cfg, out, ex):
    action = build_action(cfg)
    t0 = load_template(cfg)
    sample = sample_observations(t0, cfg.sigma, build_law(action, cfg.seed),
                                 NoiseSpec.gaussian(cfg.n), cfg.i, cfg.seed, action,
                                 template_id=cfg.template)
    res = multi_start(sample, action, default_starts(sample, cfg.n_starts), executor=ex)
    f_t0 = float(variance_terms(t0, sample, action).mean())
    rows = []
    for sid, m, F, rep in res:
        rows.append((sid, F, empirical_bias(t0, m, action), float(np.linalg.norm(m)),
                     rep.iterations, rep.karcher_verified))
        qio.write_vector_csv(m, out / f"estimate_{sid}.csv")
    qio.write_table_csv(out / "multi_start.csv",
                        ["start_id", "F", "EB", "norm", "iterations", "karcher_verified"], rows,
                        meta={"F_t0": f_t0})
    values = {"F_t0": f_t0, "F_best": res[0][2], "best_start": res[0][0],
              "all_below_template": bool(all(r[2] < f_t0 for r in res))}
    _summary(out, cfg.experiment, values)
    return values


def _default_checkpoints(I: int) -> list:
    cps = sorted({int(round(x)) for x in np.geomspace(1, I, 25)} | {I})
    return [c for c in cps if c >= 1]


def run_variance_curve(cfg, out, ex):
    action = build_action(cfg)
    t0 = load_template(cfg)
    sample = sample_observations(t0, cfg.sigma, build_law(action, cfg.seed),
                                 NoiseSpec.gaussian(cfg.n), cfg.i, cfg.seed, action,
                                 template_id=cfg.template)
    start, sid = _start_point(cfg, sample)
    m_hat = max_max(sample, action, start=start, start_id=sid).estimate
    cps = cfg.checkpoints or _default_checkpoints(cfg.i)
    c_t0 = variance_curve(t0, sample, action, cps)
    c_m = variance_curve(m_hat, sample, action, cps)
    rows = [(a, fa, fb) for (a, fa), (_, fb) in zip(c_t0.checkpoints, c_m.checkpoints)]
    qio.write_table_csv(out / "variance_curve.csv", ["I", "F_t0", "F_estimate"], rows)
    qio.write_vector_csv(m_hat, out / "estimate.csv")
    values = {"F_t0_final": rows[-1][1], "F_estimate_final": rows[-1][2]}
    _summary(out, cfg.experiment, values)
    return values


def run_k_estimate(cfg, out, ex):
    action = build_action(cfg)
    noise = NoiseSpec.gaussian(cfg.n)
    K = estimate_K(noise, action, cfg.n_mc, cfg.seed, reps=cfg.reps, cross_check=True,
                   executor=ex)
    qio.write_table_csv(out / "k_reps.csv", ["rep", "heldout_score"], list(enumerate(K.per_rep)))
    values = {"K": K.value, "K_std_error": K.std_error, "method": K.method,
              "plugin_norm": K.plugin, "plugin_std_error": K.plugin_std_error,
              "sphere_search": K.sphere_search, "sphere_search_std_error":
              K.sphere_search_std_error, "reps": K.reps, "n_mc": K.n_mc}
    if cfg.sigma > 0:
        values["cb_at_sigma"] = cfg.sigma * K.value
    _summary(out, cfg.experiment, values)
    return values


def run_linearity(cfg, out, ex):
    action = build_action(cfg)
    t0 = load_template(cfg)
    noise = NoiseSpec.gaussian(cfg.n)
    res = linearity_check(t0, noise, action, cfg.sigmas, cfg.i, cfg.seed, reps=cfg.reps,
                          law=build_law(action, cfg.seed), executor=ex)
    qio.write_table_csv(out / "linearity.csv", ["sigma", "EB", "K", "lower", "upper"],
                        res.csv_rows())
    lo, hi = res.envelope_slopes()
    values = {"slope": res.slope, "K": res.K, "K_std_error": res.K_std_error,
              "envelope_slope_low": lo, "envelope_slope_high": hi,
              "EB_over_sigma": [r.ratio for r in res.rows],
              "EB_std_error": [r.EB_std_error for r in res.rows]}
    _summary(out, cfg.experiment, values)
    return values


def run_sigma_c(cfg, out, ex):
    t0 = load_template(cfg)
    action = build_action(cfg) if cfg.action == "conjugated_cyclic" else \
        ConjugatedCyclicAction.random(cfg.n, rng_stream(cfg.seed, "diag"))
    noise = NoiseSpec.gaussian(cfg.n)
    b = orbit_bounds(t0, action)
    th = theta_positivity_check(t0, noise, action, cfg.n_mc, cfg.seed)
    lin = sigma_c_linear(b.t0_norm, th.estimate, b.a, b.A)
    reg = sigma_c_regularized(b.t0_norm, th.estimate, b.a, b.A, cfg.omega)
    # the plain cyclic group is an isometric subgroup candidate only in the
    # degenerate case D = identity; evaluate the formula with theta_H = theta(t0)
    sub = sigma_c_subgroup(b.t0_norm, th.estimate, th.estimate, b.a, b.A)
    qio.write_report_json(lin, out / "sigma_c_linear.json")
    qio.write_report_json(reg, out / "sigma_c_regularized.json")
    qio.write_report_json(sub, out / "sigma_c_subgroup.json")
    values = {"a": b.a, "A": b.A, "theta_t0": th.estimate, "theta_t0_se": th.std_error,
              "sigma_c_linear": lin.sigma_c, "sigma_c_regularized": reg.sigma_c,
              "sigma_c_subgroup": sub.sigma_c}
    _summary(out, cfg.experiment, values)
    return values


def run_affine_consistency(cfg, out, ex):
    action = build_action(cfg) if cfg.action == "affine_translation" else \
        build_action(RunConfig(**{**asdict(cfg), "action": "affine_translation"}))
    t0 = load_template(cfg)
    sample = sample_observations(t0, cfg.sigma, build_law(action, cfg.seed),
                                 NoiseSpec.gaussian(cfg.n), cfg.i, cfg.seed, action,
                                 template_id=cfg.template)
    m_hat = affine_prevariance_minimizer(sample, action.basis)
    d = empirical_bias(t0, m_hat, action)
    qio.write_vector_csv(m_hat, out / "estimate.csv")
    bound = 4 * cfg.sigma / np.sqrt(cfg.i)
    values = {"dQ": d, "bound_4sigma_over_sqrtI": bound, "below_bound": bool(d < bound),
              "subspace_dim": len(action.basis)}
    _summary(out, cfg.experiment, values)
    return values


def run_noninvariant_demo(cfg, out, ex):
    t0 = load_template(cfg)
    action = ConjugatedCyclicAction.random(cfg.n, rng_stream(cfg.seed, "diag"))
    r = inconsistency_realization(t0, action, NoiseSpec.gaussian(cfg.n), cfg.i, cfg.seed,
                                  sigma_factor=cfg.sigma_factor, n_mc=cfg.n_mc)
    qio.write_table_csv(out / "inconsistency.csv", ["sigma", "F_t0", "F_lambda_t0", "SE"],
                        [r.csv_row()])
    values = {"sigma": r.sigma, "sigma_c": r.sigma_c, "lambda": r.lam, "a": r.bounds.a,
              "A": r.bounds.A, "theta_t0": r.theta_t0, "diff_mean": r.diff_mean,
              "diff_se": r.diff_se, "realized": r.realized}
    _summary(out, cfg.experiment, values)
    return values


RUNNERS = {name: globals()[f"run_{name}"] for name in EXPERIMENTS}


def run(cfg: RunConfig) -> dict:
    """Run one experiment and write its artifacts and manifest."""
    out = qio.ensure_dir(cfg.out)
    t_start = time.perf_counter()
    with _executor(cfg.threads) as ex:
        values = RUNNERS[cfg.experiment](cfg, out, ex)
    qio.write_manifest(out, cfg.echo(), __version__, time.perf_counter() - t_start)
    return values
