"""The verification experiments, one function per check.

Each function returns an :class:`ExperimentResult` holding a pass/fail
verdict, scalar metrics, CSV-ready tables and optional plot series. The CLI
suites and the acceptance tests both call these functions.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracle, sampler
from .ensemble import (
    CeilingParams,
    EnsembleConfig,
    EnsembleState,
    log_weight,
    make_config,
    monotone_violations,
    scales,
    shift,
    state_violations,
)
from .increments import resolve_model
from .stats import (
    Proportion,
    ballot_sandwich,
    curve_scale_profile,
    drop_statistic,
    envelope_violation,
    exact_curve,
    fit_tail_exponent,
    stationarity_profile,
    survival_curve,
)

__all__ = [
    "ExperimentResult",
    "NumericalError",
    "gibbs_experiment",
    "balance_experiment",
    "ballot_experiment",
    "tilt_experiment",
    "monotone_experiment",
    "fosd_experiment",
    "sampler_oracle_experiment",
    "shift_experiment",
    "long_run",
    "tail_run",
    "tail_experiment",
    "drop_experiment",
    "scaling_run",
    "scaling_experiment",
    "stationarity_experiment",
    "envelope_experiment",
    "concentration_experiment",
    "random_ordered_pair",
    "warm_start",
]


class NumericalError(RuntimeError):
    """A result could not be trusted numerically (e.g. truncation too coarse)."""


@dataclass
class ExperimentResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    series: dict = field(default_factory=dict)  # plot name -> {label: (xs, ys)}
    notes: list = field(default_factory=list)
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items() if _scalar(v))
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {shown}"

    def summary(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "metrics": {k: _jsonable(v) for k, v in self.metrics.items()},
            "notes": list(self.notes),
        }


def _scalar(v) -> bool:
    return isinstance(v, (bool, int, float, np.integer, np.floating))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        for r in res if isinstance(res, tuple) else (res,):
            if isinstance(r, ExperimentResult):
                r.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    wrapper.__wrapped__ = fn
    return wrapper


# -- exact-oracle experiments ------------------------------------------------------

def gibbs_instance() -> EnsembleConfig:
    return make_config(2, (0, 6), 10.0, 1.0, 2.0, [3, 1], [3, 1], floor=0.0)


@_timed
def gibbs_experiment(config: EnsembleConfig | None = None, cap: int = 6,
                     checks=None, tol: float = 1e-10) -> ExperimentResult:
    """Conditional laws against induced sub-config laws over several ``(k, J)``."""
    config = config or gibbs_instance()
    l, r = config.interval
    if checks is None:
        mid = (l + r) // 2
        checks = [(config.n, (l, r)), (1, (l + 1, r - 1)), (config.n, (l + 1, mid + 1)),
                  (1, (mid - 1, r))]
    rows = []
    for k, J in checks:
        k = min(k, config.n)
        dev = oracle.gibbs_consistency_check(config, k, J, cap)
        rows.append({"k": k, "sub_l": J[0], "sub_r": J[1], "max_tv": dev})
    worst = max(row["max_tv"] for row in rows)
    return ExperimentResult("gibbs consistency", worst < tol,
                            {"max_tv": worst, "checks": len(rows), "tol": tol}, {"gibbs": rows})


def balance_instance() -> EnsembleConfig:
    # a/N = 0.2
    return make_config(1, (0, 4), 10.0, 2.0, 1.0, [1], [1], floor=0.0)


@_timed
def balance_experiment(config: EnsembleConfig | None = None, cap: int | None = 3,
                       tol: float = 1e-12) -> ExperimentResult:
    config = config or balance_instance()
    dev = oracle.detailed_balance_check(config, cap)
    return ExperimentResult("detailed balance", dev < tol, {"max_deviation": dev, "tol": tol})


BALLOT_GRID = [(x, x, s) for x in (1, 2, 4) for s in (8, 16, 32, 64)]


@_timed
def ballot_experiment(model="lazy-srw", grid=None, max_spread: float = 10.0) -> ExperimentResult:
    """Exact ballot ratios over a grid, plus the 4-step spot value."""
    model = resolve_model(model)
    summary = ballot_sandwich(model, grid or BALLOT_GRID)
    spot = oracle.ballot(model, 1, 1, 4)
    spot_ok = spot == 69 / 70 if model.same_law(resolve_model("lazy-srw")) else True
    rows = [p._asdict() for p in summary.points]
    series = {}
    for p in summary.points:
        xs, ys = series.setdefault(f"x=y={p.x}" if p.x == p.y else f"x={p.x},y={p.y}", ([], []))
        xs.append(p.steps)
        ys.append(p.rho)
    passed = summary.spread <= max_spread and spot_ok
    return ExperimentResult(
        "ballot sandwich", passed,
        {"rho_min": summary.rho_min, "rho_max": summary.rho_max, "spread": summary.spread,
         "spot_1_1_4": spot, "spot_exact": spot_ok},
        {"ballot": rows},
        {"rho": series},
        notes=[f"skipped {s}" for s in summary.skipped],
    )


@_timed
def tilt_experiment(model="srw", y: int = 2, steps: int = 4, tol: float = 1e-12) -> ExperimentResult:
    dev = oracle.tilt_invariance_check(model, y, steps)
    return ExperimentResult("tilt invariance", dev < tol, {"tv": dev, "tol": tol})


def random_ordered_pair(rng: np.random.Generator, max_n: int = 3, lengths=(6, 12),
                        model="lazy-srw", ceiling_prob: float = 0.5):
    """A random pair ``(up, down)`` satisfying the monotone-coupling hypotheses."""
    model = resolve_model(model)
    for _ in range(1000):
        n = int(rng.integers(1, max_n + 1))
        L = int(rng.integers(lengths[0], lengths[1] + 1))
        reach = model.max_offset * L // 2

        def weyl(lo, top):
            return np.sort(rng.integers(lo, top + 1, size=n))[::-1]

        u_d, v_d = weyl(0, min(3, reach)), weyl(0, min(3, reach))
        floor_d = np.zeros(L + 1, dtype=np.int64)
        floor_u = floor_d + rng.integers(0, 2) * (rng.random(L + 1) < 0.5)
        u_u = np.maximum.accumulate((u_d + rng.integers(0, 3, size=n))[::-1])[::-1]
        v_u = np.maximum.accumulate((v_d + rng.integers(0, 3, size=n))[::-1])[::-1]
        u_u = np.maximum(u_u, floor_u[0])
        v_u = np.maximum(v_u, floor_u[-1])
        a_u = float(rng.uniform(0.0, 2.0))
        a_d = a_u + float(rng.uniform(0.0, 1.0))
        b_u = float(rng.uniform(1.0, 3.0))
        b_d = b_u + float(rng.uniform(0.0, 1.0))
        g_u = g_d = None
        if rng.random() < ceiling_prob:
            g_d = np.full(L + 1, max(u_d[0], v_d[0]) + int(rng.integers(0, 4)))
            g_u = np.maximum(g_d, max(u_u[0], v_u[0])) + rng.integers(0, 3)
        try:
            down = make_config(n, (0, L), L, a_d, b_d, u_d, v_d, floor=floor_d, ceiling=g_d, model=model)
            up = make_config(n, (0, L), L, a_u, b_u, u_u, v_u, floor=floor_u, ceiling=g_u, model=model)
        except ValueError:
            continue
        if not monotone_violations(up, down):
            return up, down
    raise RuntimeError("could not generate an ordered pair")


@_timed
def monotone_experiment(seed: int = 0, pairs: int = 20, steps: int = 100_000,
                        pair_list=None) -> ExperimentResult:
    """Coupled chains on random ordered pairs; counts ordering violations."""
    rng = np.random.default_rng(seed)
    pair_list = pair_list or [random_ordered_pair(rng) for _ in range(pairs)]
    rows, total = [], 0
    for k, (up, down) in enumerate(pair_list):
        res = sampler.coupled_run(up, down, 0, seed, chain_id=k, steps=steps, record=False)
        total += res.violation_count
        rows.append({"pair": k, "n": up.n, "length": up.length, "violations": res.violation_count,
                     "accepted_up": res.accepted_up, "accepted_down": res.accepted_down})
    return ExperimentResult("monotone coupling", total == 0,
                            {"pairs": len(pair_list), "steps_each": steps, "violations": total},
                            {"coupling": rows})


@_timed
def fosd_experiment(seed: int = 0, pairs: int = 10, pair_list=None) -> ExperimentResult:
    rng = np.random.default_rng(seed)
    pair_list = pair_list or [random_ordered_pair(rng, max_n=2, lengths=(4, 6)) for _ in range(pairs)]
    rows = []
    for k, (up, down) in enumerate(pair_list):
        holds, margin = oracle.fosd_check(up, down)
        rows.append({"pair": k, "holds": holds, "margin": margin})
    worst = min(r["margin"] for r in rows)
    return ExperimentResult("stochastic dominance", worst >= -1e-12,
                            {"pairs": len(rows), "worst_margin": worst}, {"fosd": rows})


def sampler_oracle_instance() -> EnsembleConfig:
    return make_config(2, (0, 8), 8.0, 1.0, 2.0, [3, 1], [2, 0], floor=0.0)


@_timed
def sampler_oracle_experiment(config: EnsembleConfig | None = None, seed: int = 0,
                              sweeps: int = 1_000_000, burnin: int | None = None,
                              tol: float = 0.02) -> ExperimentResult:
    """TV distance between empirical and exact one-point marginals at the midpoint."""
    config = config or sampler_oracle_instance()
    burnin = sweeps // 100 if burnin is None else burnin
    table = oracle.build_table(config)
    if table.truncation_bound > 1e-9:
        raise NumericalError(f"oracle truncation bound {table.truncation_bound:.3g} too large")
    chain = sampler.new_chain(config, seed)
    samples = sampler.run(chain, sweeps + burnin, burnin, 1)
    mid = samples.midpoint
    rows, series, worst = [], {}, 0.0
    for i in range(1, config.n + 1):
        exact = oracle.marginal(config, i, mid, table=table)
        vals = samples.values(i, mid)
        emp = np.array([np.mean(vals == h) for h in exact.heights])
        outside = 1.0 - emp.sum()
        tv = 0.5 * (np.abs(emp - exact.probs).sum() + outside)
        worst = max(worst, tv)
        for h, p, q in zip(exact.heights, exact.probs, emp):
            rows.append({"curve": i, "height": float(h), "exact": float(p), "empirical": float(q)})
        series[f"X{i} exact"] = (exact.heights.tolist(), exact.probs.tolist())
        series[f"X{i} sampled"] = (exact.heights.tolist(), emp.tolist())
    diag = sampler.diagnostics(samples)
    return ExperimentResult(
        "sampler vs oracle", worst < tol,
        {"max_tv": worst, "tol": tol, "sweeps": sweeps, "acceptance": diag.acceptance_rate,
         "tau": diag.integrated_autocorrelation_time, "ess": diag.effective_sample_size},
        {"marginals": rows},
        {"marginals": series},
    )


@_timed
def shift_experiment(seed: int = 0, pairs: int = 100, zetas=range(-3, 4),
                     config: EnsembleConfig | None = None, tol: float = 1e-12) -> ExperimentResult:
    """Log-weight differences of random state pairs under vertical shifts."""
    rng = np.random.default_rng(seed)
    config = config or make_config(2, (0, 10), 10.0, 1.5, 2.0, [3, 1], [2, 1], floor=0.0)
    draws = oracle.sample_exact(config, 2 * pairs, rng)
    worst = 0.0
    for k in range(pairs):
        s, t = EnsembleState(draws[2 * k]), EnsembleState(draws[2 * k + 1])
        base = log_weight(config, s).value - log_weight(config, t).value
        for z in zetas:
            c2, s2 = shift(config, s, z * config.grid_step)
            _, t2 = shift(config, t, z * config.grid_step)
            d = log_weight(c2, s2).value - log_weight(c2, t2).value
            worst = max(worst, abs(d - base))
    return ExperimentResult("shift invariance", worst <= tol,
                            {"pairs": pairs, "max_deviation": worst, "tol": tol})


# -- long-run experiments ----------------------------------------------------------

# default budgets, sized to finish in about 7 and 17 minutes on one laptop core
TAIL_SWEEPS = 1_500_000
SCALING_SWEEPS = 900_000


def tail_instance(N: int = 4096, lam: float = 1.0) -> EnsembleConfig:
    return make_config(1, (0, N), N, lam, 2.0, [0], [0], floor=0.0)


def warm_start(config: EnsembleConfig, seed: int) -> EnsembleState:
    """A near-equilibrium start for long runs.

    Curve ``j`` is an exact sample of the single ``lambda_j``-tilted curve
    with the same boundary data; the columns are then sorted. Pointwise order
    statistics of nearest-neighbour paths are again such paths, so the result
    is admissible whenever the increments are ``{-1, 0, 1}``-valued and no
    ceiling is set; otherwise the default start is used.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    rows = []
    for j in range(1, config.n + 1):
        single = sampler.remove_top_curves(config, j).replace(
            n=1, u=[config.u[j - 1]], v=[config.v[j - 1]])
        rows.append(oracle.sample_exact(single, 1, rng)[0, 0])
    X = np.sort(np.array(rows), axis=0)[::-1]
    state = EnsembleState(X)
    if state_violations(config, state):
        return sampler.initial_state(config)
    return state


@dataclass
class LongRun:
    config: EnsembleConfig
    samples: sampler.SampleSet
    seed: int
    sweeps: int
    burnin: int
    seconds: float = 0.0


def long_run(config: EnsembleConfig, seed: int, sweeps: int, burnin: int | None = None,
             thin: int = 1) -> LongRun:
    """One warm-started chain; ``burnin`` defaults to 20% of ``sweeps``."""
    burnin = sweeps // 5 if burnin is None else burnin
    t0 = time.perf_counter()
    chain = sampler.new_chain(config, seed, state=warm_start(config, seed))
    samples = sampler.run(chain, sweeps, burnin, thin)
    return LongRun(config, samples, seed, sweeps, burnin, time.perf_counter() - t0)


def tail_run(seed: int = 0, sweeps: int = TAIL_SWEEPS, burnin: int | None = None,
             thin: int = 50, N: int = 4096) -> LongRun:
    """Single curve, ``lambda = 1``, zero boundaries, interval length ``N``."""
    return long_run(tail_instance(N), seed, sweeps, burnin, thin)


TAIL_LEVELS = np.linspace(1.0, 3.0, 9)


def exact_tail_slope(config: EnsembleConfig, levels=TAIL_LEVELS) -> tuple[float, np.ndarray]:
    """Oracle slope of ``log(-log P(X(mid) > R H))`` for the same instance."""
    _, H = scales(config.a, config.b, 1, config.tilt_normalizer)
    mid = (config.interval[0] + config.interval[1]) // 2
    m = oracle.marginal(config, 1, mid)
    probs = np.array([m.probs[m.heights > R * H].sum() for R in levels])
    fit = fit_tail_exponent(exact_curve(levels, probs))
    return fit.slope, probs


@_timed
def tail_experiment(run: LongRun, window=(1.2, 1.8), max_stderr: float = 0.15,
                    with_oracle: bool = True) -> ExperimentResult:
    config = run.config
    _, H = scales(config.a, config.b, 1, config.tilt_normalizer)
    x = run.samples.values(1, run.samples.midpoint)
    curve = survival_curve(x / H, TAIL_LEVELS)
    metrics = {"H": H, "samples": len(x)}
    notes = []
    passed = False
    try:
        fit = fit_tail_exponent(curve)
        metrics.update(slope=fit.slope, stderr=fit.stderr, levels_used=len(fit.used_levels))
        passed = window[0] <= fit.slope <= window[1] and fit.stderr < max_stderr
    except ValueError as err:
        notes.append(f"fit failed: {err}")
    diag = sampler.diagnostics(run.samples)
    metrics.update(tau_records=diag.integrated_autocorrelation_time, ess=diag.effective_sample_size)
    series = {"survival": {"MC": (curve.levels.tolist(), curve.probs.tolist())}}
    if with_oracle:
        slope, probs = exact_tail_slope(config)
        metrics["oracle_slope"] = slope
        series["survival"]["exact"] = (TAIL_LEVELS.tolist(), probs.tolist())
    return ExperimentResult("tail exponent", passed, metrics, {"survival": curve.rows()}, series, notes)


@_timed
def drop_experiment(run: LongRun, eps: float = 0.25, A: float = 4.0,
                    min_freq: float = 0.99) -> ExperimentResult:
    """Fraction of samples dipping to ``A H`` inside the centred window of length ``eps |I|``."""
    config = run.config
    _, H = scales(config.a, config.b, 1, config.tilt_normalizer)
    l, r = config.interval
    half = eps * (r - l) / 2
    c = (l + r) / 2
    window = (math.ceil(c - half), math.floor(c + half))
    prop = drop_statistic(run.samples, window, A * H)
    return ExperimentResult(
        "dropping", prop.ci_lo >= min_freq,
        {"frequency": prop.estimate, "ci_lo": prop.ci_lo, "ci_hi": prop.ci_hi,
         "samples": prop.trials, "threshold": A * H},
    )


def scaling_instance(n: int = 4, a: float = 1.0, b: float = 4.0, N: int = 4096) -> EnsembleConfig:
    return make_config(n, (0, N), N, a, b, [0] * n, [0] * n, floor=0.0)


def scaling_run(seed: int = 0, sweeps: int = SCALING_SWEEPS, burnin: int | None = None,
                thin: int = 100, n: int = 4, N: int = 4096) -> LongRun:
    """``n`` curves, ``a = 1``, ``b = 4``, zero boundaries, interval length ``N``."""
    return long_run(scaling_instance(n=n, N=N), seed, sweeps, burnin, thin)


@_timed
def scaling_experiment(run: LongRun, max_ratio: float = 3.0) -> ExperimentResult:
    cfg = run.config
    prof = curve_scale_profile(run.samples, cfg.a, cfg.b, cfg.tilt_normalizer)
    strictly = bool(np.all(np.diff(prof.medians) < 0))
    ratio = float(prof.normalized.max() / prof.normalized.min())
    metrics = {"ratio": ratio, "strictly_ordered": strictly}
    for j, (m, z) in enumerate(zip(prof.medians, prof.normalized), 1):
        metrics[f"m{j}"] = float(m)
        metrics[f"norm{j}"] = float(z)
    return ExperimentResult("curve scales", strictly and ratio <= max_ratio, metrics,
                            {"scales": prof.rows()})


@_timed
def stationarity_experiment(run: LongRun, max_variation: float = 0.10) -> ExperimentResult:
    l, r = run.config.interval
    q = (r - l) // 4
    prof = stationarity_profile(run.samples, (l + q, r - q))
    return ExperimentResult(
        "stationarity", prof.max_relative_variation < max_variation,
        {"max_relative_variation": prof.max_relative_variation,
         "median_min": float(prof.medians.min()), "median_max": float(prof.medians.max())},
        {"profile": prof.rows()},
        {"profile": {"median": (prof.sites.tolist(), prof.medians.tolist())}},
    )


@_timed
def envelope_experiment(run: LongRun, Ks=(6, 8, 10), T: float = 10.0,
                        max_freq: float = 0.05) -> ExperimentResult:
    cfg = run.config
    l, r = cfg.interval
    params = CeilingParams.build(cfg.a, cfg.b, cfg.tilt_normalizer,
                                 [x * cfg.grid_step for x in cfg.u],
                                 [x * cfg.grid_step for x in cfg.v], (r - l) / 2, T=T)
    freqs = [envelope_violation(run.samples, 1, K, params) for K in Ks]
    nonincreasing = all(b.estimate <= a.estimate for a, b in zip(freqs, freqs[1:]))
    rows = [{"K": K, "frequency": p.estimate, "ci_lo": p.ci_lo, "ci_hi": p.ci_hi}
            for K, p in zip(Ks, freqs)]
    return ExperimentResult(
        "envelope", freqs[0].estimate < max_freq and nonincreasing,
        {"frequency_K%d" % K: p.estimate for K, p in zip(Ks, freqs)} | {"nonincreasing": nonincreasing},
        {"envelope": rows},
    )


# -- concentration of path maxima --------------------------------------------------

CONC_LEVELS = np.arange(0.25, 2.51, 0.25)


def _max_slope(levels, probs, counts, min_count: int):
    use = counts >= min_count
    if use.sum() < 3:
        raise ValueError("fewer than 3 well-populated levels")
    return float(np.polyfit(levels[use], np.log(probs[use]), 1)[0])


@_timed
def concentration_experiment(seed: int = 0, sizes=(256, 1024), samples: int = 20_000,
                             model="lazy-srw", max_slope: float = -0.5,
                             min_count: int = 20) -> ExperimentResult:
    """Survival curves of maxima of free walks and bridges, in units of ``sigma sqrt(N)``."""
    model = resolve_model(model)
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(model.variance)
    rows, series, slopes = [], {}, {}
    for N in sizes:
        scale = sigma * math.sqrt(N)
        idx = rng.choice(len(model.offsets), size=(samples, N), p=model.probs)
        walk = np.cumsum(model.values[idx], axis=1).max(axis=1)
        bcfg = make_config(1, (0, N), N, 0.0, 1.0, [0], [0], floor=None, model=model)
        bridge = oracle.sample_exact(bcfg, samples, rng)[:, 0, :].max(axis=1) * model.grid_step
        for kind, mx in (("walk", walk), ("bridge", bridge)):
            curve = survival_curve(mx / scale, CONC_LEVELS)
            counts = np.rint(curve.probs * curve.sample_count)
            slope = _max_slope(curve.levels, curve.probs, counts, min_count)
            slopes[f"{kind}_{N}"] = slope
            series[f"{kind} N={N}"] = (curve.levels.tolist(), curve.probs.tolist())
            for row in curve.rows():
                rows.append({"kind": kind, "N": N} | row)
    worst = max(slopes.values())
    return ExperimentResult("concentration", worst <= max_slope,
                            {f"slope_{k}": v for k, v in slopes.items()} | {"worst_slope": worst},
                            {"maxima": rows}, {"maxima": series})
