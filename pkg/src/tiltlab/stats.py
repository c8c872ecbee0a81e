"""Monte Carlo estimators and experiment-level statistics.

Binomial proportions carry 95% Wilson intervals throughout. Profiles use
medians, interpolated within grid cells (:func:`grid_median`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import stats as sps

from .ensemble import CeilingParams, ceiling_Cl
from .increments import resolve_model
from .oracle import ballot
from .sampler import SampleSet

__all__ = [
    "Z95",
    "wilson_interval",
    "Proportion",
    "SurvivalCurve",
    "survival_curve",
    "TailFit",
    "fit_tail_exponent",
    "BallotPoint",
    "BallotSummary",
    "ballot_sandwich",
    "drop_statistic",
    "envelope_violation",
    "grid_median",
    "StationarityProfile",
    "stationarity_profile",
    "CurveScaleProfile",
    "curve_scale_profile",
]

Z95 = float(sps.norm.ppf(0.975))
LOGLOG_CI_GATE = 0.2


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("need at least one trial")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


class Proportion(NamedTuple):
    estimate: float
    ci_lo: float
    ci_hi: float
    successes: int
    trials: int

    @classmethod
    def of(cls, successes: int, trials: int) -> "Proportion":
        lo, hi = wilson_interval(successes, trials)
        return cls(successes / trials, lo, hi, int(successes), int(trials))


@dataclass(frozen=True)
class SurvivalCurve:
    """Empirical ``P(sample > level)`` with Wilson bounds."""

    levels: np.ndarray
    probs: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    sample_count: int

    def rows(self) -> list[dict]:
        return [
            {"level": float(l), "prob": float(p), "ci_lo": float(a), "ci_hi": float(b),
             "samples": self.sample_count}
            for l, p, a, b in zip(self.levels, self.probs, self.ci_lo, self.ci_hi)
        ]


def survival_curve(samples: Iterable[float], levels: Sequence[float]) -> SurvivalCurve:
    x = np.sort(np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples,
                           dtype=float).ravel())
    if x.size == 0:
        raise ValueError("no samples")
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size == 0:
        raise ValueError("levels must be a non-empty 1-d sequence")
    if np.any(np.diff(lv) <= 0):
        raise ValueError("levels must be strictly ascending")
    above = x.size - np.searchsorted(x, lv, side="right")
    ci = np.array([wilson_interval(int(k), x.size) for k in above])
    return SurvivalCurve(lv, above / x.size, ci[:, 0], ci[:, 1], int(x.size))


class TailFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    used_levels: np.ndarray


def _loglog(p):
    return np.log(-np.log(p))


def fit_tail_exponent(curve: SurvivalCurve, gate: float = LOGLOG_CI_GATE) -> TailFit:
    """Slope of ``log(-log P)`` against ``log(level)``.

    Only levels with ``0 < P < 1``, positive level, and a Wilson interval of
    width below ``gate`` in ``log(-log)`` space enter the fit. Exact
    (zero-width) curves pass the gate trivially.
    """
    lv, p, lo, hi = curve.levels, curve.probs, curve.ci_lo, curve.ci_hi
    ok = (p > 0) & (p < 1) & (lv > 0) & (lo > 0) & (hi < 1)
    width = np.full(lv.shape, np.inf)
    # log(-log p) is decreasing in p, so the interval maps to [f(hi), f(lo)]
    width[ok] = _loglog(lo[ok]) - _loglog(hi[ok])
    use = ok & (width < gate)
    if use.sum() < 3:
        raise ValueError(f"only {int(use.sum())} usable levels; need at least 3")
    res = sps.linregress(np.log(lv[use]), _loglog(p[use]))
    return TailFit(float(res.slope), float(res.stderr), float(res.intercept), lv[use])


def exact_curve(levels, probs) -> SurvivalCurve:
    """A survival curve with known probabilities (zero-width intervals)."""
    lv = np.asarray(levels, dtype=float)
    p = np.asarray(probs, dtype=float)
    return SurvivalCurve(lv, p, p.copy(), p.copy(), 0)


class BallotPoint(NamedTuple):
    x: int
    y: int
    steps: int
    prob: float
    rho: float


class BallotSummary(NamedTuple):
    points: list
    rho_min: float
    rho_max: float
    spread: float  # rho_max / rho_min
    skipped: list


def ballot_sandwich(model, grid: Iterable[tuple[int, int, int]]) -> BallotSummary:
    """Exact ``rho = P / min(1, x y / steps)`` over a grid of ``(x, y, steps)``."""
    model = resolve_model(model)
    points, skipped = [], []
    for x, y, steps in grid:
        if not model.reachable(x, y, steps):
            skipped.append((x, y, steps, "unreachable"))
            continue
        if x * y <= 0:
            skipped.append((x, y, steps, "x y = 0, ratio undefined"))
            continue
        p = ballot(model, x, y, steps)
        points.append(BallotPoint(x, y, steps, p, p / min(1.0, x * y / steps)))
    if not points:
        raise ValueError("no reachable grid points")
    rhos = [pt.rho for pt in points]
    return BallotSummary(points, min(rhos), max(rhos), max(rhos) / min(rhos), skipped)


def _window_cols(samples: SampleSet, window: tuple[int, int]) -> slice:
    l, r = samples.interval
    a, b = int(window[0]), int(window[1])
    if a > b:
        raise ValueError("empty subwindow")
    if a < l or b > r:
        raise ValueError(f"subwindow [{a}, {b}] not inside [{l}, {r}]")
    return slice(a - l, b - l + 1)


def drop_statistic(samples: SampleSet, subwindow: tuple[int, int], threshold: float,
                   curve: int = 1) -> Proportion:
    """Fraction of samples in which ``curve`` is at or below ``threshold`` somewhere in the subwindow."""
    cols = _window_cols(samples, subwindow)
    low = samples.heights[:, curve - 1, cols].min(axis=1) * samples.grid_step
    return Proportion.of(int(np.sum(low <= threshold)), len(samples))


def envelope_violation(samples: SampleSet, j: int, K: float, params: CeilingParams,
                       centre: float | None = None, factor: float = 2.0) -> Proportion:
    """Fraction of samples where curve ``j`` exceeds ``factor * Cl_j(x)`` somewhere.

    Site ``s`` sits at ``x = s - centre`` in the ceiling's coordinates
    (``centre`` defaults to the interval midpoint).
    """
    params.check()
    l, r = samples.interval
    if centre is None:
        centre = 0.5 * (l + r)
    xs = samples.sites - centre
    if np.any(np.abs(xs) > params.half_width * (1 + 1e-12)):
        raise ValueError("ceiling ambient interval does not cover the sampled sites")
    env = factor * np.array([ceiling_Cl(j, float(x), K, params) for x in xs])
    vals = samples.heights[:, j - 1, :] * samples.grid_step
    hit = np.any(vals > env[None, :], axis=1)
    return Proportion.of(int(hit.sum()), len(samples))


def grid_median(values: np.ndarray, step: float, axis: int = 0) -> np.ndarray:
    """Interpolated median of grid-valued data.

    Each grid value ``m`` stands for the cell ``[m - step/2, m + step/2)``;
    the median is interpolated linearly inside the cell where the empirical
    CDF crosses 1/2. This removes the lattice quantization of the plain
    median while agreeing with it to within half a grid step.
    """
    x = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = x.shape[0]
    if n == 0:
        raise ValueError("no values")
    m = np.median(x, axis=0)
    # the grid cell containing the plain median; a median halfway between
    # two grid values gives the same answer from either neighbouring cell
    cell = np.floor(m / step + 0.5) * step
    below = (x < cell - 0.5 * step).sum(axis=0)
    at = (np.abs(x - cell) < 0.5 * step).sum(axis=0)
    return cell - 0.5 * step + step * (0.5 * n - below) / np.maximum(at, 1)


class StationarityProfile(NamedTuple):
    sites: np.ndarray
    medians: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    max_relative_variation: float

    def rows(self) -> list[dict]:
        return [{"site": int(s), "median": float(m), "q25": float(a), "q75": float(b)}
                for s, m, a, b in zip(self.sites, self.medians, self.q25, self.q75)]


def stationarity_profile(samples: SampleSet, bulk_window: tuple[int, int],
                         curve: int = 1) -> StationarityProfile:
    """Per-site quartiles of ``X_curve`` over a bulk window.

    The variation is ``(max median - min median) / mean median``. The window
    must stay at least a quarter of the interval away from each end.
    """
    l, r = samples.interval
    cols = _window_cols(samples, bulk_window)
    margin = (r - l) / 4.0
    if bulk_window[0] - l < margin - 1e-9 or r - bulk_window[1] < margin - 1e-9:
        raise ValueError("bulk window must stay a quarter interval away from the boundary")
    vals = samples.heights[:, curve - 1, cols] * samples.grid_step
    q25, q75 = np.percentile(vals, [25, 75], axis=0)
    med = grid_median(vals, samples.grid_step)
    centre = med.mean()
    var = (med.max() - med.min()) / centre if centre != 0 else math.inf
    return StationarityProfile(samples.sites[cols], med, q25, q75, float(var))


class CurveScaleProfile(NamedTuple):
    medians: np.ndarray
    normalized: np.ndarray

    def rows(self) -> list[dict]:
        return [{"curve": j + 1, "median": float(m), "normalized": float(z)}
                for j, (m, z) in enumerate(zip(self.medians, self.normalized))]


def curve_scale_profile(samples: SampleSet, a: float, b: float, N: float,
                        site: int | None = None) -> CurveScaleProfile:
    """Medians ``m_j`` of ``X_j(site)`` and ``m_j (a b^(j-1))^(1/3) / N^(1/3)``."""
    site = samples.midpoint if site is None else site
    n = samples.heights.shape[1]
    med = np.array([grid_median(samples.values(j, site), samples.grid_step)
                    for j in range(1, n + 1)])
    lam = a * b ** np.arange(n)
    return CurveScaleProfile(med, med * lam ** (1.0 / 3.0) / N ** (1.0 / 3.0))
