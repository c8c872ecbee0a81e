"""Area-tilted line ensembles: configurations, states and deterministic functionals.

Heights are stored in integer grid units of the increment model; ``grid_step``
converts them to height units. Curves are indexed ``1..n`` from the top and
sites by their absolute position in the interval ``[l, r]``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .increments import IncrementModel, model_to_json, resolve_model

# sentinels for absent floors/ceilings, far from any reachable height
NO_FLOOR = -(1 << 60)
NO_CEILING = 1 << 60

__all__ = [
    "NO_FLOOR",
    "NO_CEILING",
    "EnsembleConfig",
    "EnsembleState",
    "LogWeight",
    "make_config",
    "to_units",
    "area",
    "log_weight",
    "batch_log_weight",
    "state_violations",
    "shift",
    "scales",
    "epsilon_j",
    "CeilingParams",
    "ceiling_Cl",
    "RescaledCurves",
    "rescale",
    "modulus",
    "monotone_violations",
    "config_to_json",
    "config_hash",
]


def to_units(value: float, grid_step: float, what: str = "height") -> int:
    """Convert a height to grid units, rejecting off-grid values."""
    q = value / grid_step
    k = round(q)
    if abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise ValueError(f"{what} {value} is not a multiple of the grid step {grid_step}")
    return int(k)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EnsembleConfig:
    """Full description of a tilted non-crossing bridge measure.

    Boundary vectors, floor and ceiling are in grid units; ``floor`` and
    ``ceiling`` are per-site tables over ``l..r`` using ``NO_FLOOR`` /
    ``NO_CEILING`` where absent. Use :func:`make_config` to build one from
    height-unit inputs.
    """

    n: int
    interval: tuple[int, int]
    tilt_normalizer: float
    a: float
    b: float
    u: tuple[int, ...]
    v: tuple[int, ...]
    floor: np.ndarray
    ceiling: np.ndarray | None
    model: IncrementModel

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid ensemble config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        l, r = self.interval
        if self.n < 1:
            out.append("n must be >= 1")
        if not l < r:
            out.append(f"interval [{l}, {r}] must have l < r")
            return out
        if not self.tilt_normalizer > 0:
            out.append("tilt_normalizer must be positive")
        if not (self.a >= 0 and math.isfinite(self.a)):
            out.append("a must be finite and >= 0")
        if not (self.b >= 1 and math.isfinite(self.b)):
            out.append("b must be finite and >= 1")
        if len(self.u) != self.n or len(self.v) != self.n:
            out.append("u and v must have length n")
            return out
        if self.floor.shape != (r - l + 1,):
            out.append("floor table must cover the interval")
            return out
        if self.ceiling is not None and self.ceiling.shape != (r - l + 1,):
            out.append("ceiling table must cover the interval")
            return out
        for name, vec, h in (("u", self.u, self.floor[0]), ("v", self.v, self.floor[-1])):
            if any(x < y for x, y in zip(vec, vec[1:])):
                out.append(f"{name} is not Weyl-ordered (decreasing)")
            if vec[-1] < h:
                out.append(f"{name} lies below the floor")
        steps = r - l
        for i, (ui, vi) in enumerate(zip(self.u, self.v), 1):
            if not self.model.reachable(ui, vi, steps):
                out.append(f"curve {i}: v unreachable from u in {steps} steps")
        if self.ceiling is not None:
            g = self.ceiling
            if g[0] < self.u[0] or g[-1] < self.v[0]:
                out.append("ceiling lies below the top boundary value")
            if np.any(g < self.floor):
                out.append("ceiling lies below the floor")
        return out

    @property
    def length(self) -> int:
        """Number of steps ``r - l``."""
        return self.interval[1] - self.interval[0]

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.interval[0], self.interval[1] + 1)

    @property
    def grid_step(self) -> float:
        return self.model.grid_step

    @property
    def tilt_coefficients(self) -> np.ndarray:
        """Per-curve area coefficient ``(a/N) * b**(i-1)`` in height units."""
        return self.a / self.tilt_normalizer * self.b ** np.arange(self.n)

    @property
    def ceiling_table(self) -> np.ndarray:
        if self.ceiling is None:
            return np.full(self.length + 1, NO_CEILING, dtype=np.int64)
        return self.ceiling

    def replace(self, **changes) -> "EnsembleConfig":
        fields = dict(
            n=self.n, interval=self.interval, tilt_normalizer=self.tilt_normalizer,
            a=self.a, b=self.b, u=self.u, v=self.v, floor=self.floor,
            ceiling=self.ceiling, model=self.model,
        )
        fields.update(changes)
        fields["floor"] = _readonly(np.array(fields["floor"], dtype=np.int64))
        if fields["ceiling"] is not None:
            fields["ceiling"] = _readonly(np.array(fields["ceiling"], dtype=np.int64))
        fields["u"] = tuple(int(x) for x in fields["u"])
        fields["v"] = tuple(int(x) for x in fields["v"])
        return EnsembleConfig(**fields)


def _site_table(spec, length: int, grid_step: float, absent: int, what: str) -> np.ndarray | None:
    if spec is None:
        return None if absent == NO_CEILING else np.full(length, NO_FLOOR, dtype=np.int64)
    if isinstance(spec, dict):
        if set(spec) == {"const"}:
            spec = spec["const"]
        elif set(spec) == {"table"}:
            spec = spec["table"]
        else:
            raise ValueError(f"{what} must be {{'const': c}} or {{'table': [...]}}")
    if np.isscalar(spec):
        spec = [spec] * length
    vals = list(spec)
    if len(vals) != length:
        raise ValueError(f"{what} table has {len(vals)} entries, expected {length}")
    out = np.empty(length, dtype=np.int64)
    for k, x in enumerate(vals):
        x = float(x)
        if math.isinf(x):
            if (x < 0) != (absent == NO_FLOOR):
                raise ValueError(f"{what} cannot be {x}")
            out[k] = absent
        else:
            out[k] = to_units(x, grid_step, what)
    return out


def make_config(
    n: int,
    interval: tuple[int, int],
    tilt_normalizer: float,
    a: float,
    b: float,
    u: Sequence[float],
    v: Sequence[float],
    floor=0.0,
    ceiling=None,
    model="lazy-srw",
) -> EnsembleConfig:
    """Build a config from height-unit inputs.

    ``floor`` and ``ceiling`` may be a constant, a per-site sequence, or
    ``{"const": c}`` / ``{"table": [...]}``; ``floor=None`` (or ``-inf``)
    removes the floor.
    """
    model = resolve_model(model)
    l, r = int(interval[0]), int(interval[1])
    eps = model.grid_step
    length = max(r - l + 1, 1)
    floor_t = _site_table(floor, length, eps, NO_FLOOR, "floor")
    ceil_t = _site_table(ceiling, length, eps, NO_CEILING, "ceiling")
    return EnsembleConfig(
        n=int(n),
        interval=(l, r),
        tilt_normalizer=float(tilt_normalizer),
        a=float(a),
        b=float(b),
        u=tuple(to_units(x, eps, "u") for x in u),
        v=tuple(to_units(x, eps, "v") for x in v),
        floor=_readonly(floor_t),
        ceiling=None if ceil_t is None else _readonly(ceil_t),
        model=model,
    )


def _table_json(t: np.ndarray | None, eps: float, absent: int):
    if t is None:
        return None
    vals = [None if x == absent else float(x) * eps for x in t.tolist()]
    if all(x == vals[0] for x in vals):
        return {"const": vals[0]}
    return {"table": vals}


def config_to_json(config: EnsembleConfig) -> dict:
    eps = config.grid_step
    floor = _table_json(config.floor, eps, NO_FLOOR)
    if floor is not None and floor.get("const", 0) is None:
        floor = None
    return {
        "n": config.n,
        "interval": list(config.interval),
        "tilt_normalizer": config.tilt_normalizer,
        "a": config.a,
        "b": config.b,
        "u": [x * eps for x in config.u],
        "v": [x * eps for x in config.v],
        "floor": floor,
        "ceiling": _table_json(config.ceiling, eps, NO_CEILING),
        "model": model_to_json(config.model),
    }


def config_hash(config: EnsembleConfig) -> str:
    blob = json.dumps(config_to_json(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(eq=False)
class EnsembleState:
    """Heights ``X_i(j)`` in grid units, shape ``(n, r - l + 1)``."""

    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.array(self.heights, dtype=np.int64, copy=True)
        if self.heights.ndim != 2:
            raise ValueError("heights must be a 2-d table (curves x sites)")

    def copy(self) -> "EnsembleState":
        return EnsembleState(self.heights)

    def __eq__(self, other):
        return isinstance(other, EnsembleState) and np.array_equal(self.heights, other.heights)

    def curve(self, i: int) -> np.ndarray:
        return self.heights[i - 1]


class LogWeight(NamedTuple):
    """A log-weight with an explicit validity flag standing in for ``-inf``."""

    value: float
    valid: bool

    @property
    def extended(self) -> float:
        return self.value if self.valid else -math.inf


def state_violations(config: EnsembleConfig, state: EnsembleState) -> list[str]:
    X = state.heights
    out = []
    if X.shape != (config.n, config.length + 1):
        return [f"state shape {X.shape} does not match config"]
    if tuple(X[:, 0]) != config.u or tuple(X[:, -1]) != config.v:
        out.append("boundary mismatch")
    if np.any(X[:-1] < X[1:]):
        out.append("curves cross")
    if np.any(X[-1] < config.floor):
        out.append("below floor")
    if config.ceiling is not None and np.any(X[0] > config.ceiling):
        out.append("above ceiling")
    d = np.diff(X, axis=1)
    if np.any(~np.isfinite(_increment_logp(config.model, d))):
        out.append("increment outside support")
    return out


def _increment_logp(model: IncrementModel, d: np.ndarray) -> np.ndarray:
    table = model.log_prob_table()
    k = d - model.min_offset
    inside = (k >= 0) & (k < table.size)
    out = np.full(d.shape, -np.inf)
    out[inside] = table[k[inside]]
    return out


def _floor_reference(config: EnsembleConfig) -> np.ndarray:
    # an absent floor contributes as if it sat at height 0
    return np.where(config.floor == NO_FLOOR, 0, config.floor)


def area(state: EnsembleState, i: int, config: EnsembleConfig) -> float:
    """Area between curve ``i`` and the floor over sites ``l..r-1``."""
    if not 1 <= i <= config.n:
        raise IndexError(f"curve index {i} outside 1..{config.n}")
    x = state.heights[i - 1, :-1]
    h = _floor_reference(config)[:-1]
    return float(np.sum(x - h)) * config.grid_step


def log_weight(config: EnsembleConfig, state: EnsembleState) -> LogWeight:
    """Unnormalized log-density of ``state``: walk log-likelihood minus the area tilt."""
    if state_violations(config, state):
        return LogWeight(0.0, False)
    X = state.heights
    rw = float(np.sum(_increment_logp(config.model, np.diff(X, axis=1))))
    h = _floor_reference(config)[:-1]
    areas = np.sum(X[:, :-1] - h, axis=1) * config.grid_step
    tilt = float(np.dot(config.tilt_coefficients, areas))
    return LogWeight(rw - tilt, True)


def batch_log_weight(config: EnsembleConfig, heights: np.ndarray) -> np.ndarray:
    """:func:`log_weight` for a stack of states ``(T, n, L)``; ``-inf`` where invalid."""
    X = np.asarray(heights, dtype=np.int64)
    rw = _increment_logp(config.model, np.diff(X, axis=2)).sum(axis=(1, 2))
    h = _floor_reference(config)[:-1]
    areas = (X[:, :, :-1] - h).sum(axis=2) * config.grid_step
    out = rw - areas @ config.tilt_coefficients
    ok = np.all(X[:, :-1] >= X[:, 1:], axis=(1, 2))
    ok &= np.all(X[:, -1] >= config.floor, axis=1)
    if config.ceiling is not None:
        ok &= np.all(X[:, 0] <= config.ceiling, axis=1)
    ok &= np.all(X[:, :, 0] == np.asarray(config.u), axis=1)
    ok &= np.all(X[:, :, -1] == np.asarray(config.v), axis=1)
    return np.where(ok, out, -np.inf)


def shift(config: EnsembleConfig, state: EnsembleState, zeta: float):
    """Shift boundaries, floor, ceiling and state vertically by ``zeta``."""
    k = to_units(zeta, config.grid_step, "shift")
    floor = np.where(config.floor == NO_FLOOR, NO_FLOOR, config.floor + k)
    ceiling = None
    if config.ceiling is not None:
        ceiling = np.where(config.ceiling == NO_CEILING, NO_CEILING, config.ceiling + k)
    new_config = config.replace(
        u=[x + k for x in config.u], v=[x + k for x in config.v], floor=floor, ceiling=ceiling
    )
    return new_config, EnsembleState(state.heights + k)


def monotone_violations(up: EnsembleConfig, down: EnsembleConfig) -> list[str]:
    """Ways in which ``(up, down)`` fails the hypotheses of the monotone coupling."""
    out = []
    if up.n != down.n or up.interval != down.interval:
        return ["configs differ in curve count or interval"]
    if not up.model.same_law(down.model):
        out.append("increment models differ")
    if up.tilt_normalizer != down.tilt_normalizer:
        out.append("tilt normalizers differ")
    if any(a < b for a, b in zip(up.u, down.u)):
        out.append("u_up < u_down somewhere")
    if any(a < b for a, b in zip(up.v, down.v)):
        out.append("v_up < v_down somewhere")
    if np.any(up.floor < down.floor):
        out.append("floor_up < floor_down somewhere")
    if np.any(up.ceiling_table < down.ceiling_table):
        out.append("ceiling_up < ceiling_down somewhere")
    if up.a > down.a:
        out.append("a_up > a_down")
    if up.b > down.b:
        out.append("b_up > b_down")
    return out


# -- scale constants and ceilings ------------------------------------------

def scales(a: float, b: float, j: int, N: float) -> tuple[float, float]:
    """``lambda_j = a b^(j-1)`` and ``H_j = lambda_j^(-1/3) N^(1/3)``."""
    if not (a > 0 and b >= 1 and j >= 1 and N > 0):
        raise ValueError("scales require a > 0, b >= 1, j >= 1, N > 0")
    lam = a * b ** (j - 1)
    return lam, lam ** (-1.0 / 3.0) * N ** (1.0 / 3.0)


def epsilon_j(j: int, b0: float) -> tuple[int, float]:
    """Smallest integer ``C >= 1`` with ``((2+C)/(1+C))^2 <= b0^(1/6)``, and ``(j+C)^-2``."""
    if not b0 > 1:
        raise ValueError("b0 must exceed 1")
    if j < 1:
        raise ValueError("j must be >= 1")
    target = b0 ** (1.0 / 6.0)
    # ((2+C)/(1+C))^2 <= t  <=>  C >= 1/(sqrt(t) - 1) - 1
    c = max(1, math.ceil(1.0 / (math.sqrt(target) - 1.0) - 1.0 - 1e-12))
    while c > 1 and ((1 + c) / c) ** 2 <= target:
        c -= 1
    while ((2 + c) / (1 + c)) ** 2 > target:
        c += 1
    return c, (j + c) ** -2.0


@dataclass(frozen=True)
class CeilingParams:
    """Inputs of the ceiling functions.

    ``half_width`` is the half-length of the centred ambient interval, and
    ``inner_half_widths[j-1]`` that of the nested interval for level ``j``
    (``j = 1..m+1``).
    """

    a: float
    b: float
    N: float
    u: tuple[float, ...]
    v: tuple[float, ...]
    half_width: float
    inner_half_widths: tuple[float, ...]
    C: int
    T: float = 10.0

    @classmethod
    def build(cls, a, b, N, u, v, half_width, m=None, T=10.0, b0=None):
        """Nested intervals: level ``j`` has half-width ``prod_{i=j}^m (1 - eps_i) * half_width / 2``."""
        u, v = tuple(float(x) for x in u), tuple(float(x) for x in v)
        if m is None:
            m = max(len(u) - 1, 1)
        C, _ = epsilon_j(1, b if b0 is None else b0)
        widths = [0.5 * half_width]
        for j in range(m, 0, -1):
            widths.append(widths[-1] * (1.0 - (j + C) ** -2.0))
        return cls(a, b, N, u, v, float(half_width), tuple(reversed(widths)), C, float(T))

    def check(self):
        w = self.inner_half_widths
        if not w or any(x <= 0 for x in w):
            raise ValueError("nested interval widths must be positive")
        if any(x > y for x, y in zip(w, w[1:])) or w[-1] > self.half_width:
            raise ValueError("nested intervals are not increasing inside the ambient interval")


def ceiling_Cl(j: int, x: float, K: float, params: CeilingParams) -> float:
    """Three-branch ceiling for curve ``j`` at horizontal position ``x``."""
    params.check()
    m1 = len(params.inner_half_widths)
    if not 1 <= j <= m1:
        raise ValueError(f"ceiling level {j} outside 1..{m1}")
    if j > len(params.u):
        raise ValueError(f"no boundary values for curve {j}")
    if abs(x) > params.half_width * (1 + 1e-12):
        raise ValueError(f"x = {x} outside the ambient interval")
    _, H = scales(params.a, params.b, j, params.N)
    eps = (j + params.C) ** -2.0
    scale = K / eps * H
    flat_edge = 2.0 * params.T * math.sqrt(K) * eps**-0.5 * H**2
    inner = params.inner_half_widths[j - 1]
    ax = abs(x)
    if ax > inner:
        total = 2.0 * params.half_width
        return max(params.u[j - 1], params.v[j - 1]) + scale * _pow23(total / (math.sqrt(K) * H**2))
    if ax <= flat_edge:
        return scale * _pow23(2.0 * params.T * eps**-0.5)
    return scale * _pow23(ax / (math.sqrt(K) * H**2))


def _pow23(z: float) -> float:
    lg = math.log(z)
    if lg < 0:
        raise ValueError("ceiling logarithm is negative; interval too short for this K")
    return lg ** (2.0 / 3.0)


# -- 1:2:3 rescaling ---------------------------------------------------------

class RescaledCurves:
    """Piecewise-linear rescaled curves ``x_i(t)``."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = times
        self.values = values

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.domain
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t_arr < lo - tol) or np.any(t_arr > hi + tol):
            raise ValueError(f"t outside the rescaled domain [{lo}, {hi}]")
        out = np.stack([np.interp(t_arr, self.times, row) for row in self.values])
        return out[:, 0] if np.ndim(t) == 0 else out


def rescale(state: EnsembleState, sigma: float, N: float, config: EnsembleConfig) -> RescaledCurves:
    """``x_i(t) = sigma^(-2/3) N^(-1/3) X_i(t sigma^(-2/3) N^(2/3))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    horiz = sigma ** (-2.0 / 3.0) * N ** (2.0 / 3.0)
    vert = sigma ** (-2.0 / 3.0) * N ** (-1.0 / 3.0)
    times = config.sites / horiz
    values = state.heights * config.grid_step * vert
    return RescaledCurves(times, values)


def modulus(curves: RescaledCurves, delta: float, window: tuple[float, float]) -> float:
    """Largest ``|f_i(s) - f_i(t)|`` over ``|s - t| <= delta`` inside ``window``.

    The supremum of a piecewise-linear difference is attained with one point
    at a breakpoint and the other at a breakpoint or at distance ``delta``,
    so those candidates are checked exhaustively.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    lo, hi = window
    if not lo < hi:
        raise ValueError("empty window")
    grid = curves.times
    pts = np.concatenate(([lo], grid[(grid > lo) & (grid < hi)], [hi]))
    cand = np.unique(np.clip(np.concatenate((pts, pts - delta, pts + delta)), lo, hi))
    vals = curves(cand)
    best = 0.0
    for k, s in enumerate(pts):
        a = np.searchsorted(cand, s - delta, side="left")
        b = np.searchsorted(cand, s + delta, side="right")
        fs = curves(s)
        seg = vals[:, a:b]
        best = max(best, float(np.max(np.abs(seg - fs[:, None]))))
    return best
