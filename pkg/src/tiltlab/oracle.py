"""Exact small-instance computations by transfer matrices over Weyl-chamber columns.

For every site ``j`` the admissible column states are the ordered height
vectors ``x_1 >= ... >= x_n`` between the floor and ``min(cap, ceiling)``
that can still be reached from ``u`` and can still reach ``v``. Forward
tables ``F_j(x)`` carry the weight of all partial bundles from ``u`` to
``x`` including the area factors of sites ``< j``; backward tables
``B_j(x)`` carry the weight from ``x`` to ``v`` including the area factors
of sites ``>= j``. ``Z = sum_x F_j(x) B_j(x)`` at every site.

All weights are relative to unconstrained bridges, so ``Z`` is the
probability of the non-crossing event when ``a = 0`` and ``Z = 1`` for a
single floorless untilted bridge. Columns are rescaled by powers of two,
which keeps dyadic instances exact.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .ensemble import (
    NO_FLOOR,
    EnsembleConfig,
    EnsembleState,
    batch_log_weight,
    log_weight,
    make_config,
    monotone_violations,
    scales,
)
from .increments import IncrementModel, resolve_model, tilt_theta, tilted

__all__ = [
    "OracleTable",
    "PartitionResult",
    "Marginal",
    "LowerBoundRatio",
    "TRAJECTORY_LIMIT",
    "enumerate_states",
    "default_cap",
    "build_table",
    "partition",
    "marginal",
    "column_marginal",
    "ballot",
    "enumerate_trajectories",
    "sample_exact",
    "gibbs_consistency_check",
    "detailed_balance_check",
    "fosd_check",
    "tilt_invariance_check",
    "partition_lb_ratio",
    "oracle_json",
]

TRAJECTORY_LIMIT = 2_000_000
_LN2 = math.log(2.0)


def enumerate_states(n: int, cap: int, floor_val: int, ceil_val: int | None = None) -> np.ndarray:
    """All vectors ``cap' >= x_1 >= ... >= x_n >= floor_val`` in lexicographic order.

    ``cap' = min(cap, ceil_val)``. Returns an ``(S, n)`` integer array.

    Examples
    --------
    >>> enumerate_states(2, 1, 0).tolist()
    [[0, 0], [1, 0], [1, 1]]
    """
    if cap < floor_val:
        raise ValueError(f"cap {cap} lies below the floor {floor_val}")
    top = cap if ceil_val is None else min(cap, ceil_val)
    lo = np.full(n, floor_val, dtype=np.int64)
    hi = np.full(n, top, dtype=np.int64)
    return _weyl_box(lo, hi)


def _weyl_box(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Ordered vectors with ``lo_i <= x_i <= hi_i``, lexicographic."""
    n = len(lo)
    if np.any(hi < lo):
        return np.empty((0, n), dtype=np.int64)
    states = np.arange(lo[0], hi[0] + 1, dtype=np.int64)[:, None]
    for i in range(1, n):
        vals = np.arange(lo[i], hi[i] + 1, dtype=np.int64)
        if states.size == 0 or vals.size == 0:
            return np.empty((0, n), dtype=np.int64)
        prev = np.repeat(states, vals.size, axis=0)
        new = np.tile(vals, states.shape[0])[:, None]
        keep = new[:, 0] <= prev[:, -1]
        states = np.hstack([prev[keep], new[keep]])
    return states


def default_cap(config: EnsembleConfig) -> int:
    """``max(u_1, v_1) + 8 sqrt(r - l) * max|offset|`` in grid units."""
    m = config.model
    band = math.ceil(8.0 * math.sqrt(config.length) * max(abs(m.min_offset), abs(m.max_offset)))
    return max(config.u[0], config.v[0]) + band


def _default_lower_cap(config: EnsembleConfig, cap: int) -> int:
    m = config.model
    band = math.ceil(8.0 * math.sqrt(config.length) * max(abs(m.min_offset), abs(m.max_offset)))
    return min(config.u[-1], config.v[-1]) - band


def _reach_bounds(config: EnsembleConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per curve and site, the heights a bridge from u to v can occupy."""
    k = np.arange(config.length + 1)
    rest = config.length - k
    mo, Mo = config.model.min_offset, config.model.max_offset
    u = np.asarray(config.u, dtype=np.int64)[:, None]
    v = np.asarray(config.v, dtype=np.int64)[:, None]
    lo = np.maximum(u + mo * k, v - Mo * rest)
    hi = np.minimum(u + Mo * k, v - mo * rest)
    return lo, hi


def _bridge_count(model: IncrementModel, d: int, steps: int) -> tuple[float, int]:
    """``p^{*steps}(d)`` as ``(mantissa, exponent)``; zero mantissa if unreachable."""
    if not model.reachable(0, d, steps):
        return 0.0, 0
    lo, hi = _band(model, 0, d, steps)
    tot, _, e = _walk_dp(model, 0, d, steps, lo, hi)
    return tot, e


def _band(model, u, v, steps):
    k = np.arange(steps + 1)
    rest = steps - k
    lo = np.maximum(u + model.min_offset * k, v - model.max_offset * rest)
    hi = np.minimum(u + model.max_offset * k, v - model.min_offset * rest)
    return lo, hi


def _walk_dp(model: IncrementModel, u: int, v: int, steps: int, lo, hi,
             box: tuple[int, int] | None = None) -> tuple[float, float, int]:
    """Mass of walks ``u -> v`` whose heights stay within per-step bounds ``lo``/``hi``.

    Returns ``(total, leaving, exponent)``: the mass is ``total * 2**exponent``
    and ``leaving * 2**exponent`` is the part of it that leaves ``box`` at
    some step (zero without ``box``).
    """
    glo, ghi = int(np.min(lo)), int(np.max(hi))
    width = ghi - glo + 1
    heights = np.arange(glo, ghi + 1)
    if box is None:
        inside_box = np.ones(width, dtype=bool)
    else:
        inside_box = (heights >= box[0]) & (heights <= box[1])
    stay = np.zeros(width)
    out = np.zeros(width)
    if inside_box[u - glo]:
        stay[u - glo] = 1.0
    else:
        out[u - glo] = 1.0
    offs = list(zip(model.offsets, model.probs.tolist()))
    exponent = 0
    for k in range(1, steps + 1):
        ns = np.zeros(width)
        no = np.zeros(width)
        for d, p in offs:
            if d >= 0:
                ns[d:] += p * stay[:width - d]
                no[d:] += p * out[:width - d]
            else:
                ns[:d] += p * stay[-d:]
                no[:d] += p * out[-d:]
        mask = (heights >= lo[k]) & (heights <= hi[k])
        ns[~mask] = 0.0
        no[~mask] = 0.0
        # walks stepping outside the box move to the absorbing "left" table
        no += np.where(inside_box, 0.0, ns)
        ns = np.where(inside_box, ns, 0.0)
        top = max(ns.max(), no.max())
        if top > 0:
            e = math.frexp(top)[1]
            ns = np.ldexp(ns, -e)
            no = np.ldexp(no, -e)
            exponent += e
        stay, out = ns, no
    s, o = stay[v - glo], out[v - glo]
    return float(s + o), float(o), exponent


@dataclass(frozen=True, eq=False)
class OracleTable:
    """Forward and backward transfer tables of one config at a fixed cap.

    ``forward[k]`` and ``backward[k]`` are vectors over ``states[k]`` (the
    column at site ``l + k``) whose true values are the stored mantissas
    times ``2**fexp[k]`` and ``2**bexp[k]``. The normalizer
    ``prod_i p^{*L}(v_i - u_i)`` is ``norm_mantissa * 2**norm_exp``.
    """

    config: EnsembleConfig
    cap: int
    lower_cap: int | None
    states: list
    transitions: list
    site_weights: list
    forward: list
    backward: list
    fexp: np.ndarray
    bexp: np.ndarray
    norm_mantissa: float
    norm_exp: int
    truncation_bound: float

    def inner(self, k: int) -> tuple[float, int]:
        """``sum_x F_k(x) B_k(x)`` as ``(mantissa, exponent)``, unnormalized."""
        return float(np.dot(self.forward[k], self.backward[k])), int(self.fexp[k] + self.bexp[k])

    def log_Z_raw_at(self, k: int) -> float:
        """``log`` of the total unnormalized weight (same units as ``log_weight``)."""
        m, e = self.inner(k)
        return math.log(m) + e * _LN2 if m > 0 else -math.inf

    def log_Z_at(self, k: int) -> float:
        m, e = self.inner(k)
        if m <= 0 or self.norm_mantissa <= 0:
            return -math.inf
        return math.log(m / self.norm_mantissa) + (e - self.norm_exp) * _LN2

    def Z_at(self, k: int) -> float:
        m, e = self.inner(k)
        if m <= 0:
            return 0.0
        return math.ldexp(m / self.norm_mantissa, e - self.norm_exp)

    @property
    def mid(self) -> int:
        return len(self.states) // 2

    @property
    def log_Z(self) -> float:
        return self.log_Z_at(self.mid)

    @property
    def Z(self) -> float:
        return self.Z_at(self.mid)

    def column_probs(self, k: int) -> np.ndarray:
        """Exact law of the column state at site ``l + k``."""
        w = self.forward[k] * self.backward[k]
        s = w.sum()
        if s <= 0:
            raise ValueError("config has zero mass on the capped state space")
        return w / s


class PartitionResult(NamedTuple):
    Z: float
    truncation_bound: float
    log_Z: float


class Marginal(NamedTuple):
    heights: np.ndarray  # height units
    probs: np.ndarray
    grid_step: float


def _column_bounds(config: EnsembleConfig, cap: int, lower_cap: int | None):
    rlo, rhi = _reach_bounds(config)
    lo = np.maximum(rlo, config.floor[None, :])
    if lower_cap is not None:
        lo = np.maximum(lo, lower_cap)
    hi = np.minimum(rhi, np.minimum(config.ceiling_table, cap)[None, :])
    return lo, hi


def _rescale(g: np.ndarray) -> tuple[np.ndarray, int]:
    top = g.max() if g.size else 0.0
    if not top > 0:
        return g, 0
    e = math.frexp(top)[1]
    return np.ldexp(g, -e), e


def _transition(a, b, combos, combo_p, codes):
    if a.size == 0 or b.size == 0:
        return sparse.csr_matrix((a.shape[0], b.shape[0]))
    bc = codes(b)
    order = np.argsort(bc)
    bc_sorted = bc[order]
    Y = a[:, None, :] + combos[None, :, :]
    yc = codes(Y.reshape(-1, a.shape[1]))
    pos = np.minimum(np.searchsorted(bc_sorted, yc), len(bc_sorted) - 1)
    hit = bc_sorted[pos] == yc
    rows = np.repeat(np.arange(a.shape[0]), combos.shape[0])[hit]
    cols = order[pos[hit]]
    data = np.tile(combo_p, a.shape[0])[hit]
    return sparse.csr_matrix((data, (rows, cols)), shape=(a.shape[0], b.shape[0]))


def build_table(config: EnsembleConfig, cap: int | None = None,
                lower_cap: int | None = None) -> OracleTable:
    """Build the forward/backward tables.

    Parameters
    ----------
    cap : int, optional
        Upper bound on ``x_1`` in grid units (default :func:`default_cap`).
    lower_cap : int, optional
        Lower bound on ``x_n`` at sites without a floor; defaults to a band
        below the boundary data. Ignored when the floor is finite everywhere.
    """
    if cap is None:
        cap = default_cap(config)
    if np.any(config.floor == NO_FLOOR):
        if lower_cap is None:
            lower_cap = _default_lower_cap(config, cap)
    else:
        lower_cap = None
    n, L = config.n, config.length
    lo, hi = _column_bounds(config, cap, lower_cap)
    states = [_weyl_box(lo[:, k], hi[:, k]) for k in range(L + 1)]
    nonempty = [s for s in states if s.size]
    glo = min(int(s.min()) for s in nonempty) if nonempty else 0
    ghi = max(int(s.max()) for s in nonempty) if nonempty else 0
    model = config.model
    base = ghi - glo + 1 + (model.max_offset - model.min_offset)
    shift = glo + model.min_offset
    powers = base ** np.arange(n - 1, -1, -1, dtype=np.int64)

    def codes(a):
        return (a - shift) @ powers

    combos = np.array(list(itertools.product(model.offsets, repeat=n)), dtype=np.int64)
    pmap = model.prob_dict()
    combo_p = np.array([math.prod(pmap[d] for d in c) for c in combos.tolist()])
    cache: dict = {}
    transitions = []
    for k in range(L):
        # the column state sets are functions of these bounds alone
        key = (lo[:, k].tobytes(), hi[:, k].tobytes(), lo[:, k + 1].tobytes(), hi[:, k + 1].tobytes())
        T = cache.get(key)
        if T is None:
            T = cache[key] = _transition(states[k], states[k + 1], combos, combo_p, codes)
        transitions.append(T)
    ref = np.where(config.floor == NO_FLOOR, 0, config.floor)
    coef = config.tilt_coefficients * config.grid_step
    site_w = []
    for k in range(L + 1):
        if k == L or config.a == 0:
            site_w.append(np.ones(states[k].shape[0]))
        else:
            site_w.append(np.exp(-((states[k] - ref[k]) @ coef)))
    fwd, fexp = [None] * (L + 1), np.zeros(L + 1, dtype=np.int64)
    fwd[0] = np.all(states[0] == np.asarray(config.u), axis=1).astype(float)
    for k in range(L):
        fwd[k + 1], e = _rescale(transitions[k].T @ (fwd[k] * site_w[k]))
        fexp[k + 1] = fexp[k] + e
    bwd, bexp = [None] * (L + 1), np.zeros(L + 1, dtype=np.int64)
    bwd[L] = np.all(states[L] == np.asarray(config.v), axis=1).astype(float)
    for k in range(L - 1, -1, -1):
        bwd[k], e = _rescale(site_w[k] * (transitions[k] @ bwd[k + 1]))
        bexp[k] = bexp[k + 1] + e
    norm_m, norm_e = 1.0, 0
    for ui, vi in zip(config.u, config.v):
        m, e = _bridge_count(model, vi - ui, L)
        norm_m *= m
        norm_e += e
    trunc = _truncation_bound(config, cap, lower_cap)
    return OracleTable(config, cap, lower_cap, states, transitions, site_w, fwd, bwd,
                       fexp, bexp, norm_m, norm_e, trunc)


def _truncation_bound(config: EnsembleConfig, cap: int, lower_cap: int | None) -> float:
    """Upper bound on the normalized mass of ordered bundles cut off by the caps.

    A bundle lost to the upper cap has ``x_1 > cap`` somewhere, one lost to
    the lower cap has ``x_n < lower_cap`` somewhere; the tilt factor of any
    bundle is at most ``exp(w_max)``, so each loss is bounded by
    ``exp(w_max)`` times the unconstrained bridge probability of the
    corresponding exceedance.
    """
    L = config.length
    model = config.model
    rlo, rhi = _reach_bounds(config)
    ref = np.where(config.floor == NO_FLOOR, 0, config.floor)
    lowest = np.maximum(rlo, config.floor[None, :])
    deficit = np.maximum(ref[None, :-1] - lowest[:, :-1], 0).sum(axis=1) * config.grid_step
    w_max = float(np.dot(config.tilt_coefficients, deficit))
    total = 0.0
    checks = []
    if np.any(np.minimum(config.ceiling_table, rhi[0]) > cap):
        checks.append((config.u[0], config.v[0], (-(1 << 62), cap)))
    if lower_cap is not None and np.any(lowest[-1] < lower_cap):
        checks.append((config.u[-1], config.v[-1], (lower_cap, 1 << 62)))
    for u, v, box in checks:
        lo, hi = _band(model, u, v, L)
        tot, out, _ = _walk_dp(model, u, v, L, lo, hi, box=box)
        if out > 0:
            total += math.exp(math.log(out / tot) + w_max)
    return total


def partition(config: EnsembleConfig, cap: int | None = None) -> PartitionResult:
    """Normalized partition function on the capped space and its truncation bound.

    An infeasible config reports ``Z = 0``.
    """
    t = build_table(config, cap)
    return PartitionResult(t.Z, t.truncation_bound, t.log_Z)


def _site_index(config: EnsembleConfig, x: int) -> int:
    l, r = config.interval
    if not l <= x <= r:
        raise ValueError(f"site {x} outside [{l}, {r}]")
    return x - l


def column_marginal(table: OracleTable, x: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of the column at site ``x``: ``(states, probs)`` in grid units."""
    k = _site_index(table.config, x)
    return table.states[k], table.column_probs(k)


def marginal(config: EnsembleConfig, i: int, x: int, cap: int | None = None,
             table: OracleTable | None = None) -> Marginal:
    """Exact law of ``X_i(x)``."""
    if not 1 <= i <= config.n:
        raise ValueError(f"curve {i} outside 1..{config.n}")
    k = _site_index(config, x)
    table = table or build_table(config, cap)
    p = table.column_probs(k)
    vals, inv = np.unique(table.states[k][:, i - 1], return_inverse=True)
    probs = np.bincount(inv.ravel(), weights=p, minlength=vals.size)
    return Marginal(vals * config.grid_step, probs, config.grid_step)


def ballot(model, x: int, y: int, steps: int) -> float:
    """``P(X(k) >= 0 for 0 < k < steps)`` for the bridge from ``x`` to ``y`` (grid units).

    The ratio of the floored and floorless untilted partition functions,
    with caps that cut nothing off.
    """
    model = resolve_model(model)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not model.reachable(x, y, steps):
        raise ValueError(f"{y} is not reachable from {x} in {steps} steps")
    if x < 0 or y < 0:
        return 0.0
    eps = model.grid_step
    top = max(x, y) + model.max_offset * steps
    floored = make_config(1, (0, steps), 1.0, 0.0, 1.0, [x * eps], [y * eps], floor=0.0, model=model)
    free = floored.replace(floor=np.full(steps + 1, NO_FLOOR, dtype=np.int64))
    t1 = build_table(floored, cap=top)
    t0 = build_table(free, cap=top, lower_cap=min(x, y) + model.min_offset * steps)
    m1, e1 = t1.inner(0)
    m0, e0 = t0.inner(0)
    return math.ldexp(m1 / m0, e1 - e0)


# -- trajectory-level tools ----------------------------------------------------

def enumerate_trajectories(config: EnsembleConfig, cap: int | None = None,
                           limit: int = TRAJECTORY_LIMIT, table: OracleTable | None = None):
    """All admissible bundles on the capped space with their normalized probabilities.

    The table only prunes dead ends; the probabilities come from
    :func:`~tiltlab.ensemble.batch_log_weight`. Returns ``(paths, probs)``
    with ``paths`` of shape ``(T, n, L + 1)`` in grid units.
    """
    table = table or build_table(config, cap)
    L = config.length
    alive = [table.backward[k] > 0 for k in range(L + 1)]
    paths = np.nonzero(alive[0] & (table.forward[0] > 0))[0][:, None]
    for k in range(L):
        T = table.transitions[k]
        last = paths[:, -1]
        counts = np.diff(T.indptr)[last]
        total = int(counts.sum())
        if total > limit:
            raise ValueError(f"more than {limit} trajectories; instance too large to enumerate")
        rep = np.repeat(np.arange(len(last)), counts)
        offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        nxt = T.indices[np.repeat(T.indptr[last], counts) + offs]
        keep = alive[k + 1][nxt]
        paths = np.hstack([paths[rep[keep]], nxt[keep][:, None]])
    heights = np.stack([table.states[k][paths[:, k]] for k in range(L + 1)], axis=2)
    lw = batch_log_weight(config, heights)
    w = np.exp(lw - lw.max()) if lw.size else lw
    return heights, w / w.sum()


def sample_exact(config: EnsembleConfig, count: int, rng: np.random.Generator,
                 cap: int | None = None, table: OracleTable | None = None) -> np.ndarray:
    """Independent exact samples from the capped measure, shape ``(count, n, L + 1)``.

    Samples ``x_{j+1}`` given ``x_j`` with weights ``T(x_j, y) B_{j+1}(y)``.
    """
    table = table or build_table(config, cap)
    L, n = config.length, config.n
    out = np.empty((count, n, L + 1), dtype=np.int64)
    cur = np.full(count, int(np.argmax(table.forward[0] > 0)))
    out[:, :, 0] = table.states[0][cur]
    for k in range(L):
        W = table.transitions[k].multiply(table.backward[k + 1][None, :]).tocsr()
        deg = np.diff(W.indptr)
        S, D = W.shape[0], max(int(deg.max()), 1)
        cols = np.zeros((S, D), dtype=np.int64)
        wts = np.zeros((S, D))
        rows = np.repeat(np.arange(S), deg)
        pos = np.arange(W.nnz) - np.repeat(W.indptr[:-1], deg)
        cols[rows, pos] = W.indices
        wts[rows, pos] = W.data
        cw = np.cumsum(wts[cur], axis=1)
        u = rng.random(count) * cw[:, -1]
        pick = np.minimum((cw <= u[:, None]).sum(axis=1), D - 1)
        cur = cols[cur, pick]
        out[:, :, k + 1] = table.states[k + 1][cur]
    return out


def _induced(config: EnsembleConfig, heights: np.ndarray, k: int, J: tuple[int, int]) -> EnsembleConfig:
    """Sub-config of curves ``1..k`` on ``J`` given the rest of ``heights``."""
    l = config.interval[0]
    a, c = J[0] - l, J[1] - l
    floor = heights[k, a:c + 1] if k < config.n else config.floor[a:c + 1]
    ceiling = None if config.ceiling is None else config.ceiling[a:c + 1]
    return config.replace(n=k, interval=J, u=heights[:k, a], v=heights[:k, c],
                          floor=floor, ceiling=ceiling)


def gibbs_consistency_check(config: EnsembleConfig, k: int, subinterval: tuple[int, int],
                            cap: int | None = None) -> float:
    """Max TV distance between conditional laws and induced sub-config laws.

    The conditional law of curves ``1..k`` on the subinterval, given all
    other heights, comes from brute-force enumeration of the full capped
    measure. The induced law is the tilted measure of the sub-config with
    the conditioning data as boundary values and curve ``k + 1`` as floor,
    normalized by its own transfer-matrix partition function.
    """
    if not 1 <= k <= config.n:
        raise ValueError(f"k = {k} outside 1..{config.n}")
    l, r = config.interval
    J = (int(subinterval[0]), int(subinterval[1]))
    if not (l <= J[0] < J[1] <= r):
        raise ValueError(f"subinterval {J} not inside [{l}, {r}]")
    cap = default_cap(config) if cap is None else cap
    paths, probs = enumerate_trajectories(config, cap)
    a, c = J[0] - l, J[1] - l
    inner = np.zeros(paths.shape[1:], dtype=bool)
    inner[:k, a + 1:c] = True
    keys, inv = np.unique(paths[:, ~inner], axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(keys) + 1))
    worst = 0.0
    log_z_cache: dict = {}
    for g in range(len(keys)):
        members = order[bounds[g]:bounds[g + 1]]
        p = probs[members]
        tot = p.sum()
        if not tot > 0:
            continue
        sub = _induced(config, paths[members[0]], k, J)
        # groups sharing boundary values and floor induce the same sub-config
        key = (sub.u, sub.v, sub.floor.tobytes())
        if key not in log_z_cache:
            log_z_cache[key] = build_table(sub, cap=cap).log_Z_raw_at(0)
        lw = batch_log_weight(sub, paths[members][:, :k, a:c + 1])
        induced = np.exp(lw - log_z_cache[key])
        # mass of the induced law outside this group counts fully towards TV
        dev = 0.5 * (np.abs(p / tot - induced).sum() + max(0.0, 1.0 - induced.sum()))
        worst = max(worst, float(dev))
    return worst


def detailed_balance_check(config: EnsembleConfig, cap: int | None = None,
                           limit: int = TRAJECTORY_LIMIT) -> float:
    """Max ``|pi(s) P(s, s') - pi(s') P(s', s)|`` over single-site neighbor pairs.

    ``pi`` is the normalized trajectory law; ``P`` is the sampler's
    acceptance probability times the uniform proposal probability.
    """
    from .sampler import MoveProposal, log_acceptance_ratio

    paths, probs = enumerate_trajectories(config, cap, limit=limit)
    n, L1 = paths.shape[1:]
    interior = L1 - 2
    if interior < 1:
        raise ValueError("interval has no interior sites")
    q = 1.0 / (2 * n * interior)
    lookup = {p.tobytes(): s for s, p in enumerate(paths)}
    l = config.interval[0]
    worst = 0.0
    for s, h in enumerate(paths):
        st = EnsembleState(h)
        for K in range(1, n + 1):
            for X in range(l + 1, l + L1 - 1):
                for sig in (1, -1):
                    h2 = h.copy()
                    h2[K - 1, X - l] += sig
                    t = lookup.get(h2.tobytes())
                    if t is None:
                        continue
                    fwd = log_acceptance_ratio(config, st, MoveProposal(K, X, sig, 0.0))
                    bwd = log_acceptance_ratio(config, EnsembleState(h2), MoveProposal(K, X, -sig, 0.0))
                    flow_st = probs[s] * q * min(1.0, math.exp(fwd))
                    flow_ts = probs[t] * q * min(1.0, math.exp(bwd))
                    worst = max(worst, abs(flow_st - flow_ts))
    return worst


def fosd_check(config_up: EnsembleConfig, config_down: EnsembleConfig,
               cap: int | None = None) -> tuple[bool, float]:
    """First-order dominance of every one-point marginal: ``(holds, worst margin)``.

    The margin is the minimum over curves, sites and thresholds of
    ``P_down(X_i(x) <= t) - P_up(X_i(x) <= t)``.
    """
    from .sampler import HypothesisError

    problems = monotone_violations(config_up, config_down)
    if problems:
        raise HypothesisError("; ".join(problems))
    cap = max(default_cap(config_up), default_cap(config_down)) if cap is None else cap
    tu, td = build_table(config_up, cap), build_table(config_down, cap)
    worst = math.inf
    for k in range(config_up.length + 1):
        pu, pd = tu.column_probs(k), td.column_probs(k)
        for i in range(config_up.n):
            hu, hd = tu.states[k][:, i], td.states[k][:, i]
            grid = np.union1d(hu, hd)
            cu = np.array([pu[hu <= t].sum() for t in grid])
            cd = np.array([pd[hd <= t].sum() for t in grid])
            worst = min(worst, float(np.min(cd - cu)))
    return worst >= -1e-12, worst


def _bridge_sequences(model: IncrementModel, y: int, steps: int, cap: int | None):
    offs = np.asarray(model.offsets)
    if len(offs) ** steps > TRAJECTORY_LIMIT:
        raise ValueError("too many increment sequences to enumerate")
    seqs = np.array(list(itertools.product(range(len(offs)), repeat=steps)), dtype=np.int64)
    incs = offs[seqs]
    keep = incs.sum(axis=1) == y
    if cap is not None:
        keep &= np.abs(np.cumsum(incs, axis=1)).max(axis=1) <= cap
    return seqs[keep]


def tilt_invariance_check(model, y: int, steps: int, cap: int | None = None) -> float:
    """TV distance between the bridge laws ``0 -> y`` before and after tilting.

    The tilt gives the increments mean ``y / steps``; both path laws come
    from direct enumeration of increment sequences (optionally only those
    with ``|height| <= cap``).
    """
    model = resolve_model(model)
    if steps < 1 or not model.reachable(0, y, steps):
        raise ValueError(f"{y} is not reachable from 0 in {steps} steps")
    drift = y * model.grid_step / steps
    lo, hi = model.values[0], model.values[-1]
    # at the edge of the support the bridge is a single path under any tilt
    other = tilted(model, tilt_theta(model, drift)) if lo < drift < hi else model
    seqs = _bridge_sequences(model, y, steps, cap)
    laws = []
    for m in (model, other):
        lp = np.log(m.probs)[seqs].sum(axis=1)
        w = np.exp(lp - lp.max())
        laws.append(w / w.sum())
    return 0.5 * float(np.abs(laws[0] - laws[1]).sum())


class LowerBoundRatio(NamedTuple):
    ratio: float
    Z: float
    H: float
    flags: tuple[str, ...]


def partition_lb_ratio(lam: float, A: float, B: float, interval_len: int, N: float,
                       cap: int | None = None, model="lazy-srw") -> LowerBoundRatio:
    """``Z / exp(-(A^{3/2} + B^{3/2} + |I| / H^2))`` for one ``lam``-tilted curve above 0.

    Boundary heights ``A H`` and ``B H`` are rounded to the grid; violated
    size hypotheses are reported in ``flags`` rather than raised.
    """
    model = resolve_model(model)
    _, H = scales(lam, 1.0, 1, N)
    flags = []
    if max(A, B) > H**2:
        flags.append("max(A, B) > H^2")
    if interval_len < 2 * max(math.sqrt(A), math.sqrt(B)) * H**2:
        flags.append("|I| < 2 max(A, B)^(1/2) H^2")
    eps = model.grid_step
    u, v = round(A * H / eps), round(B * H / eps)
    if not model.reachable(u, v, interval_len):
        v += 1
        flags.append("boundary shifted by one grid step for reachability")
    cfg = make_config(1, (0, interval_len), N, lam, 1.0, [u * eps], [v * eps], floor=0.0, model=model)
    res = partition(cfg, cap)
    if not res.Z > 0:
        raise ValueError("infeasible geometry: zero partition function")
    log_ratio = res.log_Z + A**1.5 + B**1.5 + interval_len / H**2
    return LowerBoundRatio(math.exp(log_ratio), res.Z, H, tuple(flags))


def oracle_json(config: EnsembleConfig, cap: int | None = None, sites=None) -> dict:
    """JSON-ready partition function and one-point marginals."""
    table = build_table(config, cap)
    sites = config.sites.tolist() if sites is None else list(sites)
    margs = []
    for x in sites:
        for i in range(1, config.n + 1):
            m = marginal(config, i, x, table=table)
            margs.append({"curve": i, "site": int(x), "heights": m.heights.tolist(),
                          "probs": m.probs.tolist()})
    return {
        "Z": table.Z,
        "log_Z": table.log_Z,
        "truncation_bound": table.truncation_bound,
        "cap": table.cap * config.grid_step,
        "marginals": margs,
    }
