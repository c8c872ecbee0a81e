"""Single-site Glauber dynamics for tilted line ensembles.

Each step proposes moving one interior height of one curve by one grid step
and accepts iff ``U <= R`` and the new state is admissible, where ``R`` is the
ratio of the unnormalized densities. Proposals come from a counter-based
Philox stream keyed by ``(seed, chain_id)``, so runs are reproducible
independently of how chains are scheduled, and two chains can share one
stream exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .ensemble import (
    NO_CEILING,
    EnsembleConfig,
    EnsembleState,
    config_hash,
    config_to_json,
    log_weight,
    monotone_violations,
    state_violations,
)

__all__ = [
    "ProposalStream",
    "MoveProposal",
    "ChainState",
    "SampleSet",
    "Diagnostics",
    "CoupledRun",
    "HypothesisError",
    "greatest_state",
    "initial_state",
    "new_chain",
    "propose",
    "log_acceptance_ratio",
    "step",
    "advance",
    "run",
    "run_chains",
    "coupled_run",
    "remove_top_curves",
    "diagnostics",
    "integrated_autocorr_time",
]

# steps per kernel call; bounds the size of the drawn proposal arrays
CHUNK = 1 << 20
_TWO_M53 = 2.0**-53


class HypothesisError(ValueError):
    """The pair of configs does not satisfy the monotone-coupling hypotheses."""


class ProposalStream:
    """Counter-based stream of Glauber proposals.

    Every step consumes two 64-bit Philox words: the first selects
    ``(curve, site, sign)``, the second gives ``U``. ``counter`` is the number
    of steps drawn so far.
    """

    def __init__(self, seed: int, chain_id: int = 0, name: str = "glauber"):
        self.seed = int(seed)
        self.chain_id = int(chain_id)
        self.name = name
        key = ((self.seed % 2**64) << 64) | ((self.chain_id % 2**32) << 32) | zlib.crc32(name.encode())
        self._bitgen = np.random.Philox(key=key)
        self.counter = 0

    def draw(self, count: int, n_codes: int) -> tuple[np.ndarray, np.ndarray]:
        raw = self._bitgen.random_raw(2 * count).reshape(count, 2)
        u0 = (raw[:, 0] >> np.uint64(11)).astype(np.float64) * _TWO_M53
        codes = np.floor(u0 * n_codes).astype(np.int64)
        uniforms = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * _TWO_M53
        self.counter += count
        return codes, uniforms


class MoveProposal(NamedTuple):
    K: int  # curve, 1..n
    X: int  # interior site, l+1..r-1
    sigma: int  # +1 or -1
    U: float


def _decode(code: int, config: EnsembleConfig) -> tuple[int, int, int]:
    m = config.length - 1
    K, rem = divmod(int(code), 2 * m)
    return K + 1, config.interval[0] + 1 + (rem >> 1), 1 - 2 * (rem & 1)


def _encode(move: MoveProposal, config: EnsembleConfig) -> int:
    m = config.length - 1
    rem = 2 * (move.X - config.interval[0] - 1) + (0 if move.sigma > 0 else 1)
    return (move.K - 1) * 2 * m + rem


@dataclass
class ChainState:
    config: EnsembleConfig
    state: EnsembleState
    stream: ProposalStream
    step_count: int = 0
    accept_count: int = 0
    log_weight: float = 0.0

    @property
    def eps(self) -> float:
        return self.config.grid_step

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.step_count if self.step_count else 0.0


def _check_chain_config(config: EnsembleConfig):
    if config.length < 2:
        raise ValueError("interval has no interior sites; nothing to propose")
    if not config.model.contiguous_with_zero:
        raise ValueError(
            "single-site moves need an increment support that is a contiguous range containing 0"
        )


def greatest_state(config: EnsembleConfig, upper: np.ndarray | None = None) -> EnsembleState:
    """Pointwise-largest admissible state, optionally below ``upper``.

    With a contiguous increment support every constraint is a difference
    bound, so the greatest solution is the fixpoint of repeatedly lowering
    each height to its tightest upper bound.
    """
    n, L = config.n, config.length + 1
    lo_off, hi_off = config.model.min_offset, config.model.max_offset
    big = np.int64(NO_CEILING)
    X = np.full((n, L), big, dtype=np.int64)
    if upper is not None:
        X = np.minimum(X, upper)
    X[:, 0] = config.u
    X[:, -1] = config.v
    X[0] = np.minimum(X[0], config.ceiling_table)
    X[:, 0] = config.u
    X[:, -1] = config.v
    while True:
        prev = X.copy()
        for i in range(n):
            row = X[i]
            if i > 0:
                np.minimum(row, X[i - 1], out=row)
            for j in range(1, L):
                row[j] = min(row[j], row[j - 1] + hi_off)
            for j in range(L - 2, -1, -1):
                row[j] = min(row[j], row[j + 1] - lo_off)
            row[0], row[-1] = config.u[i], config.v[i]
        if np.array_equal(prev, X):
            break
    state = EnsembleState(X)
    problems = state_violations(config, state)
    if problems:
        raise ValueError("config admits no state: " + "; ".join(problems))
    return state


def initial_state(config: EnsembleConfig) -> EnsembleState:
    """Rounded straight lines between ``u`` and ``v``, clipped down to restore ordering."""
    _check_chain_config(config)
    L = config.length
    t = np.arange(L + 1) / L
    u = np.asarray(config.u, dtype=float)[:, None]
    v = np.asarray(config.v, dtype=float)[:, None]
    X = np.rint(u + (v - u) * t).astype(np.int64)
    X[0] = np.minimum(X[0], config.ceiling_table)
    for i in range(1, config.n):
        X[i] = np.minimum(X[i], X[i - 1])
    state = EnsembleState(X)
    if state_violations(config, state):
        return greatest_state(config)
    return state


def new_chain(config: EnsembleConfig, seed: int, chain_id: int = 0,
              state: EnsembleState | None = None) -> ChainState:
    _check_chain_config(config)
    state = initial_state(config) if state is None else state.copy()
    lw = log_weight(config, state)
    if not lw.valid:
        raise ValueError("initial state is not admissible: " + "; ".join(state_violations(config, state)))
    return ChainState(config, state, ProposalStream(seed, chain_id), log_weight=lw.value)


def _n_codes(config: EnsembleConfig) -> int:
    return 2 * config.n * (config.length - 1)


def propose(chain: ChainState) -> MoveProposal:
    _check_chain_config(chain.config)
    codes, us = chain.stream.draw(1, _n_codes(chain.config))
    return MoveProposal(*_decode(codes[0], chain.config), float(us[0]))


def log_acceptance_ratio(config: EnsembleConfig, state: EnsembleState, move: MoveProposal) -> float:
    """``log R`` for the proposal; ``-inf`` if it leaves the increment support.

    Ordering, floor and ceiling are not part of ``R``; :func:`step` checks them.
    """
    l, r = config.interval
    if not l < move.X < r:
        raise ValueError("boundary sites are never proposed")
    row = state.heights[move.K - 1]
    j = move.X - l
    x, left, right = int(row[j]), int(row[j - 1]), int(row[j + 1])
    y = x + move.sigma
    model = config.model
    new = model.log_prob(y - left) + model.log_prob(right - y)
    if new == -math.inf:
        return -math.inf
    old = model.log_prob(x - left) + model.log_prob(right - x)
    coef = config.a / config.tilt_normalizer * config.b ** (move.K - 1) * config.grid_step
    return new - old - move.sigma * coef


class _Prepared(NamedTuple):
    floor: np.ndarray
    ceil: np.ndarray
    logp: np.ndarray
    min_off: int
    coef: np.ndarray
    interior: int


def _prepare(config: EnsembleConfig) -> _Prepared:
    return _Prepared(
        np.ascontiguousarray(config.floor, dtype=np.int64),
        np.ascontiguousarray(config.ceiling_table, dtype=np.int64),
        config.model.log_prob_table(),
        config.model.min_offset,
        np.ascontiguousarray(config.tilt_coefficients * config.grid_step),
        config.length - 1,
    )


_NO_OUT = np.zeros((1, 1, 1), dtype=np.int32)


def _apply(chain: ChainState, codes, uniforms, prep: _Prepared, record_every=0, out=None):
    acc, dlw = kernels.glauber_steps(
        chain.state.heights, prep.floor, prep.ceil, prep.logp, prep.min_off, prep.coef,
        codes, uniforms, prep.interior, record_every, _NO_OUT if out is None else out,
    )
    chain.step_count += len(codes)
    chain.accept_count += acc
    chain.log_weight += dlw


def step(chain: ChainState, move: MoveProposal | None = None) -> ChainState:
    """One Glauber step; draws a proposal from the chain's stream unless one is given."""
    _check_chain_config(chain.config)
    if move is None:
        move = propose(chain)
    codes = np.array([_encode(move, chain.config)], dtype=np.int64)
    _apply(chain, codes, np.array([move.U], dtype=float), _prepare(chain.config))
    return chain


def advance(chain: ChainState, steps: int) -> ChainState:
    """Run ``steps`` Glauber steps without recording."""
    prep = _prepare(chain.config)
    ncodes = _n_codes(chain.config)
    left = int(steps)
    while left > 0:
        k = min(left, CHUNK)
        codes, us = chain.stream.draw(k, ncodes)
        _apply(chain, codes, us, prep)
        left -= k
    return chain


@dataclass
class SampleSet:
    """Recorded states of one or more chains, heights in grid units."""

    heights: np.ndarray  # (samples, n, L) int32
    chain: np.ndarray  # (samples,)
    sweep: np.ndarray  # (samples,)
    interval: tuple[int, int]
    grid_step: float
    steps: dict = field(default_factory=dict)  # chain id -> steps taken
    accepted: dict = field(default_factory=dict)  # chain id -> accepted moves
    seed: int | None = None
    config_hash: str = ""

    def __len__(self):
        return self.heights.shape[0]

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.interval[0], self.interval[1] + 1)

    def values(self, curve: int, site: int | None = None) -> np.ndarray:
        """Heights (height units) of ``curve`` at ``site`` or over all sites."""
        col = slice(None) if site is None else site - self.interval[0]
        return self.heights[:, curve - 1, col] * self.grid_step

    @property
    def midpoint(self) -> int:
        return (self.interval[0] + self.interval[1]) // 2

    @property
    def acceptance_rate(self) -> float:
        steps = sum(self.steps.values())
        return sum(self.accepted.values()) / steps if steps else 0.0

    @classmethod
    def concat(cls, parts: list["SampleSet"]) -> "SampleSet":
        first = parts[0]
        steps, accepted = {}, {}
        for p in parts:
            steps.update(p.steps)
            accepted.update(p.accepted)
        return cls(
            np.concatenate([p.heights for p in parts]),
            np.concatenate([p.chain for p in parts]),
            np.concatenate([p.sweep for p in parts]),
            first.interval, first.grid_step, steps, accepted, first.seed, first.config_hash,
        )

    def to_csv(self, path):
        """Long format: one row per (chain, sweep, curve, site)."""
        S, n, L = self.heights.shape
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "sweep", "curve", "site", "height"])
            sites = self.sites.tolist()
            for s in range(S):
                c, sw = int(self.chain[s]), int(self.sweep[s])
                for i in range(n):
                    for site, h in zip(sites, (self.heights[s, i] * self.grid_step).tolist()):
                        w.writerow([c, sw, i + 1, site, repr(h) if self.grid_step != 1 else int(h)])
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path, grid_step: float = 1.0) -> "SampleSet":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        chain, sweep, curve, site = (rows[:, k].astype(np.int64) for k in range(4))
        height = np.rint(rows[:, 4] / grid_step).astype(np.int32)
        keys = sorted(set(zip(chain.tolist(), sweep.tolist())))
        index = {k: s for s, k in enumerate(keys)}
        n, lo, hi = curve.max(), site.min(), site.max()
        H = np.zeros((len(keys), n, hi - lo + 1), dtype=np.int32)
        rows_idx = np.array([index[k] for k in zip(chain.tolist(), sweep.tolist())])
        H[rows_idx, curve - 1, site - lo] = height
        return cls(H, np.array([k[0] for k in keys]), np.array([k[1] for k in keys]),
                   (int(lo), int(hi)), grid_step)

    def manifest(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "samples": len(self),
            "steps": {str(k): v for k, v in sorted(self.steps.items())},
            "accepted": {str(k): v for k, v in sorted(self.accepted.items())},
        }


def run(chain: ChainState, sweeps: int, burnin: int = 0, thin: int = 1) -> SampleSet:
    """Run ``sweeps`` sweeps, recording every ``thin``-th sweep after ``burnin``.

    A sweep is ``n * (r - l - 1)`` steps.
    """
    if sweeps < burnin:
        raise ValueError("sweeps must be >= burnin")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    config = chain.config
    _check_chain_config(config)
    sweep_len = config.n * (config.length - 1)
    advance(chain, burnin * sweep_len)
    n_rec = (sweeps - burnin) // thin
    n, L = config.n, config.length + 1
    out = np.empty((n_rec, n, L), dtype=np.int32)
    prep = _prepare(config)
    ncodes = _n_codes(config)
    every = thin * sweep_len
    per_chunk = max(1, CHUNK // every)
    done = 0
    while done < n_rec:
        k = min(per_chunk, n_rec - done)
        codes, us = chain.stream.draw(k * every, ncodes)
        _apply(chain, codes, us, prep, every, out[done:done + k])
        done += k
    # trailing sweeps that complete no record are still run
    advance(chain, (sweeps - burnin - n_rec * thin) * sweep_len)
    cid = chain.stream.chain_id
    return SampleSet(
        heights=out,
        chain=np.full(n_rec, cid, dtype=np.int64),
        sweep=burnin + thin * np.arange(1, n_rec + 1),
        interval=config.interval,
        grid_step=config.grid_step,
        steps={cid: chain.step_count},
        accepted={cid: chain.accept_count},
        seed=chain.stream.seed,
        config_hash=config_hash(config),
    )


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("TILTLAB_THREADS", "")))
    except ValueError:
        return os.cpu_count() or 1


def run_chains(config: EnsembleConfig, seed: int, chains: int = 4, sweeps: int = 1000,
               burnin: int | None = None, thin: int = 1, workers: int | None = None,
               state: EnsembleState | None = None) -> SampleSet:
    """Independent chains ``0..chains-1``; output does not depend on ``workers``."""
    if burnin is None:
        burnin = sweeps // 5
    workers = min(chains, workers or _thread_cap())

    def one(cid):
        return run(new_chain(config, seed, cid, state), sweeps, burnin, thin)

    if workers <= 1:
        parts = [one(c) for c in range(chains)]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(one, range(chains)))
    return SampleSet.concat(parts)


class CoupledRun(NamedTuple):
    traj_up: np.ndarray  # (records, n, L)
    traj_down: np.ndarray
    violation_count: int
    accepted_up: int
    accepted_down: int


def coupled_run(config_up: EnsembleConfig, config_down: EnsembleConfig, sweeps: int,
                seed: int, chain_id: int = 0, steps: int | None = None,
                init: tuple[EnsembleState, EnsembleState] | None = None,
                record: bool = True) -> CoupledRun:
    """Drive the two chains with one shared proposal stream.

    ``violation_count`` sums, over all steps, the number of (curve, site) with
    the lower chain above the upper one. ``steps`` overrides ``sweeps``.
    Trajectories hold the state after every sweep when ``record`` is set.
    """
    problems = monotone_violations(config_up, config_down)
    if problems:
        raise HypothesisError("; ".join(problems))
    _check_chain_config(config_up)
    if init is None:
        s_up = greatest_state(config_up)
        s_down = greatest_state(config_down, upper=s_up.heights)
    else:
        s_up, s_down = init[0].copy(), init[1].copy()
    for cfg, s in ((config_up, s_up), (config_down, s_down)):
        bad = state_violations(cfg, s)
        if bad:
            raise HypothesisError("initial state invalid: " + "; ".join(bad))
    if np.any(s_down.heights > s_up.heights):
        raise HypothesisError("initial states are not ordered")
    sweep_len = config_up.n * (config_up.length - 1)
    total_steps = int(steps) if steps is not None else int(sweeps) * sweep_len
    stream = ProposalStream(seed, chain_id, name="coupled")
    pu, pd = _prepare(config_up), _prepare(config_down)
    ncodes = _n_codes(config_up)
    up, down = s_up.heights, s_down.heights
    violating = int(np.sum(down > up))
    total = acc_u = acc_d = 0
    snaps_u, snaps_d = [], []
    done = 0
    while done < total_steps:
        k = min(total_steps - done, sweep_len if record else CHUNK)
        codes, us = stream.draw(k, ncodes)
        au, ad, _, _, tot, violating = kernels.coupled_steps(
            up, down, pu.floor, pu.ceil, pd.floor, pd.ceil, pu.logp, pu.min_off,
            pu.coef, pd.coef, codes, us, pu.interior, violating,
        )
        total += tot
        acc_u += au
        acc_d += ad
        done += k
        if record:
            snaps_u.append(up.copy())
            snaps_d.append(down.copy())
    shape = (0, config_up.n, config_up.length + 1)
    traj_u = np.stack(snaps_u) if snaps_u else np.empty(shape, dtype=np.int64)
    traj_d = np.stack(snaps_d) if snaps_d else np.empty(shape, dtype=np.int64)
    return CoupledRun(traj_u, traj_d, int(total), acc_u, acc_d)


def remove_top_curves(config: EnsembleConfig, j: int) -> EnsembleConfig:
    """Drop curves ``1..j-1``; the new top curve carries tilt ``a b^(j-1)``.

    The floor is kept, as is the ceiling (it bounds every curve from above).
    """
    if not 1 <= j <= config.n:
        raise ValueError(f"j = {j} outside 1..{config.n}")
    if j == 1:
        return config
    return config.replace(
        n=config.n - j + 1,
        a=config.a * config.b ** (j - 1),
        u=config.u[j - 1:],
        v=config.v[j - 1:],
    )


# -- diagnostics ---------------------------------------------------------------

class Diagnostics(NamedTuple):
    acceptance_rate: float
    integrated_autocorrelation_time: float
    effective_sample_size: float
    tau_stderr: float
    converged: bool


def integrated_autocorr_time(series: np.ndarray) -> tuple[float, float, bool]:
    """Initial-positive-sequence estimate of ``tau = 1 + 2 sum rho_t``.

    ``series`` is ``(chains, draws)``. Returns ``(tau, stderr, ok)``; a series
    with zero variance gives ``(inf, inf, False)``.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    m, T = x.shape
    if T < 2:
        raise ValueError("need at least two draws per chain")
    x = x - x.mean(axis=1, keepdims=True)
    var = np.mean(x**2)
    if not var > 0:
        return math.inf, math.inf, False
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :T].mean(axis=0) / T
    rho = acov / acov[0]
    tau = -1.0
    k = 0
    while 2 * k + 1 < T:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        k += 1
    tau = max(tau, 1.0 / np.log10(max(m * T, 10)))
    window = 2 * k + 1
    stderr = tau * math.sqrt(2.0 * (2 * window + 1) / (m * T))
    return float(tau), float(stderr), True


def diagnostics(samples: SampleSet) -> Diagnostics:
    """Acceptance rate and autocorrelation of the top curve at the midpoint."""
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    mid = samples.values(1, samples.midpoint)
    ids = np.unique(samples.chain)
    per = [mid[samples.chain == c] for c in ids]
    T = min(len(p) for p in per)
    series = np.stack([p[:T] for p in per])
    tau, se, ok = integrated_autocorr_time(series)
    ess = series.size / tau if ok else 0.0
    return Diagnostics(samples.acceptance_rate, tau, ess, se, ok)


def dump_manifest(samples: SampleSet, config: EnsembleConfig, path):
    body = samples.manifest()
    body["config"] = config_to_json(config)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)

