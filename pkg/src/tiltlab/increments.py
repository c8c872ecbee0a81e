"""Random walk increment laws given by a Hamiltonian on a finite grid.

An increment model assigns to every offset ``k`` (an integer number of grid
steps of size ``grid_step``) an energy ``H(k)``; the probability of the step
``k * grid_step`` is proportional to ``grid_step * exp(-H(k))``.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import logsumexp

DEFAULT_RADIUS = 16

__all__ = [
    "IncrementModel",
    "AssumptionReport",
    "build_lattice_model",
    "check_assumptions",
    "tilt_theta",
    "tilted",
    "discretize_continuous",
    "builtin_model",
    "model_from_json",
    "model_to_json",
    "resolve_model",
]


@dataclass(frozen=True, eq=False)
class IncrementModel:
    """Bounded-support increment law.

    Parameters
    ----------
    offsets : tuple of int
        Support of the law in grid units, strictly increasing.
    hamiltonian : tuple of float
        ``H(k)`` for each offset.
    grid_step : float
        Size of one grid unit in height units.
    """

    offsets: tuple[int, ...]
    hamiltonian: tuple[float, ...]
    grid_step: float = 1.0
    log_norm: float = field(init=False)
    probs: np.ndarray = field(init=False, repr=False)
    mean: float = field(init=False)
    variance: float = field(init=False)

    def __post_init__(self):
        if len(self.offsets) != len(self.hamiltonian):
            raise ValueError("offsets and hamiltonian differ in length")
        if len(self.offsets) < 2:
            raise ValueError("an increment law needs at least two support points")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("offsets must be strictly increasing")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        h = np.asarray(self.hamiltonian, dtype=float)
        if not np.all(np.isfinite(h)):
            raise ValueError("Hamiltonian values must be finite")
        log_w = math.log(self.grid_step) - h
        log_norm = float(logsumexp(log_w))
        if not np.isfinite(log_norm):
            raise ValueError("normalization is not finite")
        probs = np.exp(log_w - log_norm)
        probs.setflags(write=False)
        x = self.values
        mean = float(probs @ x)
        var = float(probs @ (x - mean) ** 2)
        object.__setattr__(self, "log_norm", log_norm)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def normalization(self) -> float:
        return math.exp(self.log_norm)

    @property
    def values(self) -> np.ndarray:
        """Step sizes in height units."""
        return np.asarray(self.offsets, dtype=float) * self.grid_step

    @property
    def min_offset(self) -> int:
        return self.offsets[0]

    @property
    def max_offset(self) -> int:
        return self.offsets[-1]

    @property
    def contiguous_with_zero(self) -> bool:
        full = self.offsets[-1] - self.offsets[0] + 1 == len(self.offsets)
        return full and self.offsets[0] <= 0 <= self.offsets[-1]

    @property
    def period(self) -> int:
        """gcd of the pairwise offset differences (1 for aperiodic walks)."""
        diffs = [b - self.offsets[0] for b in self.offsets[1:]]
        return reduce(math.gcd, diffs)

    @property
    def convex(self) -> bool:
        if self.offsets[-1] - self.offsets[0] + 1 != len(self.offsets):
            # a gap means H = +inf strictly inside the support hull
            return False
        h = np.asarray(self.hamiltonian)
        return bool(np.all(np.diff(h, 2) >= -1e-12))

    def log_prob_table(self) -> np.ndarray:
        """Dense ``log p`` indexed by ``offset - min_offset`` (``-inf`` in gaps)."""
        span = self.offsets[-1] - self.offsets[0] + 1
        table = np.full(span, -np.inf)
        table[np.asarray(self.offsets) - self.offsets[0]] = np.log(self.probs)
        return table

    def log_prob(self, offset: int) -> float:
        k = offset - self.offsets[0]
        if k < 0 or k > self.offsets[-1] - self.offsets[0]:
            return -math.inf
        return float(self.log_prob_table()[k])

    def prob_dict(self) -> dict[int, float]:
        return dict(zip(self.offsets, self.probs.tolist()))

    def reachable(self, start: int, end: int, steps: int) -> bool:
        """Whether ``end`` can be reached from ``start`` in ``steps`` grid steps."""
        d = end - start
        if d < self.offsets[0] * steps or d > self.offsets[-1] * steps:
            return False
        return (d - steps * self.offsets[0]) % self.period == 0

    def same_law(self, other: "IncrementModel", tol: float = 1e-12) -> bool:
        return (
            self.offsets == other.offsets
            and math.isclose(self.grid_step, other.grid_step)
            and bool(np.all(np.abs(self.probs - other.probs) <= tol))
        )

    def __repr__(self):
        return (
            f"IncrementModel(support=[{self.offsets[0]}, {self.offsets[-1]}], "
            f"grid_step={self.grid_step}, mean={self.mean:.3g}, var={self.variance:.3g})"
        )


class AssumptionReport(NamedTuple):
    convex: bool
    zero_mean: bool
    finite_mgf: bool
    support_bound: float


def build_lattice_model(entries, grid_step: float = 1.0) -> IncrementModel:
    """Build a model from ``(offset, H)`` pairs or an ``{offset: H}`` mapping."""
    if isinstance(entries, dict):
        entries = entries.items()
    pairs = sorted((int(k), float(h)) for k, h in entries)
    if len(pairs) < 2:
        raise ValueError("an increment law needs at least two support points")
    if len({k for k, _ in pairs}) != len(pairs):
        raise ValueError("duplicate offsets")
    offsets, ham = zip(*pairs)
    return IncrementModel(tuple(offsets), tuple(ham), grid_step)


def check_assumptions(model: IncrementModel) -> AssumptionReport:
    sd = math.sqrt(model.variance)
    bound = max(abs(model.offsets[0]), abs(model.offsets[-1])) * model.grid_step
    return AssumptionReport(
        convex=model.convex,
        zero_mean=abs(model.mean) <= 1e-10 * sd,
        finite_mgf=True,
        support_bound=bound,
    )


def _log_mgf(model: IncrementModel, theta: float) -> float:
    return float(logsumexp(theta * model.values, b=model.probs))


def _tilted_mean(model: IncrementModel, theta: float) -> float:
    x = model.values
    lw = np.log(model.probs) + theta * x
    w = np.exp(lw - lw.max())
    return float(w @ x / w.sum())


def tilt_theta(model: IncrementModel, drift: float) -> float:
    """Exponential tilt giving the increment law the mean ``drift``.

    Solved by bisection on the strictly increasing tilted-mean function.
    """
    lo_x, hi_x = model.values[0], model.values[-1]
    if not lo_x < drift < hi_x:
        raise ValueError(f"drift {drift} outside the open support range ({lo_x}, {hi_x})")
    lo, hi = -1.0, 1.0
    while _tilted_mean(model, lo) > drift:
        lo *= 2.0
    while _tilted_mean(model, hi) < drift:
        hi *= 2.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _tilted_mean(model, mid) < drift:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    # one Newton correction; derivative of the tilted mean is the tilted variance
    var = tilted(model, theta).variance
    if var > 0:
        cand = theta - (_tilted_mean(model, theta) - drift) / var
        if lo <= cand <= hi:
            theta = cand
    return theta


def tilted(model: IncrementModel, theta: float) -> IncrementModel:
    """Reweight the increment law by ``exp(theta * x)``."""
    if theta == 0:
        return model
    ham = np.asarray(model.hamiltonian) - theta * model.values + _log_mgf(model, theta)
    return IncrementModel(model.offsets, tuple(ham.tolist()), model.grid_step)


def discretize_continuous(
    hamiltonian: Callable[[np.ndarray], np.ndarray],
    eps: float,
    radius: int | None = None,
) -> IncrementModel:
    """Restrict a continuous Hamiltonian to the grid ``eps * Z`` within ``[-1/eps, 1/eps]``.

    ``radius`` optionally truncates the support further to ``|k| <= radius`` grid steps.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    kmax = math.floor(1.0 / eps**2 + 1e-9)
    if radius is not None:
        kmax = min(kmax, int(radius))
    ks = np.arange(-kmax, kmax + 1)
    h = np.asarray(hamiltonian(ks * eps), dtype=float)
    h = np.broadcast_to(h, ks.shape)
    keep = np.isfinite(h)
    if keep.sum() < 3:
        raise ValueError(f"grid step {eps} leaves fewer than 3 usable support points")
    return IncrementModel(tuple(ks[keep].tolist()), tuple(h[keep].tolist()), float(eps))


_LAZY = ((-1, math.log(4.0)), (0, math.log(2.0)), (1, math.log(4.0)))
_SRW = ((-1, math.log(2.0)), (1, math.log(2.0)))


def builtin_model(name: str) -> IncrementModel:
    """Named models: ``lazy-srw``, ``srw``, ``laplace(beta[, radius])``, ``gauss([radius])``."""
    name = name.strip().lower()
    if name == "lazy-srw":
        return build_lattice_model(_LAZY)
    if name == "srw":
        return build_lattice_model(_SRW)
    m = re.fullmatch(r"(laplace|gauss)\s*\(([^)]*)\)", name) or re.fullmatch(r"(gauss)()", name)
    if m is None:
        raise ValueError(f"unknown increment model {name!r}")
    kind = m.group(1)
    args = [float(s) for s in m.group(2).split(",") if s.strip()]
    if kind == "laplace":
        if not 1 <= len(args) <= 2:
            raise ValueError("laplace expects (beta[, radius])")
        beta = args[0]
        radius = int(args[1]) if len(args) > 1 else DEFAULT_RADIUS
        return build_lattice_model((k, beta * abs(k)) for k in range(-radius, radius + 1))
    if len(args) > 1:
        raise ValueError("gauss expects ([radius])")
    radius = int(args[0]) if args else DEFAULT_RADIUS
    return build_lattice_model((k, 0.5 * k * k) for k in range(-radius, radius + 1))


def model_to_json(model: IncrementModel) -> dict:
    return {
        "grid_step": model.grid_step,
        "entries": [[k, h] for k, h in zip(model.offsets, model.hamiltonian)],
    }


def model_from_json(obj) -> IncrementModel:
    if isinstance(obj, str):
        obj = json.loads(obj)
    unknown = set(obj) - {"grid_step", "entries"}
    if unknown:
        raise ValueError(f"unknown model fields: {sorted(unknown)}")
    return build_lattice_model(obj["entries"], float(obj.get("grid_step", 1.0)))


def resolve_model(spec) -> IncrementModel:
    """Accept a model, a built-in name, or an inline JSON object."""
    if isinstance(spec, IncrementModel):
        return spec
    if isinstance(spec, str):
        return builtin_model(spec)
    if isinstance(spec, dict):
        return model_from_json(spec)
    raise TypeError(f"cannot interpret {spec!r} as an increment model")

