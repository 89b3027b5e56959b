"""Calculus of cadlag finite-variation paths.

Every driving quantity of the library (cumulative returns, cumulative
transition intensities, payment streams, counting processes) is a
:class:`FVProcess`: a piecewise-constant density on a time grid plus
finitely many point jumps.  On this class all constructions are pathwise
and deterministic: Stieltjes integrals, the Doleans exponential, the
tilde transform used for reciprocal exponentials, jump covariations and
stopped processes.

Conventions
-----------
* ``P(t) = P(0-) + int_0^t density du + sum_{0<=s<=t} jump(s)`` with
  ``P(0-) = 0``; paths are right-continuous with left limits.
* Integrals over ``(s, t]`` use the predictable convention: jump terms are
  weighted with the integrand's left limit ``f(u-)``.
* The absolutely continuous part of an integral is approximated by a
  first-order left-point rule on a refinement subgrid (piecewise-constant
  integrands are integrated exactly).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AdmissibilityError, DomainError, EvaluationError, ValidationError

_TIME_DECIMALS = 12  # times are deduplicated/matched after rounding to this


def _round_time(t: float) -> float:
    return round(float(t), _TIME_DECIMALS)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points from 0 to the horizon T (in years)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ValidationError("grid needs at least two points")
        if pts[0] != 0.0:
            raise ValidationError("grid must start at 0")
        if not np.all(np.diff(pts) > 0):
            raise ValidationError("grid points must be strictly increasing")
        pts.setflags(write=False)

    @classmethod
    def regular(cls, horizon: float, cells: int = 1) -> "TimeGrid":
        return cls(np.linspace(0.0, float(horizon), cells + 1))

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def n_cells(self) -> int:
        return len(self.points) - 1

    def cell_of(self, t: float) -> int:
        """Index of the cell (points[i], points[i+1]] containing t; cell 0 owns t=0."""
        if t < 0 or t > self.horizon:
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        i = int(np.searchsorted(self.points, t, side="left")) - 1
        return max(i, 0)

    def insert(self, times: Iterable[float]) -> "TimeGrid":
        extra = [_round_time(t) for t in times if 0.0 < t < self.horizon]
        if not extra:
            return self
        merged = np.union1d(self.points, np.asarray(extra, dtype=float))
        if len(merged) == len(self.points):
            return self
        return TimeGrid(merged)


@dataclass(frozen=True)
class FVProcess:
    """Cadlag finite-variation path: per-cell density plus point jumps.

    ``densities`` holds one rate (per year) for each grid cell; ``jumps``
    maps jump times (which must be grid points) to jump sizes.
    """

    grid: TimeGrid
    densities: np.ndarray
    jumps: tuple = ()
    # derived arrays, populated in __post_init__
    _jump_times: np.ndarray = field(repr=False, default=None)
    _jump_sizes: np.ndarray = field(repr=False, default=None)
    _cum_density: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        dens = np.asarray(self.densities, dtype=float)
        if dens.shape != (self.grid.n_cells,):
            raise ValidationError(
                f"densities must have one entry per grid cell "
                f"({self.grid.n_cells}), got shape {dens.shape}"
            )
        dens.setflags(write=False)
        object.__setattr__(self, "densities", dens)

        if isinstance(self.jumps, dict):
            items = sorted((_round_time(t), float(v)) for t, v in self.jumps.items())
        else:
            items = sorted((_round_time(t), float(v)) for t, v in self.jumps)
        items = [(t, v) for t, v in items if v != 0.0]
        object.__setattr__(self, "jumps", tuple(items))
        jt = np.array([t for t, _ in items], dtype=float)
        jv = np.array([v for _, v in items], dtype=float)
        grid_pts = set(np.round(self.grid.points, _TIME_DECIMALS))
        for t in jt:
            if t not in grid_pts:
                raise ValidationError(f"jump time {t} is not a grid point")
        cum = np.concatenate(
            [[0.0], np.cumsum(dens * np.diff(self.grid.points))]
        )
        for arr, name in ((jt, "_jump_times"), (jv, "_jump_sizes"), (cum, "_cum_density")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, grid: TimeGrid) -> "FVProcess":
        return cls(grid, np.zeros(grid.n_cells))

    @classmethod
    def from_rate(cls, grid: TimeGrid, rate) -> "FVProcess":
        """Constant or per-cell rate, no jumps."""
        dens = np.broadcast_to(np.asarray(rate, dtype=float), (grid.n_cells,)).copy()
        return cls(grid, dens)

    @classmethod
    def from_jumps(cls, grid: TimeGrid, jumps: dict) -> "FVProcess":
        return cls(grid, np.zeros(grid.n_cells), tuple(jumps.items()))

    # -- evaluation ----------------------------------------------------------

    def _check_domain(self, t: float):
        if t < 0.0 or t > self.grid.horizon + 1e-12:
            raise DomainError(f"t={t} outside [0, {self.grid.horizon}]")

    def continuous_part(self, t: float) -> float:
        """Exact value of int_0^t density du (piecewise linear in t)."""
        self._check_domain(t)
        pts = self.grid.points
        i = int(np.searchsorted(pts, t, side="right")) - 1
        i = min(i, self.grid.n_cells - 1)
        return float(self._cum_density[i] + self.densities[i] * (t - pts[i]))

    def jump_at(self, t: float) -> float:
        t = _round_time(t)
        i = int(np.searchsorted(self._jump_times, t))
        if i < len(self._jump_times) and self._jump_times[i] == t:
            return float(self._jump_sizes[i])
        return 0.0

    def value(self, t: float) -> float:
        """Right-continuous value P(t)."""
        self._check_domain(t)
        k = int(np.searchsorted(self._jump_times, _round_time(t), side="right"))
        return self.continuous_part(t) + float(np.sum(self._jump_sizes[:k]))

    def left(self, t: float) -> float:
        """Left limit P(t-) = P(t) - jump(t)."""
        return self.value(t) - self.jump_at(t)

    def __call__(self, t: float) -> float:
        return self.value(t)

    def jump_times_in(self, s: float, t: float) -> np.ndarray:
        """Jump times u with s < u <= t."""
        lo = int(np.searchsorted(self._jump_times, _round_time(s), side="right"))
        hi = int(np.searchsorted(self._jump_times, _round_time(t), side="right"))
        return self._jump_times[lo:hi]

    def density_at(self, t: float) -> float:
        """Density on the cell (points[i], points[i+1]] containing t (cell 0 owns 0)."""
        return float(self.densities[self.grid.cell_of(t)])

    # -- algebra ------------------------------------------------------------

    def on_grid(self, grid: TimeGrid) -> "FVProcess":
        """Re-express the path on a refinement of its own grid (same values)."""
        if grid is self.grid or np.array_equal(grid.points, self.grid.points):
            return self
        own = set(np.round(self.grid.points, _TIME_DECIMALS))
        missing = own - set(np.round(grid.points, _TIME_DECIMALS))
        if missing:
            raise ValidationError(f"target grid is not a refinement (missing {sorted(missing)[:3]})")
        idx = np.searchsorted(self.grid.points, grid.points[:-1], side="right") - 1
        dens = self.densities[np.clip(idx, 0, self.grid.n_cells - 1)]
        return FVProcess(grid, dens, self.jumps)

    def _merged(self, other: "FVProcess"):
        if self.grid.horizon != other.grid.horizon:
            raise ValidationError("processes live on different horizons")
        grid = TimeGrid(np.union1d(self.grid.points, other.grid.points))
        return self.on_grid(grid), other.on_grid(grid)

    def __add__(self, other: "FVProcess") -> "FVProcess":
        a, b = self._merged(other)
        jumps = dict(a.jumps)
        for t, v in b.jumps:
            jumps[t] = jumps.get(t, 0.0) + v
        return FVProcess(a.grid, a.densities + b.densities, tuple(jumps.items()))

    def __sub__(self, other: "FVProcess") -> "FVProcess":
        return self + (-1.0) * other

    def __rmul__(self, c: float) -> "FVProcess":
        return FVProcess(
            self.grid, float(c) * self.densities, tuple((t, float(c) * v) for t, v in self.jumps)
        )


class ReturnProcess:
    """An FVProcess usable as a cumulative return: starts at 0, jumps > -1."""

    def __init__(self, base: FVProcess):
        if base.jump_at(0.0) != 0.0:
            raise AdmissibilityError("return process must not jump at t=0")
        if base._jump_sizes.size and np.min(base._jump_sizes) <= -1.0:
            bad = base._jump_times[np.argmin(base._jump_sizes)]
            raise AdmissibilityError(f"return jump <= -1 at t={bad}")
        self.base = base

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    def value(self, t: float) -> float:
        return self.base.value(t)

    def left(self, t: float) -> float:
        return self.base.left(t)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def evaluate(process: FVProcess, t: float) -> float:
    """Right-continuous value P(t)."""
    return process.value(t)


def evaluate_left(process: FVProcess, t: float) -> float:
    """Left limit P(t-)."""
    return process.left(t)


def _refinement_nodes(points: np.ndarray, s: float, t: float, substeps: int) -> np.ndarray:
    """Refinement of (s, t]: grid-cell-aligned substep boundaries clipped to
    the interval.  Alignment makes integrals exactly additive across splits
    at refinement nodes."""
    nodes = [s]
    for c in range(len(points) - 1):
        a, b = points[c], points[c + 1]
        if b <= s or a >= t:
            continue
        h = (b - a) / substeps
        for k in range(0, substeps + 1):
            u = a + k * h
            if s < u < t:
                nodes.append(u)
    nodes.append(t)
    return np.unique(np.asarray(nodes))


def stieltjes_integral(
    f: Callable[[float], float],
    process: FVProcess,
    s: float,
    t: float,
    substeps: int = 64,
    left: Callable[[float], float] | None = None,
) -> float:
    """Pathwise Lebesgue-Stieltjes integral int_(s,t] f dP.

    The absolutely continuous part is integrated with a left-point rule on
    ``substeps`` subintervals per grid cell; each jump u in (s, t]
    contributes ``f(u-) dP(u)`` where ``f(u-)`` is taken from ``left``
    (defaults to ``f`` for continuous integrands).
    """
    if s > t:
        raise DomainError(f"empty or reversed interval ({s}, {t}]")
    process._check_domain(s)
    process._check_domain(t)
    if s == t:
        return 0.0
    nodes = _refinement_nodes(process.grid.points, s, t, substeps)
    lefts, widths = nodes[:-1], np.diff(nodes)
    try:
        fvals = np.array([float(f(u)) for u in lefts])
    except Exception as exc:  # surface which node failed
        raise EvaluationError(f"integrand not evaluable on ({s}, {t}]: {exc}") from exc
    dens = np.array([process.density_at(u + w) for u, w in zip(lefts, widths)])
    total = float(np.sum(fvals * dens * widths))
    fl = left if left is not None else f
    for u in process.jump_times_in(s, t):
        try:
            fu = float(fl(u))
        except Exception as exc:
            raise EvaluationError(f"integrand not evaluable at {u}-: {exc}") from exc
        total += fu * process.jump_at(u)
    return total


class DoleansExponential:
    """Solution kappa of d kappa = kappa(-) dPhi, kappa(0) = 1.

    For finite-variation Phi the solution is the exact product
    ``exp(int_0^t phi du) * prod_{s<=t} (1 + dPhi(s))``, strictly positive
    whenever all jumps exceed -1.
    """

    def __init__(self, phi: ReturnProcess | FVProcess):
        base = phi.base if isinstance(phi, ReturnProcess) else phi
        if base._jump_sizes.size and np.min(base._jump_sizes) <= -1.0:
            bad = base._jump_times[np.argmin(base._jump_sizes)]
            raise AdmissibilityError(f"return jump <= -1 at t={bad}")
        self.phi = base
        self._jump_prefix = np.concatenate([[1.0], np.cumprod(1.0 + base._jump_sizes)])

    def value(self, t: float) -> float:
        k = int(np.searchsorted(self.phi._jump_times, _round_time(t), side="right"))
        return float(np.exp(self.phi.continuous_part(t)) * self._jump_prefix[k])

    def left(self, t: float) -> float:
        return self.value(t) / (1.0 + self.phi.jump_at(t))

    def __call__(self, t: float) -> float:
        return self.value(t)


def doleans_exponential(phi: ReturnProcess | FVProcess) -> DoleansExponential:
    """Stochastic exponential of an admissible return process."""
    return DoleansExponential(phi)


def tilde_transform(phi: ReturnProcess | FVProcess) -> FVProcess:
    """Jump-corrected return driving the reciprocal exponential.

    The density is unchanged (finite-variation paths have zero continuous
    quadratic variation) and each jump dPhi(s) becomes
    dPhi(s) - dPhi(s)^2 / (1 + dPhi(s)) = dPhi(s) / (1 + dPhi(s)).
    """
    base = phi.base if isinstance(phi, ReturnProcess) else phi
    if base._jump_sizes.size and np.min(base._jump_sizes) <= -1.0:
        raise AdmissibilityError("jump <= -1")
    jumps = tuple((t, v / (1.0 + v)) for t, v in base.jumps)
    return FVProcess(base.grid, base.densities, jumps)


def jump_covariation(p: FVProcess, q: FVProcess, t: float) -> float:
    """[P, Q](t) = sum_{s<=t} dP(s) dQ(s); purely discontinuous here."""
    tp = dict(zip(np.round(p._jump_times, _TIME_DECIMALS), p._jump_sizes))
    total = 0.0
    for u, v in zip(q._jump_times, q._jump_sizes):
        if u <= t + 1e-15 and u in tp:
            total += tp[u] * v
    return total


def assert_no_simultaneous_jumps(processes: Sequence[FVProcess]) -> bool:
    """True iff no time carries jumps of two of the listed processes."""
    seen: set = set()
    for proc in processes:
        times = set(np.round(proc._jump_times, _TIME_DECIMALS))
        if seen & times:
            return False
        seen |= times
    return True


def stop_process(process: FVProcess, t: float) -> FVProcess:
    """Path frozen at time t: X^t(s) = X(min(s, t))."""
    process._check_domain(t)
    grid = process.grid.insert([t])
    base = process.on_grid(grid)
    dens = base.densities.copy()
    dens[grid.points[1:] > t + 1e-15] = 0.0
    jumps = tuple((u, v) for u, v in base.jumps if u <= t + 1e-15)
    return FVProcess(grid, dens, jumps)
