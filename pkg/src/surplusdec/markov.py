"""Finite-state machinery: intensity matrices, the forward transition solver,
transition-matrix inverses and counting processes of realized paths.

The forward solver computes the matrix product integral of the cumulative
intensity: over absolutely continuous stretches it multiplies per-substep
factors ``I + lambda_M h`` (or the exact cell matrix exponential when
requested), and at a point mass it multiplies ``I + dL_M``.  Both rules
preserve row sums algebraically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import expm

from .errors import (
    AdmissibilityError,
    DomainError,
    SingularJumpError,
    ValidationError,
)
from .processes import FVProcess, TimeGrid, _round_time

_COND_LIMIT = 1e12  # invertibility gate for I + dL_M at point masses


@dataclass(frozen=True)
class StateSpace:
    """Ordered finite set of state labels with the initial state."""

    states: tuple
    initial: str

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValidationError("state space must be nonempty")
        if len(set(self.states)) != len(self.states):
            raise ValidationError("duplicate state labels")
        if self.initial not in self.states:
            raise ValidationError(f"initial state {self.initial!r} not in states")

    @property
    def size(self) -> int:
        return len(self.states)

    def index(self, label) -> int:
        return self.states.index(label)

    def pairs(self) -> list:
        return [(j, k) for j in self.states for k in self.states if j != k]


class IntensityMatrix:
    """Cumulative transition intensities: off-diagonal FVProcess per pair.

    The diagonal is defined by L_jj = -sum_{k != j} L_jk.  Admissibility:
    each off-diagonal entry is nondecreasing (density >= 0, jumps >= 0) and
    the total jump mass out of a state never exceeds 1.
    """

    def __init__(self, states: StateSpace, entries: Mapping, grid: TimeGrid | None = None):
        self.states = states
        ent = {}
        for (j, k), proc in entries.items():
            if j not in states.states or k not in states.states or j == k:
                raise ValidationError(f"bad transition pair ({j!r}, {k!r})")
            ent[(j, k)] = proc
        if grid is None:
            if not ent:
                raise ValidationError("empty intensity matrix needs an explicit grid")
            pts = None
            for proc in ent.values():
                pts = proc.grid.points if pts is None else np.union1d(pts, proc.grid.points)
            grid = TimeGrid(pts)
        self.grid = grid
        self.entries = {pair: proc.on_grid(self.grid) for pair, proc in ent.items()}
        self._validate()
        self._jump_times = sorted(
            {t for proc in self.entries.values() for t, _ in proc.jumps}
        )

    def _validate(self):
        mass = {}
        for (j, k), proc in self.entries.items():
            if np.any(proc.densities < 0):
                raise AdmissibilityError(f"negative intensity density for {j}->{k}")
            for t, v in proc.jumps:
                if v < 0:
                    raise AdmissibilityError(f"negative intensity jump for {j}->{k} at {t}")
                mass[(j, t)] = mass.get((j, t), 0.0) + v
        for (j, t), total in mass.items():
            if total > 1.0 + 1e-12:
                raise AdmissibilityError(
                    f"jump mass exceeds 1 out of state {j!r} at t={t} (total {total})"
                )

    @property
    def size(self) -> int:
        return self.states.size

    def pairs(self) -> list:
        return list(self.entries)

    def jump_times(self) -> list:
        return list(self._jump_times)

    def generator(self, t: float) -> np.ndarray:
        """Density matrix lambda_M on the cell containing t, diagonal filled."""
        n = self.size
        lam = np.zeros((n, n))
        for (j, k), proc in self.entries.items():
            lam[self.states.index(j), self.states.index(k)] = proc.density_at(t)
        lam[np.diag_indices(n)] = -lam.sum(axis=1)
        return lam

    def jump_matrix(self, t: float) -> np.ndarray:
        """Point-mass matrix dL_M(t), diagonal filled."""
        n = self.size
        dl = np.zeros((n, n))
        for (j, k), proc in self.entries.items():
            dl[self.states.index(j), self.states.index(k)] = proc.jump_at(t)
        dl[np.diag_indices(n)] = -dl.sum(axis=1)
        return dl

    def cumulative(self, j, k, t: float) -> float:
        proc = self.entries.get((j, k))
        return proc.value(t) if proc is not None else 0.0


@dataclass(frozen=True)
class PolicyPath:
    """Realized jump trajectory: ordered (time, from_state, to_state) records."""

    states: StateSpace
    jumps: tuple = ()

    def __post_init__(self):
        prev_t, prev_state = 0.0, self.states.initial
        for t, frm, to in self.jumps:
            if not (prev_t < t):
                raise ValidationError(f"jump times must be strictly increasing (t={t})")
            if frm != prev_state:
                raise ValidationError(
                    f"jump at t={t} leaves {frm!r} but path is in {prev_state!r}"
                )
            if to not in self.states.states or to == frm:
                raise ValidationError(f"bad target state {to!r} at t={t}")
            prev_t, prev_state = t, to
        object.__setattr__(
            self, "jumps", tuple((float(t), frm, to) for t, frm, to in self.jumps)
        )

    def state_at(self, t: float) -> str:
        state = self.states.initial
        for u, _, to in self.jumps:
            if u <= t:
                state = to
            else:
                break
        return state

    def state_before(self, t: float) -> str:
        """State at t-, i.e. just before any jump at t."""
        state = self.states.initial
        for u, _, to in self.jumps:
            if u < t:
                state = to
            else:
                break
        return state

    def jump_times(self) -> list:
        return [t for t, _, _ in self.jumps]


def state_indicator(path: PolicyPath, j, t: float, left: bool = False) -> int:
    """Indicator 1{Z(t) = j}; with ``left=True`` the pre-jump state is used."""
    state = path.state_before(t) if left else path.state_at(t)
    return 1 if state == j else 0


def counting_process(path: PolicyPath, grid: TimeGrid) -> IntensityMatrix:
    """N_jk(t) = number of realized j->k transitions in (0, t].

    Returned in intensity-matrix shape: unit jumps at the transition times,
    zero densities.  The grid is refined by the path's jump times.
    """
    g = grid.insert(path.jump_times())
    per_pair: dict = {}
    for t, frm, to in path.jumps:
        per_pair.setdefault((frm, to), {})[_round_time(t)] = (
            per_pair.get((frm, to), {}).get(_round_time(t), 0.0) + 1.0
        )
    entries = {pair: FVProcess.from_jumps(g, jmp) for pair, jmp in per_pair.items()}
    return IntensityMatrix(path.states, entries, grid=g)


# ---------------------------------------------------------------------------
# Forward solver and inverses
# ---------------------------------------------------------------------------

def _solver_nodes(grid: TimeGrid, s: float, substeps: int, jump_times) -> np.ndarray:
    pts = grid.insert(jump_times).points
    pts = pts[pts >= s - 1e-15]
    if pts.size == 0 or pts[0] > s:
        pts = np.concatenate([[s], pts[pts > s]])
    nodes = [float(pts[0])]
    for b in pts[1:]:
        a = nodes[-1]
        for k in range(1, substeps):
            nodes.append(a + (b - a) * k / substeps)
        nodes.append(float(b))
    return np.asarray(nodes)


class TransitionField:
    """Matrix function t -> p(s, t) tabulated on solver nodes."""

    def __init__(self, states: StateSpace, start: float, nodes: np.ndarray, mats: np.ndarray):
        self.states = states
        self.start = start
        self.nodes = nodes
        self.mats = mats  # (len(nodes), S, S)

    def at(self, t: float) -> np.ndarray:
        if t < self.start - 1e-12 or t > self.nodes[-1] + 1e-12:
            raise DomainError(f"t={t} outside [{self.start}, {self.nodes[-1]}]")
        i = int(np.searchsorted(self.nodes, t))
        for cand in (i - 1, i, i + 1):
            if 0 <= cand < len(self.nodes) and abs(self.nodes[cand] - t) < 1e-10:
                return self.mats[cand]
        raise DomainError(f"t={t} is not a solver node")

    def entry(self, j, k, t: float) -> float:
        m = self.at(t)
        return float(m[self.states.index(j), self.states.index(k)])

    def __call__(self, t: float) -> np.ndarray:
        return self.at(t)


def _cell_factor(lam: np.ndarray, h: float, mode: str) -> np.ndarray:
    if mode == "expm":
        return expm(lam * h)
    return np.eye(lam.shape[0]) + lam * h


def kolmogorov_forward(
    intensities: IntensityMatrix,
    s: float = 0.0,
    substeps: int = 64,
    mode: str = "product",
) -> TransitionField:
    """Solve p(s, dt) = p(s, t-) dL_M(t), p(s, s) = I, forward in t.

    ``mode="product"`` uses the left-point factor ``I + lambda_M h`` per
    substep; ``mode="expm"`` uses the exact matrix exponential per stretch
    of constant density.  Point masses contribute ``I + dL_M(u)`` factors.
    """
    if mode not in ("product", "expm"):
        raise ValidationError(f"unknown solver mode {mode!r}")
    nodes = _solver_nodes(intensities.grid, s, substeps, intensities.jump_times())
    n = intensities.size
    mats = np.empty((len(nodes), n, n))
    p = np.eye(n)
    mats[0] = p
    for i in range(1, len(nodes)):
        u, v = nodes[i - 1], nodes[i]
        lam = intensities.generator(v)
        p = p @ _cell_factor(lam, v - u, mode)
        dl = intensities.jump_matrix(v)
        if np.any(dl):
            p = p @ (np.eye(n) + dl)
        mats[i] = p
    return TransitionField(intensities.states, s, nodes, mats)


def inverse_transition(
    intensities: IntensityMatrix,
    s: float = 0.0,
    substeps: int = 64,
    mode: str = "sde",
    solver_mode: str = "product",
) -> TransitionField:
    """Inverse q(s, t) of the forward solution: p(s, t) q(s, t) = I.

    ``mode="sde"`` steps the inverse dynamics dq = -(dG) q(t-) with the
    jump-corrected drift G (equivalently q(t) = (I + dL_M)^{-1} q(t-) at
    point masses) using factors that invert the forward factors exactly;
    ``mode="direct"`` inverts the tabulated forward matrices node by node.
    Point masses with cond(I + dL_M) above 1e12 raise ``SingularJumpError``.
    """
    if mode not in ("sde", "direct"):
        raise ValidationError(f"unknown inverse mode {mode!r}")
    field = kolmogorov_forward(intensities, s, substeps, solver_mode)
    n = intensities.size
    qmats = np.empty_like(field.mats)
    if mode == "direct":
        for i, t in enumerate(field.nodes):
            dl = intensities.jump_matrix(t)
            if np.any(dl):
                _check_jump_invertible(dl, t)
            qmats[i] = np.linalg.inv(field.mats[i])
        return TransitionField(intensities.states, s, field.nodes, qmats)

    q = np.eye(n)
    qmats[0] = q
    eye = np.eye(n)
    for i in range(1, len(field.nodes)):
        u, v = field.nodes[i - 1], field.nodes[i]
        lam = intensities.generator(v)
        if solver_mode == "expm":
            q = expm(-lam * (v - u)) @ q
        else:
            q = np.linalg.inv(eye + lam * (v - u)) @ q
        dl = intensities.jump_matrix(v)
        if np.any(dl):
            _check_jump_invertible(dl, v)
            # dG = dL - dL^2 (I + dL)^{-1};  I - dG equals (I + dL)^{-1}
            inv = np.linalg.inv(eye + dl)
            dg = dl - dl @ dl @ inv
            q = (eye - dg) @ q
        qmats[i] = q
    return TransitionField(intensities.states, s, field.nodes, qmats)


def _check_jump_invertible(dl: np.ndarray, t: float):
    m = np.eye(dl.shape[0]) + dl
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularJumpError(float(t), float(cond))
