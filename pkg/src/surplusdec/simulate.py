"""Conditional-Markov path simulation and Monte Carlo estimators.

The simulation scheme mirrors the forward solver's product rule: per
substep the chain leaves state j for k with probability ``lambda_jk * h``
(point masses are applied exactly at their times), so empirical occupation
frequencies converge to the product-rule transition probabilities and
Monte Carlo comparisons against closed forms share the discretization.

Transitions triggered by densities are stamped at the substep midpoint so
that simulated jump times never collide with grid-point payment atoms or
intensity point masses; every path draws from its own counter-based stream
keyed by (seed, path index), which makes runs reproducible and
embarrassingly parallel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine
from .contract import ContractSpec, ValuationBasis
from .engine import EngineOptions
from .errors import ValidationError
from .markov import IntensityMatrix, PolicyPath
from .processes import _round_time


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int
    seed: int = 0
    substeps: int = 64
    horizon: float | None = None  # defaults to the intensity grid horizon

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("need at least one path")
        if self.substeps < 1:
            raise ValidationError("need at least one substep per cell")


def _scheme_tables(intensities: IntensityMatrix, config: SimulationConfig):
    """Per-substep transition probabilities and point-mass events.

    Returns (times, probs, point_events) where ``times[i]`` is the left
    endpoint of substep i with width ``widths[i]``, ``probs[i, j, k]`` the
    probability of a j->k move in that substep, and point events are
    (time, (S, S) mass matrix) applied exactly at their times.
    """
    grid = intensities.grid
    horizon = config.horizon or grid.horizon
    S = intensities.size
    idx = intensities.states.index
    lefts, widths = [], []
    pts = grid.points[grid.points <= horizon + 1e-12]
    if pts[-1] < horizon - 1e-12:
        pts = np.append(pts, horizon)
    for c in range(len(pts) - 1):
        a, b = pts[c], pts[c + 1]
        h = (b - a) / config.substeps
        for s in range(config.substeps):
            lefts.append(a + s * h)
            widths.append(h)
    lefts = np.asarray(lefts)
    widths = np.asarray(widths)
    probs = np.zeros((len(lefts), S, S))
    for (j, k), proc in intensities.entries.items():
        dens = np.array([proc.density_at(u + w) for u, w in zip(lefts, widths)])
        probs[:, idx(j), idx(k)] = dens * widths
    if np.any(probs.sum(axis=2) > 1.0 + 1e-12):
        raise ValidationError(
            "substep width too coarse: sum_k lambda_jk * h exceeds 1; "
            "increase substeps"
        )
    point_events = []
    for t in intensities.jump_times():
        if t <= horizon + 1e-12:
            mass = np.zeros((S, S))
            for (j, k), proc in intensities.entries.items():
                mass[idx(j), idx(k)] = proc.jump_at(t)
            point_events.append((t, mass))
    return lefts, widths, probs, point_events


def simulate_path(
    intensities: IntensityMatrix,
    config: SimulationConfig,
    stream_index: int,
) -> PolicyPath:
    """Simulate one trajectory from its own (seed, stream index) stream."""
    lefts, widths, probs, point_events = _scheme_tables(intensities, config)
    return _simulate_one(intensities, config, stream_index, lefts, widths, probs, point_events)


def _stream(seed: int, stream_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stream_index]))


def _simulate_one(intensities, config, stream_index, lefts, widths, probs, point_events):
    states = intensities.states
    rng = _stream(config.seed, stream_index)
    u = rng.random(len(lefts))
    pm = {(_round_time(t)): m for t, m in point_events}
    pm_pos = {t: int(np.searchsorted(lefts, t - 1e-12)) for t in pm}
    jumps = []
    state = states.index(states.initial)
    pos = 0
    n = len(lefts)
    while pos < n:
        # next point-mass event at or after pos, for the current state
        next_pm = None
        for t, p in sorted(pm_pos.items(), key=lambda kv: kv[1]):
            if p >= pos and pm[t][state].sum() > 0:
                next_pm = (t, p)
                break
        stop = next_pm[1] if next_pm is not None else n
        row = probs[pos:stop, state, :]  # (r, S)
        total = row.sum(axis=1)
        hit = np.nonzero(u[pos:stop] < total)[0]
        if hit.size:
            i = pos + int(hit[0])
            cum = np.cumsum(probs[i, state, :])
            target = int(np.searchsorted(cum, u[i], side="right"))
            tjump = lefts[i] + 0.5 * widths[i]  # midpoint: clear of node atoms
            jumps.append((tjump, states.states[state], states.states[target]))
            state = target
            pos = i + 1
            continue
        if next_pm is None:
            break
        t, p = next_pm
        cum = np.cumsum(pm[t][state])
        v = rng.random()
        if v < cum[-1]:
            target = int(np.searchsorted(cum, v, side="right"))
            jumps.append((t, states.states[state], states.states[target]))
            state = target
        del pm_pos[t]
        pos = p
    return PolicyPath(states, tuple(jumps))


def monte_carlo_mean(
    fn: Callable[[PolicyPath], float],
    intensities: IntensityMatrix,
    config: SimulationConfig,
) -> tuple:
    """Sample mean and standard error of a path functional over independent
    simulated trajectories."""
    tables = _scheme_tables(intensities, config)
    vals = np.empty(config.n_paths)
    for i in range(config.n_paths):
        path = _simulate_one(intensities, config, i, *tables)
        vals[i] = fn(path)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(config.n_paths)) if config.n_paths > 1 else 0.0
    return mean, se


# ---------------------------------------------------------------------------
# Fast path functionals (shared precomputation across many paths)
# ---------------------------------------------------------------------------

class PathFunctionals:
    """Precomputed evaluators of per-path quantities at a fixed time.

    ``revaluation(path)`` evaluates the individual revaluation surplus R(t)
    along the path; ``unsys_component(path, j, k)`` the closed-form
    unsystematic contribution of one transition.  Both use the same mesh
    and left-point rule as the closed-form mean quantities, so Monte Carlo
    averages are directly comparable with them.
    """

    def __init__(
        self,
        contract: ContractSpec,
        first_order: ValuationBasis,
        second_order: ValuationBasis,
        t: float,
        options: EngineOptions = EngineOptions(),
    ):
        self.t = float(t)
        self.contract = contract
        self.data = engine.build_model_data(
            contract, first_order, second_order, None, options,
            extra_times=[t], experience="mean",
        )
        d = self.data
        self.t_idx = d.mesh.index_of(t)
        self.states = contract.states
        nodes = d.mesh.nodes
        M = d.mesh.n_seg
        w_inv = 1.0 / d.kap_node
        # sojourn atoms: cumulative (1/kappa) dB_j over nodes <= index
        self.cum_atoms = np.cumsum(d.dB_node * w_inv[:, None], axis=0)
        # sojourn densities: cumulative left-point integral with per-segment slope
        self.ac_slope = d.soj_seg * w_inv[:M, None]  # (M, S)
        self.cum_ac = np.concatenate(
            [np.zeros((1, self.states.size)),
             np.cumsum(self.ac_slope * d.mesh.widths[:, None], axis=0)]
        )
        # unsystematic compensator: per-pair slopes (1/kappa) R* lambda
        self.u_slope = d.rstar_seg * d.lam_off_seg * w_inv[:M, None, None]  # (M,S,S)
        self.cum_u = np.concatenate(
            [np.zeros((1,) + self.u_slope.shape[1:]),
             np.cumsum(self.u_slope * d.mesh.widths[:, None, None], axis=0)]
        )
        self.nodes = nodes

    # -- helpers --------------------------------------------------------------

    def _cum_at(self, cum, slope, tau: float, col) -> float:
        """Piecewise-linear cumulative (exact for the left-point rule)."""
        d = self.data
        i = int(np.searchsorted(self.nodes, tau, side="right")) - 1
        i = min(max(i, 0), d.mesh.n_seg - 1)
        if abs(self.nodes[i] - tau) < 1e-12:
            return float(cum[(i,) + col])
        return float(cum[(i,) + col] + slope[(i,) + col] * (tau - self.nodes[i]))

    def _atoms_between(self, s: float, tau: float, j: int) -> float:
        """Sum of (1/kappa) dB_j over atom nodes in (s, tau]."""
        lo = int(np.searchsorted(self.nodes, s + 1e-12))
        hi = int(np.searchsorted(self.nodes, tau + 1e-12))
        lo_val = self.cum_atoms[lo - 1, j] if lo > 0 else 0.0
        hi_val = self.cum_atoms[hi - 1, j] if hi > 0 else 0.0
        return float(hi_val - lo_val)

    def _reserve_at(self, tau: float) -> np.ndarray:
        """Prudent reserve vector at an arbitrary time by one partial
        backward step from the next mesh node."""
        d = self.data
        i = int(np.searchsorted(self.nodes, tau, side="right")) - 1
        if i >= 0 and abs(self.nodes[i] - tau) < 1e-12:
            return d.V[i]
        i = d.mesh.seg_containing(tau)
        h = self.nodes[i + 1] - tau
        pseg = d.seg_factor(d.lams_off_seg[i], h)
        g = math.exp(d.phis_seg[i] * h)
        return h * d.cstar_seg[i] + (pseg @ d.Vleft[i + 1]) / g

    def _segments(self, path: PolicyPath):
        """(start, end, state index) segments of the path on [0, t]."""
        segs = []
        cur = 0.0
        state = self.states.index(self.states.initial)
        for tau, frm, to in path.jumps:
            if tau > self.t:
                break
            segs.append((cur, tau, state))
            cur = tau
            state = self.states.index(to)
        segs.append((cur, self.t, state))
        return segs

    # -- functionals -----------------------------------------------------------

    def revaluation(self, path: PolicyPath) -> float:
        """Individual R(t) along the path (realized payments discounted at
        realized returns plus the occupied-state reserve)."""
        d = self.data
        acc = float(d.dB_node[0, self.states.index(self.states.initial)])
        for s, e, j in self._segments(path):
            acc += self._atoms_between(s, e, j)
            acc += self._cum_at(self.cum_ac, self.ac_slope, e, (j,)) - self._cum_at(
                self.cum_ac, self.ac_slope, s, (j,)
            )
        for tau, frm, to in path.jumps:
            if tau > self.t:
                break
            r, c = self.states.index(frm), self.states.index(to)
            pay = self.contract.transition.get((frm, to))
            if pay is None:
                continue
            if pay.fn is not None:
                kap = self._kappa(tau)
                acc += pay.fn(tau) / kap
            else:
                cell = self.contract.grid.cell_of(tau)
                ce = d.mesh.cell_end_node[cell]
                if self.nodes[ce] <= self.t + 1e-12:
                    acc += float(pay.lump[cell]) / d.kap_node[ce]
                else:
                    # committed but unpaid at t: prudent continuation discount
                    ratio = d.kaps_node[self.t_idx] / d.kaps_node[ce]
                    acc += float(pay.lump[cell]) * ratio / d.kap_node[self.t_idx]
        j_t = self.states.index(path.state_at(self.t))
        reserve = d.V[self.t_idx, j_t] / d.kap_node[self.t_idx]
        return -(acc + reserve)

    def _kappa(self, tau: float) -> float:
        d = self.data
        i = int(np.searchsorted(self.nodes, tau, side="right")) - 1
        i = min(max(i, 0), len(self.nodes) - 1)
        if abs(self.nodes[i] - tau) < 1e-12:
            return float(d.kap_node[i])
        return float(d.kap_node[i] * math.exp(d.phi_seg[d.mesh.seg_containing(tau)] * (tau - self.nodes[i])))

    def _kappa_star(self, tau: float) -> float:
        d = self.data
        i = int(np.searchsorted(self.nodes, tau, side="right")) - 1
        i = min(max(i, 0), len(self.nodes) - 1)
        if abs(self.nodes[i] - tau) < 1e-12:
            return float(d.kaps_node[i])
        return float(d.kaps_node[i] * math.exp(d.phis_seg[d.mesh.seg_containing(tau)] * (tau - self.nodes[i])))

    def unsys_component(self, path: PolicyPath, j, k) -> float:
        """Closed-form unsystematic contribution D_{u,jk}(t) along the path:
        realized-jump terms minus the occupied-state compensator."""
        d = self.data
        r, c = self.states.index(j), self.states.index(k)
        comp = 0.0
        for s, e, state in self._segments(path):
            if state != r:
                continue
            comp += self._cum_at(self.cum_u, self.u_slope, e, (r, c)) - self._cum_at(
                self.cum_u, self.u_slope, s, (r, c)
            )
        jump_term = 0.0
        for tau, frm, to in path.jumps:
            if tau > self.t:
                break
            if frm == j and to == k:
                v = self._reserve_at(tau)
                pay = self.contract.transition.get((j, k))
                b = 0.0
                if pay is not None and pay.fn is not None:
                    b = pay.fn(tau)
                elif pay is not None:
                    # prudent-continuation value at tau, as in the closed forms
                    cell = self.contract.grid.cell_of(tau)
                    ce = d.mesh.cell_end_node[cell]
                    b = float(pay.lump[cell]) * self._kappa_star(tau) / d.kaps_node[ce]
                rstar = b + float(v[c] - v[r])
                jump_term += rstar / self._kappa(tau)
            # point-mass compensator terms at exact event times
        for tnode in np.nonzero(d.dlam_off_node[:, r, c])[0]:
            if self.nodes[tnode] <= self.t + 1e-12:
                if path.state_before(self.nodes[tnode]) == j:
                    comp += (
                        d.rstar_node[tnode, r, c]
                        * d.dlam_off_node[tnode, r, c]
                        / d.kap_node[tnode]
                    )
        return -(jump_term - comp)
