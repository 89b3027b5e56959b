"""Shared numerical core for valuation-functional evaluation.

Everything here operates on one global *mesh*: the contract grid refined by
a configurable number of substeps per cell, united with every jump time of
the driving processes and any extra times a computation needs (partition
points, policy-path jumps, evaluation times).  Between consecutive mesh
nodes all processes are absolutely continuous with constant density, so

* the compounding factor evolves by exact exponential factors,
* occupation rows evolve by left-point product factors ``I + lambda_M h``
  (or per-segment matrix exponentials in ``expm`` mode),
* payment integrals use the left-point rule,
* point masses act exactly at nodes.

The same discretization is used for forward value sweeps, the backward
reserve recursion and the closed-form contribution integrals, so identities
that hold pathwise in the continuum hold here up to the scheme's own
first-order error, and purely algebraic identities (telescoping sums,
row-sum preservation, discrete-model equalities) hold to roundoff.

End-of-cell lump transition payments (amount fixed per grid cell, paid at
the cell's right endpoint) are handled by accumulating expected transition
mass and flushing it against the compounding factor at the cell end; in
purely prudent-basis contexts this is equivalent to a transition payment of
``kappa*(s)/kappa*(cell end) * amount`` at the transition time itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import AdmissibilityError, DomainError, ValidationError
from .markov import IntensityMatrix, PolicyPath, StateSpace
from .processes import FVProcess, TimeGrid, _round_time


@dataclass(frozen=True)
class EngineOptions:
    """Discretization settings shared by every evaluation."""

    substeps: int = 64
    solver: str = "product"  # "product" | "expm"

    def __post_init__(self):
        if self.substeps < 1:
            raise ValidationError("substeps must be >= 1")
        if self.solver not in ("product", "expm"):
            raise ValidationError(f"unknown solver mode {self.solver!r}")


# ---------------------------------------------------------------------------
# Mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    grid: TimeGrid
    nodes: np.ndarray          # (M+1,)
    widths: np.ndarray         # (M,)
    cell_of_seg: np.ndarray    # (M,)   contract cell owning segment (u, v]
    cell_of_node: np.ndarray   # (M+1,) contract cell owning the node time (cell 0 owns 0)
    ended_cell: np.ndarray     # (M+1,) cell index ending exactly at the node, else -1
    cell_end_node: np.ndarray  # (ncells,) node index of each cell's right endpoint

    @property
    def n_seg(self) -> int:
        return len(self.widths)

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.nodes, t))
        for cand in (i - 1, i, i + 1):
            if 0 <= cand < len(self.nodes) and abs(self.nodes[cand] - t) < 1e-10:
                return cand
        raise DomainError(f"t={t} is not a mesh node")

    def seg_containing(self, t: float) -> int:
        """Segment (nodes[i], nodes[i+1]] containing interior time t."""
        i = int(np.searchsorted(self.nodes, t, side="left")) - 1
        return int(np.clip(i, 0, self.n_seg - 1))


def build_mesh(grid: TimeGrid, substeps: int, extra_times: Iterable[float] = ()) -> Mesh:
    pts = grid.points
    nodes = [0.0]
    for c in range(grid.n_cells):
        a, b = pts[c], pts[c + 1]
        for k in range(1, substeps):
            nodes.append(a + (b - a) * k / substeps)
        nodes.append(b)
    extra = [
        _round_time(t)
        for t in extra_times
        if 0.0 < _round_time(t) < grid.horizon
    ]
    all_nodes = np.union1d(np.round(np.asarray(nodes), 12), np.asarray(extra, dtype=float))
    widths = np.diff(all_nodes)
    if np.any(widths <= 0):
        raise ValidationError("degenerate mesh (coincident nodes)")
    cell_of_seg = np.clip(np.searchsorted(pts, all_nodes[1:], side="left") - 1, 0, None)
    cell_of_node = np.clip(np.searchsorted(pts, all_nodes, side="left") - 1, 0, None)
    ended = np.full(len(all_nodes), -1, dtype=int)
    cell_end_node = np.empty(grid.n_cells, dtype=int)
    for c in range(grid.n_cells):
        idx = int(np.searchsorted(all_nodes, pts[c + 1]))
        if idx >= len(all_nodes) or abs(all_nodes[idx] - pts[c + 1]) > 1e-10:
            idx -= 1
        ended[idx] = c
        cell_end_node[c] = idx
    return Mesh(grid, all_nodes, widths, cell_of_seg, cell_of_node, ended, cell_end_node)


def _sample_density(proc: FVProcess, mesh: Mesh) -> np.ndarray:
    """Density per mesh segment (constant on contract cells by construction)."""
    idx = np.searchsorted(proc.grid.points, mesh.nodes[1:], side="left") - 1
    return proc.densities[np.clip(idx, 0, proc.grid.n_cells - 1)]


def _sample_jumps(proc: FVProcess, mesh: Mesh) -> np.ndarray:
    out = np.zeros(len(mesh.nodes))
    for t, v in proc.jumps:
        out[mesh.index_of(t)] += v
    return out


# ---------------------------------------------------------------------------
# Model data
# ---------------------------------------------------------------------------

@dataclass
class ModelData:
    """All mesh-sampled inputs for one (contract, bases, optional path)."""

    states: StateSpace
    mesh: Mesh
    options: EngineOptions
    initial_idx: int
    # payments
    soj_seg: np.ndarray        # (M, S)   sojourn densities at segment left
    dB_node: np.ndarray        # (M+1, S) sojourn atoms
    bplain_node: np.ndarray    # (M+1, S, S) plain transition payment values
    lump_cell: np.ndarray      # (ncells, S, S) end-of-cell lump amounts
    has_lumps: bool
    # first-order basis
    phis_seg: np.ndarray       # (M,)
    dphis_node: np.ndarray     # (M+1,)
    lams_off_seg: np.ndarray   # (M, S, S) off-diagonal intensity densities
    dlams_off_node: np.ndarray
    kaps_node: np.ndarray      # prudent compounding factor at nodes
    kaps_left: np.ndarray
    # second-order returns
    phi_seg: np.ndarray
    dphi_node: np.ndarray
    kap_node: np.ndarray
    kap_left: np.ndarray
    # second-order intensities and the experience slot (counting or compensated)
    lam_off_seg: np.ndarray
    dlam_off_node: np.ndarray
    lame_off_seg: np.ndarray
    dlame_off_node: np.ndarray
    dn_node: np.ndarray        # (M+1, S, S) realized transition counts (zeros for mean)
    # derived
    V: np.ndarray = None       # (M+1, S) prudent reserve, right values
    Vleft: np.ndarray = None
    cstar_seg: np.ndarray = None   # (M, S) prudent payment densities (incl. lump collapse)
    prow: np.ndarray = None    # (M+1, S) occupation row under the experience basis
    prow_left: np.ndarray = None
    rstar_seg: np.ndarray = None   # (M, S, S) sums at risk at segment left, realized-return lumps
    rstar_node: np.ndarray = None  # (M+1, S, S) same at nodes (for point-mass times)
    _expm_cache: dict = field(default_factory=dict)

    # -- solver factors ------------------------------------------------------

    def seg_factor(self, lam_off: np.ndarray, h: float) -> np.ndarray:
        """Transition factor over one segment for a full generator built
        from the given off-diagonal density matrix."""
        n = lam_off.shape[0]
        full = lam_off - np.diag(lam_off.sum(axis=1))
        if self.options.solver == "expm":
            key = (round(float(h), 15), full.tobytes())
            hit = self._expm_cache.get(key)
            if hit is None:
                hit = expm(full * h)
                self._expm_cache[key] = hit
            return hit
        return np.eye(n) + full * h

    def advance_row(self, pi: np.ndarray, lam_off: np.ndarray, h: float) -> np.ndarray:
        if self.options.solver == "expm":
            return pi @ self.seg_factor(lam_off, h)
        return pi + h * (pi @ lam_off - pi * lam_off.sum(axis=1))


def _collapse_lump_star(data: ModelData) -> np.ndarray:
    """Prudent-basis equivalent transition payment of lumps at segment left:
    kappa*(u) / kappa*(cell end) * amount."""
    M = data.mesh.n_seg
    out = np.zeros((M,) + data.lump_cell.shape[1:])
    if data.has_lumps:
        cells = data.mesh.cell_of_seg
        ce = data.mesh.cell_end_node[cells]
        ratio = data.kaps_node[:M] / data.kaps_node[ce]
        out = ratio[:, None, None] * data.lump_cell[cells]
    return out


def _kappa_arrays(phi_seg, dphi_node, widths):
    cont = np.concatenate([[0.0], np.cumsum(phi_seg * widths)])
    jump = np.cumprod(1.0 + dphi_node)
    node = np.exp(cont) * jump
    left = node / (1.0 + dphi_node)
    return node, left


def build_model_data(
    contract,
    first_order,
    second_order,
    path: PolicyPath | None,
    options: EngineOptions,
    extra_times: Iterable[float] = (),
    experience: str = "individual",
) -> ModelData:
    """Sample contract and bases on a common mesh and precompute reserves.

    ``experience`` selects what drives the occupation row of the
    recombined bases: the realized counting processes (``individual``,
    requires a path) or the second-order intensities (``mean``).
    """
    states: StateSpace = contract.states
    S = states.size
    grid: TimeGrid = contract.grid

    # the mesh must resolve every jump time and every density-change point
    event_times: list = []
    for proc in contract.sojourn.values():
        event_times += [t for t, _ in proc.jumps]
        event_times += list(proc.grid.points)
    for basis in (first_order, second_order):
        for proc in basis.intensities.entries.values():
            event_times += [t for t, _ in proc.jumps]
            event_times += list(proc.grid.points)
        event_times += [t for t, _ in basis.returns.base.jumps]
        event_times += list(basis.returns.base.grid.points)
    path_times = list(path.jump_times()) if path is not None else []
    mesh = build_mesh(grid, options.substeps, list(extra_times) + event_times + path_times)
    M, nn = mesh.n_seg, len(mesh.nodes)

    soj_seg = np.zeros((M, S))
    dB_node = np.zeros((nn, S))
    for j, proc in contract.sojourn.items():
        col = states.index(j)
        soj_seg[:, col] = _sample_density(proc, mesh)
        dB_node[:, col] = _sample_jumps(proc, mesh)

    bplain_node = np.zeros((nn, S, S))
    lump_cell = np.zeros((grid.n_cells, S, S))
    has_lumps = False
    for (j, k), pay in contract.transition.items():
        r, c = states.index(j), states.index(k)
        if pay.fn is not None:
            bplain_node[:, r, c] = [pay.fn(t) for t in mesh.nodes]
        if pay.lump is not None:
            lump_cell[:, r, c] = pay.lump
            has_lumps = True

    def _pair_arrays(intens: IntensityMatrix):
        seg = np.zeros((M, S, S))
        nod = np.zeros((nn, S, S))
        for (j, k), proc in intens.entries.items():
            r, c = states.index(j), states.index(k)
            seg[:, r, c] = _sample_density(proc, mesh)
            nod[:, r, c] = _sample_jumps(proc, mesh)
        return seg, nod

    lams_off_seg, dlams_off_node = _pair_arrays(first_order.intensities)
    lam_off_seg, dlam_off_node = _pair_arrays(second_order.intensities)

    phis_seg = _sample_density(first_order.returns.base, mesh)
    dphis_node = _sample_jumps(first_order.returns.base, mesh)
    phi_seg = _sample_density(second_order.returns.base, mesh)
    dphi_node = _sample_jumps(second_order.returns.base, mesh)

    dn_node = np.zeros((nn, S, S))
    if path is not None:
        for t, frm, to in path.jumps:
            dn_node[mesh.index_of(t), states.index(frm), states.index(to)] += 1.0

    if experience == "individual":
        if path is None:
            raise ValidationError("individual perspective requires a policy path")
        lame_off_seg = np.zeros_like(lam_off_seg)
        dlame_off_node = dn_node
    elif experience == "mean":
        lame_off_seg = lam_off_seg
        dlame_off_node = dlam_off_node
    else:
        raise ValidationError(f"unknown experience mode {experience!r}")

    if has_lumps and (np.any(dphis_node) or np.any(dphi_node)):
        raise AdmissibilityError(
            "return jumps cannot be combined with end-of-cell lump payments "
            "(jump times are grid points, where lumps settle)"
        )
    kaps_node, kaps_left = _kappa_arrays(phis_seg, dphis_node, mesh.widths)
    kap_node, kap_left = _kappa_arrays(phi_seg, dphi_node, mesh.widths)

    data = ModelData(
        states=states,
        mesh=mesh,
        options=options,
        initial_idx=states.index(states.initial),
        soj_seg=soj_seg,
        dB_node=dB_node,
        bplain_node=bplain_node,
        lump_cell=lump_cell,
        has_lumps=has_lumps,
        phis_seg=phis_seg,
        dphis_node=dphis_node,
        lams_off_seg=lams_off_seg,
        dlams_off_node=dlams_off_node,
        kaps_node=kaps_node,
        kaps_left=kaps_left,
        phi_seg=phi_seg,
        dphi_node=dphi_node,
        kap_node=kap_node,
        kap_left=kap_left,
        lam_off_seg=lam_off_seg,
        dlam_off_node=dlam_off_node,
        lame_off_seg=lame_off_seg,
        dlame_off_node=dlame_off_node,
        dn_node=dn_node,
    )
    _backward_reserves(data)
    _occupation_rows(data, path)
    _sums_at_risk(data)
    return data


def _backward_reserves(data: ModelData):
    """Prudent reserve V(node) by the backward recursion consistent with the
    forward sweep: V(u) = h c*(u) + P_seg [pay_v + (I + dL*) V(v)] / (g (1 + dPhi*))."""
    mesh, S = data.mesh, data.states.size
    M, nn = mesh.n_seg, len(mesh.nodes)
    lump_star = _collapse_lump_star(data)
    bstar_seg = data.bplain_node[:M] + lump_star
    # node-time flavor (for left limits across point masses)
    lump_star_node = np.zeros((nn, S, S))
    if data.has_lumps:
        cells = mesh.cell_of_node
        ce = mesh.cell_end_node[cells]
        lump_star_node = (data.kaps_node / data.kaps_node[ce])[:, None, None] * data.lump_cell[cells]
    bstar_node = data.bplain_node + lump_star_node

    V = np.zeros((nn, S))
    Vleft = np.zeros((nn, S))
    cstar = data.soj_seg + (bstar_seg * data.lams_off_seg).sum(axis=2)
    eye = np.eye(S)
    for i in range(M - 1, -1, -1):
        v = i + 1
        dl = data.dlams_off_node[v]
        pay = data.dB_node[v] + (bstar_node[v] * dl).sum(axis=1)
        vm = pay + V[v] + dl @ V[v] - dl.sum(axis=1) * V[v]
        vm = vm / (1.0 + data.dphis_node[v])
        Vleft[v] = vm
        h = mesh.widths[i]
        pseg = data.seg_factor(data.lams_off_seg[i], h)
        V[i] = h * cstar[i] + (pseg @ vm) / math.exp(data.phis_seg[i] * h)
    Vleft[0] = V[0] + data.dB_node[0]
    data.V, data.Vleft, data.cstar_seg = V, Vleft, cstar


def _occupation_rows(data: ModelData, path: PolicyPath | None):
    """Row p_{a.}(0, node) under the experience basis.

    Individual: exact indicator rows read off the path.  Mean: forward
    product driven by the second-order intensities.
    """
    mesh, S = data.mesh, data.states.size
    nn = len(mesh.nodes)
    prow = np.zeros((nn, S))
    prow_left = np.zeros((nn, S))
    if path is not None and data.dlame_off_node is data.dn_node:
        for idx, t in enumerate(mesh.nodes):
            prow[idx, data.states.index(path.state_at(t))] = 1.0
            prow_left[idx, data.states.index(path.state_before(t))] = 1.0
    else:
        pi = np.zeros(S)
        pi[data.initial_idx] = 1.0
        prow[0] = pi
        prow_left[0] = pi
        for i in range(mesh.n_seg):
            v = i + 1
            pi = data.advance_row(pi, data.lame_off_seg[i], mesh.widths[i])
            prow_left[v] = pi
            dl = data.dlame_off_node[v]
            if dl.any():
                pi = pi + pi @ dl - pi * dl.sum(axis=1)
            prow[v] = pi
    data.prow, data.prow_left = prow, prow_left


def _sums_at_risk(data: ModelData):
    """R*_jk = b_jk + V_k - V_j at mesh times.

    End-of-cell lumps enter at their prudent-continuation value
    ``kappa*(s)/kappa*(cell end) * amount``: a basis spliced at s pays the
    lump at the cell end discounted along the prudent continuation, which
    is the convention the vanishing-mesh limits inherit.
    """
    mesh, S = data.mesh, data.states.size
    M, nn = mesh.n_seg, len(mesh.nodes)
    vdiff_seg = data.V[:M, None, :] - data.V[:M, :, None]
    lump_seg = np.zeros((M, S, S))
    lump_node = np.zeros((nn, S, S))
    if data.has_lumps:
        cells = mesh.cell_of_seg
        ce = mesh.cell_end_node[cells]
        lump_seg = (data.kaps_node[:M] / data.kaps_node[ce])[:, None, None] * data.lump_cell[cells]
        cn = mesh.cell_of_node
        cen = mesh.cell_end_node[cn]
        lump_node = (data.kaps_node / data.kaps_node[cen])[:, None, None] * data.lump_cell[cn]
    data.rstar_seg = data.bplain_node[:M] + lump_seg + vdiff_seg
    vdiff_node = data.V[:, None, :] - data.V[:, :, None]
    data.rstar_node = data.bplain_node + lump_node + vdiff_node


# ---------------------------------------------------------------------------
# Forward sweep
# ---------------------------------------------------------------------------

def initial_state(data: ModelData):
    """State just after time-0 events: kappa(0) = 1, the occupation row at
    the initial state, and the time-0 sojourn atom weighted by delta_aj."""
    pi = np.zeros(data.states.size)
    pi[data.initial_idx] = 1.0
    acc = float(pi @ data.dB_node[0])
    pend = np.zeros((data.states.size, data.states.size))
    return 1.0, pi, pend, acc


def sweep(data: ModelData, i0: int, i1: int, phi_seg, dphi_node, lam_seg, dlam_node,
          kap: float, pi: np.ndarray, pend: np.ndarray):
    """Advance from node i0 (events applied) to node i1 under a local basis.

    Local arrays index the window: ``phi_seg[j]`` is the return density on
    segment ``i0 + j`` and ``dphi_node[j]``/``dlam_node[j]`` the jumps at
    node ``i0 + 1 + j``.  Returns the new ``(kap, pi, pend)`` and the
    payment integral of the window weighted by ``1/kappa``.
    """
    acc = 0.0
    widths = data.mesh.widths
    soj = data.soj_seg
    bpl = data.bplain_node
    dB = data.dB_node
    ended = data.mesh.ended_cell
    lumps = data.has_lumps
    for j in range(i1 - i0):
        i = i0 + j
        v = i + 1
        h = widths[i]
        lam = lam_seg[j]
        c = soj[i] + (bpl[i] * lam).sum(axis=1)
        acc += float(pi @ c) * h / kap
        if lumps:
            pend = pend + (pi[:, None] * lam) * h
        kap *= math.exp(phi_seg[j] * h)
        pi = data.advance_row(pi, lam, h)
        dphi = dphi_node[j]
        if dphi != 0.0:
            kap *= 1.0 + dphi
        dl = dlam_node[j]
        if dB[v].any():
            acc += float(pi @ dB[v]) / kap
        if dl.any():
            acc += float((pi[:, None] * bpl[v] * dl).sum()) / kap
            if lumps:
                pend = pend + pi[:, None] * dl
            pi = pi + pi @ dl - pi * dl.sum(axis=1)
        if lumps:
            cell = ended[v]
            if cell >= 0 and pend.any():
                acc += float((pend * data.lump_cell[cell]).sum()) / kap
                pend = np.zeros_like(pend)
    return kap, pi, pend, acc


def tail_value(data: ModelData, node: int, kap: float, pi: np.ndarray, pend: np.ndarray) -> float:
    """Value at the sweep frontier of all payments after it: the prudent
    continuation reserve plus any pending lump mass (paid at the cell end,
    discounted along the prudent continuation)."""
    val = float(pi @ data.V[node]) / kap
    if data.has_lumps and pend.any():
        cell = data.mesh.cell_of_node[node]
        ce = data.mesh.cell_end_node[cell]
        ratio = data.kaps_node[node] / data.kaps_node[ce]
        val += ratio / kap * float((pend * data.lump_cell[cell]).sum())
    return val


# ---------------------------------------------------------------------------
# Surface context: risk factors, sequential/one-at-a-time runs, closed forms
# ---------------------------------------------------------------------------

@dataclass
class FactorArrays:
    """Mesh-sampled increment contribution of one risk factor to the
    recombined basis (return slot and intensity slot)."""

    label: str
    phi_seg: np.ndarray
    dphi_node: np.ndarray
    lam_seg: np.ndarray
    dlam_node: np.ndarray
    fine_parts: tuple  # (("phi", j) | ("u", (j,k)) | ("s", (j,k)), ...)


def _pair_mask(size: int, pairs) -> np.ndarray:
    mask = np.zeros((size, size))
    for r, c in pairs:
        mask[r, c] = 1.0
    return mask


def build_factor_arrays(
    data: ModelData,
    label: str,
    phi_states,          # None, "all", or list of state indices
    unsys_pairs,         # list of (row, col) index pairs
    sys_pairs,
    experience: str,
) -> FactorArrays:
    mesh, S = data.mesh, data.states.size
    M, nn = mesh.n_seg, len(mesh.nodes)
    phi_seg = np.zeros(M)
    dphi_node = np.zeros(nn)
    fine: list = []
    if phi_states is not None:
        base_seg = data.phi_seg - data.phis_seg
        base_node = data.dphi_node - data.dphis_node
        if phi_states == "all":
            phi_seg = base_seg.copy()
            dphi_node = base_node.copy()
            fine += [("phi", j) for j in range(S)]
        else:
            if experience == "mean":
                raise ValidationError(
                    "state-split return factors need realized occupation "
                    "indicators; not available in the mean perspective"
                )
            wseg = data.prow[:M][:, list(phi_states)].sum(axis=1)
            wnode = data.prow_left[:, list(phi_states)].sum(axis=1)
            phi_seg = base_seg * wseg
            dphi_node = base_node * wnode
            fine += [("phi", j) for j in phi_states]

    lam_seg = np.zeros((M, S, S))
    dlam_node = np.zeros((nn, S, S))
    if unsys_pairs:
        mask = _pair_mask(S, unsys_pairs)
        if experience == "individual":
            lam_seg -= data.lam_off_seg * mask
            dlam_node += (data.dn_node - data.dlam_off_node) * mask
        # mean: the compensated component vanishes identically
        fine += [("u", pair) for pair in unsys_pairs]
    if sys_pairs:
        mask = _pair_mask(S, sys_pairs)
        lam_seg += (data.lam_off_seg - data.lams_off_seg) * mask
        dlam_node += (data.dlam_off_node - data.dlams_off_node) * mask
        fine += [("s", pair) for pair in sys_pairs]
    return FactorArrays(label, phi_seg, dphi_node, lam_seg, dlam_node, tuple(fine))


class SurfaceContext:
    """One fully sampled decomposition problem on one mesh.

    Holds the model data, the ordered risk-factor increment arrays, and the
    machinery to evaluate the delayed-information value at arbitrary update
    statuses, run sequential and one-at-a-time telescoping decompositions
    over a partition, and evaluate the closed-form limit contributions.
    """

    def __init__(self, data: ModelData, factors: Sequence[FactorArrays], experience: str):
        if not factors:
            raise ValidationError("a decomposition needs at least one risk factor")
        self.data = data
        self.factors = list(factors)
        self.experience = experience

    @property
    def labels(self) -> list:
        return [f.label for f in self.factors]

    # -- value evaluations ---------------------------------------------------

    def value(self, t: float) -> float:
        """Fully updated value at t: minus the valuation functional of the
        experience basis frozen at t (prudent continuation afterwards)."""
        return self._value_all(t)

    def _value_all(self, t: float) -> float:
        d = self.data
        it = d.mesh.index_of(t)
        kap, pi, pend, acc0 = initial_state(d)
        sl_s, sl_n = slice(0, it), slice(1, it + 1)
        phi = d.phi_seg[sl_s]
        dphi = d.dphi_node[sl_n]
        lam = d.lame_off_seg[sl_s]
        dlam = d.dlame_off_node[sl_n]
        kap, pi, pend, acc = sweep(d, 0, it, phi, dphi, lam, dlam, kap, pi, pend)
        return -(acc0 + acc + tail_value(d, it, kap, pi, pend))

    def eval_statuses(self, statuses: Sequence[float]) -> float:
        """Delayed-information value U(t_1, ..., t_m); statuses must be mesh nodes."""
        d = self.data
        if len(statuses) != len(self.factors):
            raise ValidationError(
                f"expected {len(self.factors)} statuses, got {len(statuses)}"
            )
        idx = [d.mesh.index_of(t) for t in statuses]
        istar = max(idx) if idx else 0
        sl_s, sl_n = slice(0, istar), slice(1, istar + 1)
        phi = d.phis_seg[sl_s].copy()
        dphi = d.dphis_node[sl_n].copy()
        lam = d.lams_off_seg[sl_s].copy()
        dlam = d.dlams_off_node[sl_n].copy()
        nodes_right = np.arange(1, istar + 1)
        for f, i_f in zip(self.factors, idx):
            seg_mask = nodes_right <= i_f
            phi[seg_mask] += f.phi_seg[sl_s][seg_mask]
            dphi[seg_mask] += f.dphi_node[sl_n][seg_mask]
            lam[seg_mask] += f.lam_seg[sl_s][seg_mask]
            dlam[seg_mask] += f.dlam_node[sl_n][seg_mask]
        kap, pi, pend, acc0 = initial_state(d)
        kap, pi, pend, acc = sweep(d, 0, istar, phi, dphi, lam, dlam, kap, pi, pend)
        return -(acc0 + acc + tail_value(d, istar, kap, pi, pend))

    # -- telescoping runs ------------------------------------------------------

    def partition_nodes(self, times: Sequence[float]) -> np.ndarray:
        return np.array([self.data.mesh.index_of(t) for t in times], dtype=int)

    def su_run(self, pnodes: np.ndarray, order: Sequence[int]):
        """Sequential-updating telescoping over the partition.

        Per step, factor ``order[0]`` is updated first.  Returns per-factor
        totals (indexed like ``self.factors``), the per-step series, and
        the fully/none-updated endpoint values needed for additivity checks.
        """
        d = self.data
        m = len(self.factors)
        K = len(pnodes) - 1
        series = np.zeros((K, m))
        kap, pi, pend, acc0 = initial_state(d)
        r0 = -(acc0 + tail_value(d, int(pnodes[0]), kap, pi, pend))
        for l in range(K):
            i0, i1 = int(pnodes[l]), int(pnodes[l + 1])
            sl_s, sl_n = slice(i0, i1), slice(i0 + 1, i1 + 1)
            phi = d.phis_seg[sl_s].copy()
            dphi = d.dphis_node[sl_n].copy()
            lam = d.lams_off_seg[sl_s].copy()
            dlam = d.dlams_off_node[sl_n].copy()
            prev = self._window_value(i0, i1, phi, dphi, lam, dlam, kap, pi, pend)
            for r in range(m):
                f = self.factors[order[r]]
                phi += f.phi_seg[sl_s]
                dphi += f.dphi_node[sl_n]
                lam += f.lam_seg[sl_s]
                dlam += f.dlam_node[sl_n]
                kap2, pi2, pend2, acc = sweep(
                    d, i0, i1, phi, dphi, lam, dlam, kap, pi.copy(), pend.copy()
                )
                cur = -(acc + tail_value(d, i1, kap2, pi2, pend2))
                series[l, order[r]] = cur - prev
                prev = cur
            kap, pi, pend = kap2, pi2, pend2  # all factors live: exact state advance
        rt = r0 + float(series.sum())
        return series.sum(axis=0), series, r0, rt

    def oat_run(self, pnodes: np.ndarray):
        """Ceteris-paribus telescoping: per step each factor is updated alone
        against the frozen corner; the residual is the interaction effect."""
        d = self.data
        m = len(self.factors)
        K = len(pnodes) - 1
        series = np.zeros((K, m))
        kap, pi, pend, acc0 = initial_state(d)
        r0 = -(acc0 + tail_value(d, int(pnodes[0]), kap, pi, pend))
        total = 0.0
        for l in range(K):
            i0, i1 = int(pnodes[l]), int(pnodes[l + 1])
            sl_s, sl_n = slice(i0, i1), slice(i0 + 1, i1 + 1)
            phi0 = d.phis_seg[sl_s]
            dphi0 = d.dphis_node[sl_n]
            lam0 = d.lams_off_seg[sl_s]
            dlam0 = d.dlams_off_node[sl_n]
            base = self._window_value(i0, i1, phi0, dphi0, lam0, dlam0, kap, pi, pend)
            full_phi = phi0.copy()
            full_dphi = dphi0.copy()
            full_lam = lam0.copy()
            full_dlam = dlam0.copy()
            for r, f in enumerate(self.factors):
                kap2, pi2, pend2, acc = sweep(
                    d, i0, i1,
                    phi0 + f.phi_seg[sl_s], dphi0 + f.dphi_node[sl_n],
                    lam0 + f.lam_seg[sl_s], dlam0 + f.dlam_node[sl_n],
                    kap, pi.copy(), pend.copy(),
                )
                series[l, r] = -(acc + tail_value(d, i1, kap2, pi2, pend2)) - base
                full_phi += f.phi_seg[sl_s]
                full_dphi += f.dphi_node[sl_n]
                full_lam += f.lam_seg[sl_s]
                full_dlam += f.dlam_node[sl_n]
            kap, pi, pend, acc = sweep(
                d, i0, i1, full_phi, full_dphi, full_lam, full_dlam, kap, pi, pend
            )
            total += -(acc + tail_value(d, i1, kap, pi, pend)) - base
        rt = r0 + total
        interaction = total - float(series.sum())
        return series.sum(axis=0), series, interaction, r0, rt

    def _window_value(self, i0, i1, phi, dphi, lam, dlam, kap, pi, pend) -> float:
        kap2, pi2, pend2, acc = sweep(
            self.data, i0, i1, phi, dphi, lam, dlam, kap, pi.copy(), pend.copy()
        )
        return -(acc + tail_value(self.data, i1, kap2, pi2, pend2))

    # -- closed-form limit contributions --------------------------------------

    def _pending_value_seg(self, M: int) -> np.ndarray:
        """Value at each segment-left node of lump amounts committed by
        transitions earlier in the current cell but not yet settled
        (prudent-continuation discount to the cell end).  The return factors
        revalue these commitments exactly like a reserve."""
        d = self.data
        if not d.has_lumps:
            return np.zeros(M)
        mesh = d.mesh
        out = np.zeros(M)
        pm = np.zeros((d.states.size, d.states.size))
        for i in range(M):
            cell = mesh.cell_of_seg[i]
            ye = mesh.cell_end_node[cell]
            if pm.any():
                out[i] = d.kaps_node[i] / d.kaps_node[ye] * float((pm * d.lump_cell[cell]).sum())
            pm += d.prow[i][:, None] * d.lame_off_seg[i] * mesh.widths[i]
            v = i + 1
            dl = d.dlame_off_node[v]
            if dl.any():
                pm += d.prow_left[v][:, None] * dl
            if mesh.ended_cell[v] >= 0:
                pm[:] = 0.0
        return out

    def fine_components(self, t: float) -> dict:
        """Closed-form limit contributions of the finest factor split.

        Keys: ("phi", state_idx), ("u", (j, k)), ("s", (j, k)).  The return
        family integrates the jump-corrected return difference against
        occupation-weighted reserves (including the value of committed but
        unsettled end-of-cell lumps); the intensity families integrate sums
        at risk against the compensated/systematic intensity differences.
        The unsystematic family is identically zero in the mean perspective.

        Quadrature is chosen so that the family sum telescopes against the
        sweeps to second order: per segment (u, v] the return integrator is
        the exact factor gap ``1 - e^{-(phi-phi*) h} (1+dPhi*)/(1+dPhi)``
        weighted with the post-payment reserve ``V(u) - h c*(u)``, and the
        intensity families weight sums at risk built from the next node's
        left-limit reserves discounted over the segment.  Point-mass terms
        use left-limit occupation rows and right values exactly.
        """
        d = self.data
        it = d.mesh.index_of(t)
        S = d.states.size
        M = it
        widths = d.mesh.widths[:M]
        w_inv = 1.0 / d.kap_node[:M]
        nodes = slice(1, it + 1)
        dphi = d.dphi_node[nodes]
        dphis = d.dphis_node[nodes]
        # exact per-segment integrator of the jump-corrected return gap
        xi = 1.0 - np.exp(-(d.phi_seg - d.phis_seg)[:M] * widths) * (1.0 + dphis) / (1.0 + dphi)
        pend_val = self._pending_value_seg(M)
        post_pay_V = d.V[:M] - widths[:, None] * d.cstar_seg[:M]
        out: dict = {}
        for j in range(S):
            out[("phi", j)] = float(
                np.sum(w_inv * d.prow[:M, j] * (post_pay_V[:, j] + pend_val) * xi)
            )
        # segment sums at risk: payment at the left node, reserve difference
        # from the next node's left limit discounted over the segment
        wdisc = np.exp(-d.phi_seg[:M] * widths) * (1.0 + dphis) / (1.0 + dphi)
        vl = d.Vleft[1 : it + 1]
        rhat = d.rstar_seg[:M] - (d.V[:M, None, :] - d.V[:M, :, None]) + wdisc[:, None, None] * (
            vl[:, None, :] - vl[:, :, None]
        )
        wseg = widths * w_inv
        wnode = 1.0 / d.kap_node[nodes]
        lam_diff_seg = (d.lam_off_seg - d.lams_off_seg)[:M]
        dlam_diff = (d.dlam_off_node - d.dlams_off_node)[nodes]
        for r in range(S):
            prow_seg = d.prow[:M, r]
            prow_nl = d.prow_left[nodes][:, r]
            for c in range(S):
                if r == c:
                    continue
                pair = (r, c)
                sys_ac = float(np.sum(wseg * prow_seg * rhat[:, r, c] * lam_diff_seg[:, r, c]))
                sys_pm = float(np.sum(wnode * prow_nl * d.rstar_node[nodes][:, r, c] * dlam_diff[:, r, c]))
                out[("s", pair)] = -(sys_ac + sys_pm)
                if self.experience == "individual":
                    jump_n = float(np.sum(
                        wnode * prow_nl * d.rstar_node[nodes][:, r, c] * d.dn_node[nodes][:, r, c]
                    ))
                    comp_ac = float(np.sum(
                        wseg * prow_seg * rhat[:, r, c] * d.lam_off_seg[:M, r, c]
                    ))
                    comp_pm = float(np.sum(
                        wnode * prow_nl * d.rstar_node[nodes][:, r, c] * d.dlam_off_node[nodes][:, r, c]
                    ))
                    out[("u", pair)] = -(jump_n - comp_ac - comp_pm)
                else:
                    out[("u", pair)] = 0.0
        return out

    def factor_closed_form(self, t: float) -> np.ndarray:
        """Per-factor closed-form limit values, aggregated from the fine split."""
        fine = self.fine_components(t)
        return np.array([sum(fine[p] for p in f.fine_parts) for f in self.factors])
