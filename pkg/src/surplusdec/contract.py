"""Contract cash flows, valuation bases, prospective reserves, sums at risk,
the valuation functional and direct asset/surplus accounting.

Sign convention: premiums are negative, benefits positive, both inside the
sojourn streams ``B_j`` and the transition payments ``b_jk``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import engine
from .engine import EngineOptions
from .errors import AdmissibilityError, DomainError, ValidationError
from .markov import IntensityMatrix, PolicyPath, StateSpace
from .processes import (
    DoleansExponential,
    FVProcess,
    ReturnProcess,
    TimeGrid,
    assert_no_simultaneous_jumps,
    doleans_exponential,
)


@dataclass(frozen=True)
class TransitionPayment:
    """Payment on a j -> k transition: either a plain function of the
    transition time, or a fixed amount per grid cell paid at the cell's
    right endpoint (the discrete-model convention for death/surrender
    benefits settled at period end)."""

    fn: Callable[[float], float] | None = None
    lump: np.ndarray | None = None

    def __post_init__(self):
        if (self.fn is None) == (self.lump is None):
            raise ValidationError("specify exactly one of fn / lump")

    @classmethod
    def constant(cls, value: float) -> "TransitionPayment":
        v = float(value)
        return cls(fn=lambda t: v)

    @classmethod
    def from_function(cls, fn: Callable[[float], float]) -> "TransitionPayment":
        return cls(fn=fn)

    @classmethod
    def end_of_cell_lump(cls, grid: TimeGrid, amounts) -> "TransitionPayment":
        arr = np.broadcast_to(np.asarray(amounts, dtype=float), (grid.n_cells,)).copy()
        arr.setflags(write=False)
        return cls(lump=arr)


@dataclass(frozen=True)
class ContractSpec:
    """State space, horizon grid, sojourn streams and transition payments."""

    states: StateSpace
    grid: TimeGrid
    sojourn: Mapping  # state label -> FVProcess
    transition: Mapping  # (j, k) -> TransitionPayment

    def __post_init__(self):
        soj = {}
        for j, proc in self.sojourn.items():
            if j not in self.states.states:
                raise ValidationError(f"sojourn stream for unknown state {j!r}")
            soj[j] = proc.on_grid(self.grid.insert(proc.grid.points))
        # keep one shared grid across all streams
        g = self.grid
        for proc in soj.values():
            g = g.insert(proc.grid.points)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "sojourn", {j: p.on_grid(g) for j, p in soj.items()})
        tr = {}
        for (j, k), pay in self.transition.items():
            if j == k or j not in self.states.states or k not in self.states.states:
                raise ValidationError(f"bad transition payment pair ({j!r}, {k!r})")
            if pay.lump is not None and len(pay.lump) != g.n_cells:
                raise ValidationError(
                    f"lump amounts for {j}->{k} need one entry per grid cell"
                )
            tr[(j, k)] = pay
        object.__setattr__(self, "transition", tr)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def payment_pairs(self) -> list:
        return list(self.transition)


@dataclass(frozen=True)
class ValuationBasis:
    """A (cumulative return, cumulative intensity matrix) pair."""

    returns: ReturnProcess
    intensities: IntensityMatrix

    @classmethod
    def build(cls, returns: FVProcess | ReturnProcess, intensities: IntensityMatrix):
        ret = returns if isinstance(returns, ReturnProcess) else ReturnProcess(returns)
        return cls(ret, intensities)


def check_no_simultaneous_jumps(
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    contract: ContractSpec,
    path: PolicyPath | None = None,
    strict: bool = True,
) -> None:
    """Enforce the jump-disjointness assumptions of the model.

    Return processes must never share jump times with each other nor with
    any biometric quantity.  With ``strict`` (the default, required for the
    closed-form limit contributions), prudent and experience intensities
    and the sojourn streams are pairwise disjoint as well; discrete yearly
    models that co-locate decrement masses of both bases can disable the
    strict part (sequential decompositions stay exact there).  Realized
    path jumps may coincide with point masses of the experience intensities
    (forced transitions) but with nothing else.
    """
    def jump_set(procs) -> set:
        out: set = set()
        for p in procs:
            out |= {t for t, _ in p.jumps}
        return out

    phi_s = jump_set([first_order.returns.base])
    phi = jump_set([second_order.returns.base])
    lam_s = jump_set(first_order.intensities.entries.values())
    lam = jump_set(second_order.intensities.entries.values())
    b_all = jump_set(contract.sojourn.values())
    checks = [
        (phi_s & phi, "the two return processes"),
        (phi_s & (lam_s | lam | b_all), "prudent returns vs. biometric/payment jumps"),
        (phi & (lam_s | lam | b_all), "experience returns vs. biometric/payment jumps"),
    ]
    if strict:
        checks += [
            (lam_s & lam, "prudent vs. experience intensities"),
            (lam_s & b_all, "prudent intensities vs. payment atoms"),
            (lam & b_all, "experience intensities vs. payment atoms"),
        ]
    if path is not None:
        n_times = {round(float(t), 12) for t in path.jump_times()}
        checks += [
            (n_times & phi_s, "path jumps vs. prudent returns"),
            (n_times & phi, "path jumps vs. experience returns"),
            (n_times & b_all, "path jumps vs. payment atoms"),
        ]
        if strict:
            checks.append((n_times & lam_s, "path jumps vs. prudent intensities"))
    for clash, what in checks:
        if clash:
            raise AdmissibilityError(
                f"simultaneous jumps detected ({what}) at t={sorted(clash)[:3]}"
            )


# ---------------------------------------------------------------------------
# Reserves, sums at risk, the valuation functional
# ---------------------------------------------------------------------------

def _reserve_data(
    first_order: ValuationBasis,
    contract: ContractSpec,
    options: EngineOptions,
    extra_times=(),
) -> engine.ModelData:
    # first-order-only computation: the experience slots are unused
    return engine.build_model_data(
        contract, first_order, first_order, None, options, extra_times, experience="mean"
    )


def prospective_reserve(
    first_order: ValuationBasis,
    contract: ContractSpec,
    j,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Prudent-basis reserve V*_j(t): value at t of all payments on (t, T]
    discounted with the prudent returns and weighted with prudent transition
    probabilities from state j."""
    if t < 0 or t > contract.horizon + 1e-12:
        raise DomainError(f"t={t} outside [0, {contract.horizon}]")
    data = _reserve_data(first_order, contract, options, extra_times=[t])
    return float(data.V[data.mesh.index_of(t), contract.states.index(j)])


def sum_at_risk(
    first_order: ValuationBasis,
    contract: ContractSpec,
    j,
    k,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """First-order sum at risk R*_jk(t) = b_jk(t) + V*_k(t) - V*_j(t).

    End-of-cell lumps enter at their prudent-discounted transition-time
    value.  Zero for t beyond the horizon.
    """
    if j == k:
        raise DomainError("sum at risk needs j != k")
    if t > contract.horizon:
        return 0.0
    data = _reserve_data(first_order, contract, options, extra_times=[t])
    idx = data.mesh.index_of(t)
    b = data.bplain_node[idx, contract.states.index(j), contract.states.index(k)]
    if data.has_lumps:
        cell = data.mesh.cell_of_node[idx]
        ce = data.mesh.cell_end_node[cell]
        b += (
            data.kaps_node[idx]
            / data.kaps_node[ce]
            * data.lump_cell[cell, contract.states.index(j), contract.states.index(k)]
        )
    vk = data.V[idx, contract.states.index(k)]
    vj = data.V[idx, contract.states.index(j)]
    return float(b + vk - vj)


def functional_H(
    basis: ValuationBasis,
    contract: ContractSpec,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Valuation functional H of a basis: the [0, T] integral of sojourn
    payments plus the (0, T] integral of transition payments, weighted with
    1/kappa-bar and the basis' occupation row started at the initial state
    (time-0 atoms carry weight delta_aj).

    The intensity argument may be any intensity-matrix-shaped bundle,
    including counting processes or spliced mixtures.
    """
    data = engine.build_model_data(
        contract, basis, basis, None, options, experience="mean"
    )
    it = len(data.mesh.nodes) - 1
    kap, pi, pend, acc0 = engine.initial_state(data)
    kap, pi, pend, acc = engine.sweep(
        data, 0, it,
        data.phi_seg, data.dphi_node[1:],
        data.lam_off_seg, data.dlam_off_node[1:],
        kap, pi, pend,
    )
    return acc0 + acc  # V(T) = 0: no tail


# ---------------------------------------------------------------------------
# Direct asset / surplus accounting along a realized path
# ---------------------------------------------------------------------------

def _realized_events(path: PolicyPath, second_order: ValuationBasis, contract: ContractSpec,
                     substeps: int):
    """Realized cash flows along the path as (discount time, booking time,
    amount) events; end-of-cell lumps are booked at the cell end.  The
    absolutely continuous sojourn part is discretized by a left-point rule
    per substep (discounted at the segment left, booked at its end)."""
    grid = contract.grid
    kappa = doleans_exponential(second_order.returns)
    jump_times = np.asarray(path.jump_times())
    events: list = []
    for j, proc in contract.sojourn.items():
        for t, v in proc.jumps:
            if path.state_before(t) == j:
                events.append((t, t, v))
        dens = proc.densities
        if np.any(dens):
            pts = proc.grid.points
            for c in range(proc.grid.n_cells):
                if dens[c] == 0.0:
                    continue
                a, b = pts[c], pts[c + 1]
                cuts = np.linspace(a, b, substeps + 1)
                inside = jump_times[(jump_times > a) & (jump_times < b)]
                if inside.size:
                    cuts = np.union1d(cuts, inside)
                for u, w in zip(cuts[:-1], np.diff(cuts)):
                    if path.state_at(u) == j:
                        events.append((float(u), float(u + w), dens[c] * w))
    for t, frm, to in path.jumps:
        pay = contract.transition.get((frm, to))
        if pay is None:
            continue
        if pay.fn is not None:
            events.append((t, t, pay.fn(t)))
        else:
            cell = grid.cell_of(t)
            ye = float(grid.points[cell + 1])
            events.append((ye, ye, float(pay.lump[cell])))
    return sorted(events), kappa


def asset_value(
    path: PolicyPath,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Accrued assets A(t) = -int_[0,t] kappa(t)/kappa(s) dB(s) along the
    realized path, by direct accumulation of the realized cash flows."""
    events, kappa = _realized_events(path, second_order, contract, options.substeps)
    kt = kappa.value(t)
    return -kt * sum(v / kappa.value(u) for u, b, v in events if b <= t + 1e-12)


def liability_hypothetical(
    path: PolicyPath,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Perfect-foresight liability L^h(t) = int_(t,T] kappa(t)/kappa(s) dB(s)."""
    events, kappa = _realized_events(path, second_order, contract, options.substeps)
    kt = kappa.value(t)
    return kt * sum(v / kappa.value(u) for u, b, v in events if b > t + 1e-12)


def hypothetical_surplus(
    path: PolicyPath,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """S^h(t) = A(t) - L^h(t); equals kappa(t) * S^h(0) identically."""
    events, kappa = _realized_events(path, second_order, contract, options.substeps)
    kt = kappa.value(t)
    total = sum(v / kappa.value(u) for u, b, v in events)
    return -kt * total


def total_surplus_direct(
    path: PolicyPath,
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Total surplus S(t) = A(t) - sum_j I_j(t) V*_j(t), computed directly
    from realized cash flows and the prudent reserve.  Independent of the
    valuation-functional machinery; serves as its oracle."""
    a = asset_value(path, second_order, contract, t, options)
    v = prospective_reserve(first_order, contract, path.state_at(t), t, options)
    return a - v
