"""Risk bases, decomposition schemes and the revaluation surplus surface.

A *scheme* is an ordered list of named risk factors; each factor owns a
slice of the gap between the experience basis and the prudent basis:

* a return component (global, or split by occupied state),
* an unsystematic intensity component (realized counts minus experience
  intensities, per transition),
* a systematic intensity component (experience minus prudent intensities,
  per transition).

Stopping every factor at a common time t and recombining yields exactly the
spliced basis whose negated valuation functional is the revaluation surplus
R(t); stopping factors at different times yields the delayed-information
surface U(t_1, ..., t_m).

Two perspectives are supported.  ``individual`` works pathwise with the
realized counting processes; ``mean`` replaces them by their compensating
intensities, which makes every unsystematic component vanish identically
and turns the surface into the conditional expectation given the
experience basis.  Mean-perspective surfaces require the return factor to
be global (a state-split return factor needs realized occupation
indicators); state-split closed forms remain available via the fine-split
limit contributions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .contract import ContractSpec, ValuationBasis, check_no_simultaneous_jumps
from .engine import EngineOptions
from .errors import DomainError, ValidationError
from .markov import PolicyPath
from .processes import FVProcess, ReturnProcess, stop_process


@dataclass(frozen=True)
class RiskFactor:
    """One named risk source: which slices of the basis gap it owns."""

    label: str
    return_states: tuple = ()   # ("*",) for the global return factor
    unsys_pairs: tuple = ()     # (j, k) label pairs
    sys_pairs: tuple = ()


@dataclass(frozen=True)
class DecompositionScheme:
    name: str
    factors: tuple
    perspective: str  # "individual" | "mean"

    def __post_init__(self):
        if self.perspective not in ("individual", "mean"):
            raise ValidationError(f"unknown perspective {self.perspective!r}")
        labels = [f.label for f in self.factors]
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate factor labels")

    @property
    def labels(self) -> list:
        return [f.label for f in self.factors]

    @property
    def size(self) -> int:
        return len(self.factors)


def _present_pairs(contract: ContractSpec, first: ValuationBasis, second: ValuationBasis):
    """Transition pairs actually carrying intensity or payments."""
    pairs = set(first.intensities.entries) | set(second.intensities.entries)
    pairs |= set(contract.transition)
    order = contract.states.pairs()
    return [p for p in order if p in pairs]


def build_scheme(
    name: str,
    contract: ContractSpec,
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    perspective: str = "individual",
) -> DecompositionScheme:
    """Construct a built-in scheme for the given model.

    ``three-way``       financial / unsystematic / systematic (m = 3)
    ``transitionwise``  financial + one combined factor per transition
    ``statewise``       unsystematic + one remaining-risk factor per state
    ``fine``            per-state returns + per-transition unsystematic and
                        systematic factors (the finest split)
    ``total``           a single all-in factor (m = 1)
    """
    pairs = _present_pairs(contract, first_order, second_order)
    states = list(contract.states.states)
    if name == "three-way":
        factors = (
            RiskFactor("financial", return_states=("*",)),
            RiskFactor("unsystematic", unsys_pairs=tuple(pairs)),
            RiskFactor("systematic", sys_pairs=tuple(pairs)),
        )
    elif name == "transitionwise":
        factors = (RiskFactor("financial", return_states=("*",)),) + tuple(
            RiskFactor(f"{j}->{k}", unsys_pairs=((j, k),), sys_pairs=((j, k),))
            for j, k in pairs
        )
    elif name == "statewise":
        factors = (RiskFactor("unsystematic", unsys_pairs=tuple(pairs)),) + tuple(
            RiskFactor(
                f"state:{j}",
                return_states=(j,),
                sys_pairs=tuple(p for p in pairs if p[0] == j),
            )
            for j in states
        )
    elif name == "fine":
        factors = (
            tuple(RiskFactor(f"return:{j}", return_states=(j,)) for j in states)
            + tuple(RiskFactor(f"unsys:{j}->{k}", unsys_pairs=((j, k),)) for j, k in pairs)
            + tuple(RiskFactor(f"sys:{j}->{k}", sys_pairs=((j, k),)) for j, k in pairs)
        )
    elif name == "total":
        factors = (
            RiskFactor(
                "total",
                return_states=("*",),
                unsys_pairs=tuple(pairs),
                sys_pairs=tuple(pairs),
            ),
        )
    else:
        raise ValidationError(f"unknown scheme {name!r} "
                              "(expected three-way | transitionwise | statewise | fine | total)")
    return DecompositionScheme(name, factors, perspective)


SCHEME_NAMES = ("three-way", "transitionwise", "statewise", "fine", "total")


class SurplusSurface:
    """Delayed-information revaluation surface for one scheme and model."""

    def __init__(
        self,
        scheme: DecompositionScheme,
        contract: ContractSpec,
        first_order: ValuationBasis,
        second_order: ValuationBasis,
        path: PolicyPath | None = None,
        options: EngineOptions = EngineOptions(),
        strict_jumps: bool = True,
    ):
        if scheme.perspective == "individual" and path is None:
            raise ValidationError("individual perspective requires a policy path")
        if scheme.perspective == "mean":
            for f in scheme.factors:
                if f.return_states and f.return_states != ("*",):
                    raise ValidationError(
                        f"factor {f.label!r}: state-split return factors are not "
                        "evaluable as a mean-perspective surface; use the "
                        "closed-form limit contributions instead"
                    )
        check_no_simultaneous_jumps(
            first_order, second_order, contract,
            path if scheme.perspective == "individual" else None,
            strict=strict_jumps,
        )
        self.scheme = scheme
        self.contract = contract
        self.first_order = first_order
        self.second_order = second_order
        self.path = path if scheme.perspective == "individual" else None
        self.options = options
        self._contexts: dict = {}

    @property
    def size(self) -> int:
        return self.scheme.size

    @property
    def labels(self) -> list:
        return self.scheme.labels

    def context(self, extra_times: Sequence[float] = ()) -> engine.SurfaceContext:
        """Sampled evaluation context whose mesh contains the given times."""
        key = tuple(sorted(set(float(t) for t in extra_times)))
        ctx = self._contexts.get(key)
        if ctx is None:
            data = engine.build_model_data(
                self.contract,
                self.first_order,
                self.second_order,
                self.path,
                self.options,
                extra_times=key,
                experience=self.scheme.perspective,
            )
            idx = self.contract.states.index
            factors = []
            for f in self.scheme.factors:
                phi_states = None
                if f.return_states == ("*",):
                    phi_states = "all"
                elif f.return_states:
                    phi_states = [idx(j) for j in f.return_states]
                factors.append(
                    engine.build_factor_arrays(
                        data,
                        f.label,
                        phi_states,
                        [(idx(j), idx(k)) for j, k in f.unsys_pairs],
                        [(idx(j), idx(k)) for j, k in f.sys_pairs],
                        self.scheme.perspective,
                    )
                )
            ctx = engine.SurfaceContext(data, factors, self.scheme.perspective)
            if len(self._contexts) > 8:
                self._contexts.clear()
            self._contexts[key] = ctx
        return ctx

    def eval(self, statuses: Sequence[float]) -> float:
        """U(t_1, ..., t_m)."""
        for t in statuses:
            if t < 0 or t > self.contract.horizon + 1e-12:
                raise DomainError(f"status {t} outside [0, {self.contract.horizon}]")
        return self.context(tuple(statuses)).eval_statuses(list(statuses))

    def value(self, t: float) -> float:
        """R(t) = U(t, ..., t)."""
        return self.context((t,)).value(t)


def surface_eval(surface: SurplusSurface, statuses: Sequence[float]) -> float:
    """Delayed-information value U(t_1, ..., t_m) of the surface."""
    return surface.eval(statuses)


# ---------------------------------------------------------------------------
# Revaluation surplus
# ---------------------------------------------------------------------------

def revaluation_individual(
    path: PolicyPath,
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Individual revaluation surplus R(t): minus the valuation functional
    of the prudent basis overwritten with realized returns and realized
    transitions up to t.  Equals S(t)/kappa(t) up to quadrature."""
    check_no_simultaneous_jumps(first_order, second_order, contract, path)
    data = engine.build_model_data(
        contract, first_order, second_order, path, options,
        extra_times=[t], experience="individual",
    )
    ctx = engine.SurfaceContext(
        data, [engine.build_factor_arrays(data, "all", "all", [], [], "individual")],
        "individual",
    )
    return ctx.value(t)


def revaluation_mean(
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    contract: ContractSpec,
    t: float,
    options: EngineOptions = EngineOptions(),
) -> float:
    """Mean-portfolio revaluation surplus R'(t): realized counts replaced by
    the experience intensities, occupation indicators by the transition
    probabilities they drive."""
    check_no_simultaneous_jumps(first_order, second_order, contract)
    data = engine.build_model_data(
        contract, first_order, second_order, None, options,
        extra_times=[t], experience="mean",
    )
    ctx = engine.SurfaceContext(
        data, [engine.build_factor_arrays(data, "all", "all", [], [], "mean")], "mean"
    )
    return ctx.value(t)


def spliced_basis(
    first_order: ValuationBasis,
    second_order: ValuationBasis,
    t: float,
    counting=None,
) -> ValuationBasis:
    """The basis with experience information frozen at t and prudent
    dynamics afterwards; with ``counting`` given, the intensity slot uses
    the realized counting processes instead of the experience intensities."""
    phi = first_order.returns.base
    phi2 = second_order.returns.base
    ret = phi + stop_process(phi2 - phi, t)
    lam2 = counting.entries if counting is not None else second_order.intensities.entries
    grid = first_order.intensities.grid
    entries = {}
    for pair in set(first_order.intensities.entries) | set(lam2):
        a = first_order.intensities.entries.get(pair)
        b = lam2.get(pair)
        if a is None:
            a = FVProcess.zero(grid)
        if b is None:
            b = FVProcess.zero(grid)
        entries[pair] = a + stop_process(b - a, t)
    from .markov import IntensityMatrix

    return ValuationBasis(
        ReturnProcess(ret),
        IntensityMatrix(first_order.intensities.states, entries),
    )
