"""Run-configuration loading: one JSON document describing the contract,
both valuation bases, an optional realized path, and the run parameters.

All jump times found in the document are inserted into the time grid before
any process is built, so jump times are always grid points.  Rates are per
year; times in years; premiums may be entered positive and are negated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contract import ContractSpec, TransitionPayment, ValuationBasis
from .engine import EngineOptions
from .errors import ConfigError, SurplusDecError
from .markov import IntensityMatrix, PolicyPath, StateSpace
from .processes import FVProcess, ReturnProcess, TimeGrid


@dataclass(frozen=True)
class RunConfig:
    contract: ContractSpec
    first_order: ValuationBasis
    second_order: ValuationBasis
    path: PolicyPath | None
    scheme: str
    perspective: str
    t: float
    depths: tuple
    orders: tuple          # tuple of factor-order tuples (may be empty)
    n_paths: int
    seed: int
    options: EngineOptions
    fair_premium: float | None = None
    diagnostics: dict = field(default_factory=dict)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}.{key}", "missing required field")
    return section[key]


def _pair(label: str, states, where: str):
    if "->" not in label:
        raise ConfigError(where, f"transition key {label!r} must look like 'a->d'")
    j, k = label.split("->", 1)
    if j not in states.states or k not in states.states:
        raise ConfigError(where, f"unknown state in transition {label!r}")
    return j, k


def _fv(spec, grid: TimeGrid, where: str) -> FVProcess:
    if not isinstance(spec, dict):
        raise ConfigError(where, "expected an object with 'density' and/or 'jumps'")
    density = spec.get("density", 0.0)
    jumps = {float(t): float(v) for t, v in spec.get("jumps", {}).items()}
    try:
        dens = np.broadcast_to(np.asarray(density, dtype=float), (grid.n_cells,)).copy()
    except ValueError as exc:
        raise ConfigError(f"{where}.density", str(exc)) from exc
    try:
        return FVProcess(grid, dens, tuple(jumps.items()))
    except SurplusDecError as exc:
        raise ConfigError(where, str(exc)) from exc


def _jump_times(doc: dict) -> list:
    """Every jump time mentioned anywhere in the document."""
    times: list = []

    def walk(node):
        if isinstance(node, dict):
            for key, val in node.items():
                if key == "jumps" and isinstance(val, dict):
                    times.extend(float(t) for t in val)
                else:
                    walk(val)
        elif isinstance(node, list):
            for item in node:
                walk(item)

    walk(doc)
    return times


def _transition_payment(spec, grid: TimeGrid, where: str) -> TransitionPayment:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(where, "expected exactly one of constant | linear | lump")
    kind, value = next(iter(spec.items()))
    if kind == "constant":
        return TransitionPayment.constant(float(value))
    if kind == "linear":
        c0, c1 = (float(v) for v in value)
        return TransitionPayment.from_function(lambda t, a=c0, b=c1: a + b * t)
    if kind == "lump":
        try:
            return TransitionPayment.end_of_cell_lump(grid, value)
        except SurplusDecError as exc:
            raise ConfigError(where, str(exc)) from exc
    raise ConfigError(where, f"unknown payment kind {kind!r}")


def load_config(path_or_doc) -> RunConfig:
    """Load and fully validate a run configuration.

    Accepts a file path or an already-parsed document.  Admissibility
    failures surface as ``ConfigError`` naming the offending field.
    """
    if isinstance(path_or_doc, (str, Path)):
        with open(path_or_doc, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = path_or_doc
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")

    st = _require(doc, "states", "<root>")
    try:
        states = StateSpace(tuple(_require(st, "labels", "states")),
                            _require(st, "initial", "states"))
    except SurplusDecError as exc:
        raise ConfigError("states", str(exc)) from exc

    horizon = float(_require(doc, "horizon", "<root>"))
    grid_pts = doc.get("grid")
    if grid_pts is None:
        cells = int(round(horizon)) if abs(horizon - round(horizon)) < 1e-9 else 1
        base = TimeGrid.regular(horizon, max(cells, 1))
    else:
        try:
            base = TimeGrid(np.asarray(grid_pts, dtype=float))
        except SurplusDecError as exc:
            raise ConfigError("grid", str(exc)) from exc
        if abs(base.horizon - horizon) > 1e-9:
            raise ConfigError("grid", f"grid must end at the horizon {horizon}")
    path_doc = doc.get("path") or []
    path_times = [float(rec[0]) for rec in path_doc]
    grid = base.insert(_jump_times(doc) + path_times)

    def basis(section_name: str) -> ValuationBasis:
        sec = _require(doc, section_name, "<root>")
        ret_spec = _require(sec, "returns", section_name)
        ret = _fv(ret_spec, grid, f"{section_name}.returns")
        try:
            returns = ReturnProcess(ret)
        except SurplusDecError as exc:
            raise ConfigError(f"{section_name}.returns", str(exc)) from exc
        entries = {}
        for label, spec in _require(sec, "intensities", section_name).items():
            jk = _pair(label, states, f"{section_name}.intensities")
            entries[jk] = _fv(spec, grid, f"{section_name}.intensities.{label}")
        try:
            return ValuationBasis(returns, IntensityMatrix(states, entries, grid=grid))
        except SurplusDecError as exc:
            raise ConfigError(f"{section_name}.intensities", str(exc)) from exc

    first = basis("first_order")
    second = basis("second_order")

    csec = _require(doc, "contract", "<root>")
    sojourn = {}
    for j, spec in csec.get("sojourn", {}).items():
        if j not in states.states:
            raise ConfigError("contract.sojourn", f"unknown state {j!r}")
        sojourn[j] = _fv(spec, grid, f"contract.sojourn.{j}")
    transition = {}
    for label, spec in csec.get("transition", {}).items():
        jk = _pair(label, states, "contract.transition")
        transition[jk] = _transition_payment(spec, grid, f"contract.transition.{label}")
    premiums = csec.get("premiums", {})

    run = doc.get("run", {})
    options = EngineOptions(
        substeps=int(run.get("substeps", 64)),
        solver=str(run.get("solver", "product")),
    )

    fair_premium = None
    try:
        contract = ContractSpec(states, grid, sojourn, transition)
        if premiums:
            # positive premium inputs, negated into the sojourn streams
            for j, spec in premiums.items():
                prem = _fv(spec, grid, f"contract.premiums.{j}")
                contract = ContractSpec(
                    states, grid,
                    {**contract.sojourn, j: contract.sojourn.get(j, FVProcess.zero(grid)) - prem},
                    contract.transition,
                )
        if csec.get("fair_single_premium"):
            from .contract import functional_H

            benefit_value = functional_H(first, contract, options)
            fair_premium = benefit_value
            soj_a = contract.sojourn.get(states.initial, FVProcess.zero(grid))
            soj_a = soj_a + FVProcess.from_jumps(grid, {0.0: -benefit_value})
            contract = ContractSpec(
                states, grid, {**contract.sojourn, states.initial: soj_a}, contract.transition
            )
    except SurplusDecError as exc:
        raise ConfigError("contract", str(exc)) from exc

    path = None
    if path_doc:
        try:
            path = PolicyPath(states, tuple((float(t), j, k) for t, j, k in path_doc))
        except (SurplusDecError, ValueError) as exc:
            raise ConfigError("path", str(exc)) from exc

    scheme = run.get("scheme", "three-way")
    perspective = run.get("perspective", "individual" if path is not None else "mean")
    t = float(run.get("t", contract.horizon))
    depths = run.get("depths", [4, 12])
    if not (isinstance(depths, (list, tuple)) and len(depths) == 2):
        raise ConfigError("run.depths", "expected [first_depth, last_depth]")
    orders = tuple(tuple(o) for o in run.get("orders", []))
    if "order" in run:
        orders = (tuple(run["order"]),) + orders

    diagnostics = {
        "grid_points": [float(x) for x in grid.points],
        "mesh_substeps": options.substeps,
        "fair_premium": fair_premium,
    }
    return RunConfig(
        contract=contract,
        first_order=first,
        second_order=second,
        path=path,
        scheme=str(scheme),
        perspective=str(perspective),
        t=t,
        depths=(int(depths[0]), int(depths[1])),
        orders=orders,
        n_paths=int(run.get("paths", 1000)),
        seed=int(run.get("seed", 0)),
        options=options,
        fair_premium=fair_premium,
        diagnostics=diagnostics,
    )
