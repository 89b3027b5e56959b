import numpy as np
import pytest

import surplusdec as sd
from surplusdec import EngineOptions


@pytest.fixture(scope="session")
def endowment():
    """Pure endowment, 2 states, T = 1: benefit 1 at maturity, fair single
    premium exp(-0.07) at time 0, prudent basis (5% return, 2% mortality)."""
    ss = sd.StateSpace(("a", "d"), "a")
    g = sd.TimeGrid.regular(1.0, 1)
    first = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.05)),
        sd.IntensityMatrix(ss, {("a", "d"): sd.FVProcess.from_rate(g, 0.02)}),
    )
    second = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.06)),
        sd.IntensityMatrix(ss, {("a", "d"): sd.FVProcess.from_rate(g, 0.015)}),
    )
    premium = float(np.exp(-0.07))
    contract = sd.ContractSpec(
        ss, g,
        {"a": sd.FVProcess.from_jumps(g, {0.0: -premium, 1.0: 1.0})},
        {},
    )
    return dict(states=ss, grid=g, first=first, second=second,
                contract=contract, premium=premium)


GERMAN_T = 10
GERMAN_PREMIUM = 0.08


def _german_amounts():
    b = np.zeros(GERMAN_T + 1)
    b[:GERMAN_T] = -GERMAN_PREMIUM
    b[GERMAN_T] = 1.0
    d = np.ones(GERMAN_T + 1)
    s = np.array([0.0] + [0.10 + 0.035 * l for l in range(1, GERMAN_T + 1)])
    return b, d, s


def _german_contract(ss, g):
    b, d, s = _german_amounts()
    soj = {"a": sd.FVProcess.from_jumps(g, {float(l): b[l] for l in range(GERMAN_T + 1)})}
    trans = {
        ("a", "d"): sd.TransitionPayment.end_of_cell_lump(g, d[1:]),
        ("a", "s"): sd.TransitionPayment.end_of_cell_lump(g, s[1:]),
    }
    return sd.ContractSpec(ss, g, soj, trans)


@pytest.fixture(scope="session")
def german_ac():
    """Three-state yearly endowment-with-riders, absolutely continuous
    intensities: the workhorse for convergence, limit-formula and Monte
    Carlo checks."""
    ss = sd.StateSpace(("a", "s", "d"), "a")
    g = sd.TimeGrid.regular(float(GERMAN_T), GERMAN_T)
    lam_ad_1 = np.array([0.008 + 0.0012 * y for y in range(GERMAN_T)])
    lam_ad_2 = 0.85 * lam_ad_1
    lam_as_1 = np.full(GERMAN_T, 0.060)
    lam_as_2 = np.full(GERMAN_T, 0.048)
    first = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.03)),
        sd.IntensityMatrix(ss, {
            ("a", "d"): sd.FVProcess.from_rate(g, lam_ad_1),
            ("a", "s"): sd.FVProcess.from_rate(g, lam_as_1),
        }),
    )
    second = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.045)),
        sd.IntensityMatrix(ss, {
            ("a", "d"): sd.FVProcess.from_rate(g, lam_ad_2),
            ("a", "s"): sd.FVProcess.from_rate(g, lam_as_2),
        }),
    )
    contract = _german_contract(ss, g)
    path = sd.PolicyPath(ss, ((6.31, "a", "s"),))
    return dict(states=ss, grid=g, first=first, second=second,
                contract=contract, path=path, T=GERMAN_T)


@pytest.fixture(scope="session")
def german_discrete():
    """The same contract in the classical yearly form: decrement
    probabilities as point masses at mid-year event times, benefits settled
    at year end.  Intensity splicing then equals componentwise probability
    splicing, so the yearly-table oracle applies exactly."""
    ss = sd.StateSpace(("a", "s", "d"), "a")
    g = sd.TimeGrid.regular(float(GERMAN_T), GERMAN_T)
    q1 = np.array([0.008 + 0.0012 * y for y in range(GERMAN_T)])
    q2 = 0.85 * q1
    r1 = np.full(GERMAN_T, 0.060)
    r2 = np.full(GERMAN_T, 0.048)
    i1 = np.full(GERMAN_T, np.exp(0.03) - 1.0)
    i2 = np.full(GERMAN_T, np.exp(0.045) - 1.0)

    def point_mass(vals):
        return sd.FVProcess(
            g.insert([y + 0.5 for y in range(GERMAN_T)]),
            np.zeros(2 * GERMAN_T),
            {y + 0.5: float(vals[y]) for y in range(GERMAN_T)},
        )

    first = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.03)),
        sd.IntensityMatrix(ss, {("a", "d"): point_mass(q1), ("a", "s"): point_mass(r1)}),
    )
    second = sd.ValuationBasis(
        sd.ReturnProcess(sd.FVProcess.from_rate(g, 0.045)),
        sd.IntensityMatrix(ss, {("a", "d"): point_mass(q2), ("a", "s"): point_mass(r2)}),
    )
    contract = _german_contract(ss, g)
    b, d, s = _german_amounts()
    return dict(states=ss, grid=g, first=first, second=second, contract=contract,
                tables=dict(i1=i1, i2=i2, q1=q1, q2=q2, r1=r1, r2=r2, b=b, d=d, s=s),
                T=GERMAN_T)


def random_model(rng, n_states=3, horizon=2.0, cells=2, with_jumps=True,
                 with_transition_payments=True):
    """Randomized admissible model for property tests: small state space,
    positive piecewise-constant intensities, returns with optional jumps,
    sojourn atoms and densities, bounded transition payment functions."""
    labels = tuple("abcdef"[:n_states])
    ss = sd.StateSpace(labels, labels[0])
    jt_first = round(float(rng.uniform(0.55, 0.70)) * horizon, 2)
    jt_second = round(float(rng.uniform(0.30, 0.45)) * horizon, 2)
    g = sd.TimeGrid.regular(horizon, cells).insert([jt_first, jt_second])

    def intensity():
        entries = {}
        for j in labels:
            for k in labels:
                if j == k or rng.random() < 0.35:
                    continue
                dens = rng.uniform(0.01, 0.12, g.n_cells)
                entries[(j, k)] = sd.FVProcess(g, dens)
        if not entries:
            entries[(labels[0], labels[-1])] = sd.FVProcess.from_rate(g, 0.1)
        return sd.IntensityMatrix(ss, entries, grid=g)

    def returns(jump_at):
        dens = rng.uniform(0.0, 0.06, g.n_cells)
        jumps = {}
        if with_jumps and rng.random() < 0.7:
            jumps[jump_at] = float(rng.uniform(-0.2, 0.25))
        return sd.ReturnProcess(sd.FVProcess(g, dens, jumps))

    # distinct jump times keep the return processes free of common jumps
    first = sd.ValuationBasis(returns(jt_first), intensity())
    second = sd.ValuationBasis(returns(jt_second), intensity())

    soj = {}
    for j in labels[: max(1, n_states - 1)]:
        dens = rng.uniform(-0.3, 0.3, g.n_cells)
        atoms = {0.0: float(rng.uniform(-0.8, 0.2))} if j == labels[0] else {}
        atoms[horizon] = float(rng.uniform(0.0, 0.8))
        soj[j] = sd.FVProcess(g, dens, atoms)
    trans = {}
    if with_transition_payments:
        for (j, k) in second.intensities.pairs():
            if rng.random() < 0.6:
                c0, c1 = float(rng.uniform(0.0, 0.8)), float(rng.uniform(-0.15, 0.15))
                trans[(j, k)] = sd.TransitionPayment.from_function(
                    lambda t, a=c0, b=c1: a + b * t
                )
    contract = sd.ContractSpec(ss, g, soj, trans)
    return dict(states=ss, grid=g, first=first, second=second, contract=contract)


def random_path(rng, model, horizon=None):
    """Random admissible trajectory through the model's transition graph,
    jump times away from every grid point."""
    ss = model["states"]
    pairs = set(model["second"].intensities.pairs())
    horizon = horizon or model["grid"].horizon
    grid_pts = set(np.round(model["grid"].points, 9))
    jumps = []
    state, t = ss.initial, 0.0
    for _ in range(int(rng.integers(0, 3))):
        targets = [k for (j, k) in pairs if j == state]
        if not targets:
            break
        t = t + float(rng.uniform(0.05, 0.5)) * (horizon - t)
        t = round(t, 4)
        if t >= horizon or round(t, 9) in grid_pts:
            break
        to = targets[int(rng.integers(0, len(targets)))]
        jumps.append((t, state, to))
        state = to
    return sd.PolicyPath(ss, tuple(jumps))
