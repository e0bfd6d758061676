"""Synthetic scenarios: ground-truth parameters and simulated polls.

Data are drawn from the declared rung's own generative model so that
inference on the same rung is well specified; the red/blue scenario adds a
generator-only dependence of the state income slope on state income to
reproduce the rich-state/poor-state slope pattern.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from mrpkit.data import (
    N_ETH,
    N_INCOME,
    CellTable,
    Dataset,
    StateTable,
    Survey,
    write_cells,
    write_states,
    write_survey,
)
from mrpkit.design import ModelSpec, build_layout, eta_cells, predictor_matrix

DEFAULT_INCOME_PROFILE = (0.15, 0.22, 0.26, 0.22, 0.15)
DEFAULT_TURNOUT = (0.45, 0.52, 0.58, 0.64, 0.70)
DEFAULT_ETH_PROFILE = (0.65, 0.15, 0.12, 0.08)


@dataclass(frozen=True)
class Scenario:
    """Complete description of one synthetic world."""

    S: int = 50
    rung: str = "M1"
    n: int = 10000
    seed: int = 0
    use_ethnicity: bool = False
    state_predictors: tuple[str, ...] = ("avg_income", "prev_rep_share", "region")

    # true hyperparameters
    gamma: tuple[float, ...] | None = None   # per W column; None -> zeros
    beta_inc: float = 0.1
    eth_coefs: tuple[float, ...] = (0.0, 0.0, 0.0)  # categories 2..4
    sigma_alpha: float = 0.3
    slope_mu: float = 0.1          # M2/M3
    slope_sigma: float = 0.05      # M2/M3
    rho: float = 0.0               # intercept/slope error correlation
    slope_on_income: float = 0.0   # generator-only regression of slope on income
    cat_offsets: tuple[float, ...] = (0.0,) * N_INCOME  # M3 truth
    sigma_cat: float = 0.1

    # population profile
    income_profile: tuple[float, ...] = DEFAULT_INCOME_PROFILE
    turnout_by_income: tuple[float, ...] = DEFAULT_TURNOUT
    nonresponse_skew: tuple[float, ...] = (1.0,) * N_INCOME
    income_linspace: bool = False  # evenly spread state incomes (red/blue)
    target_national_gap: float | None = None

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.rung, self.use_ethnicity, self.state_predictors)


def _rng(scenario: Scenario, stream: int) -> np.random.Generator:
    return np.random.default_rng([scenario.seed, stream])


def make_states(scenario: Scenario) -> StateTable:
    rng = _rng(scenario, 0)
    S = scenario.S
    if scenario.income_linspace:
        raw = np.linspace(-1.0, 1.0, S)
    else:
        raw = rng.standard_normal(S)
    inc = (raw - raw.mean()) / raw.std(ddof=1)
    # conservative (low-income) states lean Republican in the previous vote
    share = np.clip(0.5 - 0.08 * inc + 0.05 * rng.standard_normal(S),
                    0.05, 0.95)
    region = (np.arange(S) % 4) + 1
    labels = [f"S{i + 1:02d}" for i in range(S)]
    return StateTable(labels, inc, share, region)


def make_cells(scenario: Scenario, states: StateTable) -> CellTable:
    rng = _rng(scenario, 3)
    S = scenario.S
    pops = np.round(1e6 * np.exp(0.5 * rng.standard_normal(S)))
    eth_cats = range(1, N_ETH + 1) if scenario.use_ethnicity else (0,)
    sid, inc, eth, na, tr = [], [], [], [], []
    for s in range(1, S + 1):
        for i in range(1, N_INCOME + 1):
            for e in eth_cats:
                frac = scenario.income_profile[i - 1]
                if e:
                    frac *= DEFAULT_ETH_PROFILE[e - 1]
                sid.append(s)
                inc.append(i)
                eth.append(e)
                na.append(round(pops[s - 1] * frac))
                tr.append(scenario.turnout_by_income[i - 1])
    return CellTable(sid, inc, eth, na, tr)


def draw_truth(scenario: Scenario, states: StateTable | None = None,
               cells: CellTable | None = None) -> np.ndarray:
    """True parameter vector in the scenario rung's layout; deterministic
    per (scenario, seed)."""
    states = states if states is not None else make_states(scenario)
    spec = scenario.spec
    layout = build_layout(spec, states)
    W = predictor_matrix(states, spec)
    rng = _rng(scenario, 1)
    S = scenario.S

    gamma = np.zeros(W.shape[1]) if scenario.gamma is None \
        else np.asarray(scenario.gamma, dtype=float)
    if len(gamma) != W.shape[1]:
        raise ValueError(f"gamma has {len(gamma)} entries, W has "
                         f"{W.shape[1]} columns")

    params = np.zeros(layout.n_params)
    beta = params[layout.sl("beta")]
    beta[0] = scenario.beta_inc
    if spec.use_ethnicity:
        beta[1:] = scenario.eth_coefs
    params[layout.sl("gamma")] = gamma
    params[layout.sl("sigma_alpha")] = np.log(max(scenario.sigma_alpha, 1e-12))

    z1 = rng.standard_normal(S)
    z2 = rng.standard_normal(S)
    alpha = W @ gamma + scenario.sigma_alpha * z1
    params[layout.sl("alpha")] = alpha
    if spec.varying_slope:
        corr_part = scenario.rho * z1 + np.sqrt(1 - scenario.rho ** 2) * z2
        slope = scenario.slope_mu \
            + scenario.slope_on_income * states.avg_income \
            + scenario.slope_sigma * corr_part
        params[layout.sl("slope")] = slope
        params[layout.sl("slope_mu")] = scenario.slope_mu
        params[layout.sl("slope_sigma")] = np.log(max(scenario.slope_sigma, 1e-12))
        params[layout.sl("corr")] = np.arctanh(np.clip(scenario.rho, -0.999, 0.999))
    if spec.category_offsets:
        params[layout.sl("cat")] = scenario.cat_offsets
        params[layout.sl("sigma_cat")] = np.log(max(scenario.sigma_cat, 1e-12))

    if scenario.target_national_gap is not None and spec.varying_slope:
        cells = cells if cells is not None else make_cells(scenario, states)
        params = _scale_slopes_to_gap(params, layout, cells,
                                      scenario.target_national_gap)
    return params


def _national_gap(params, layout, cells) -> float:
    theta = expit(eta_cells(params, layout, cells.state_id,
                            cells.income_cat, cells.ethnicity))
    N = cells.n_voters
    out = []
    for i in (1, N_INCOME):
        m = cells.income_cat == i
        out.append(float(np.sum(N[m] * theta[m]) / np.sum(N[m])))
    return out[1] - out[0]


def _scale_slopes_to_gap(params, layout, cells, target, tol=1e-8):
    """Scale (beta_inc + slope_j) jointly so the true national top-minus-
    bottom income gap equals the target; monotone, solved by bisection."""
    base = params.copy()
    b0 = base[layout.sl("beta")][0]
    s0 = base[layout.sl("slope")].copy()
    mu0 = base[layout.sl("slope_mu")][0]

    def with_scale(c):
        p = base.copy()
        p[layout.sl("beta")][0] = c * b0
        p[layout.sl("slope")] = c * s0
        p[layout.sl("slope_mu")] = c * mu0
        return p

    lo, hi = 0.0, 1.0
    while _national_gap(with_scale(hi), layout, cells) < target:
        hi *= 2.0
        if hi > 64:
            raise ValueError("cannot reach target national gap")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _national_gap(with_scale(mid), layout, cells) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return with_scale(0.5 * (lo + hi))


def true_cell_theta(truth, scenario: Scenario, states=None, cells=None):
    states = states if states is not None else make_states(scenario)
    cells = cells if cells is not None else make_cells(scenario, states)
    layout = build_layout(scenario.spec, states)
    return expit(eta_cells(truth, layout, cells.state_id, cells.income_cat,
                           cells.ethnicity))


def simulate_poll(truth, scenario: Scenario, states: StateTable | None = None,
                  cells: CellTable | None = None) -> Dataset:
    """Respondents allocated to cells in proportion to adult population
    (times any income nonresponse skew), votes flipped at the cell
    probability."""
    states = states if states is not None else make_states(scenario)
    cells = cells if cells is not None else make_cells(scenario, states)
    layout = build_layout(scenario.spec, states)
    theta = expit(eta_cells(truth, layout, cells.state_id, cells.income_cat,
                            cells.ethnicity))
    rng = _rng(scenario, 2)

    skew = np.asarray(scenario.nonresponse_skew)[cells.income_cat - 1]
    p = cells.n_adults * skew
    p = p / p.sum()
    counts = rng.multinomial(scenario.n, p)
    yes = rng.binomial(counts, theta)

    sid = np.repeat(cells.state_id, counts)
    inc = np.repeat(cells.income_cat, counts)
    eth = np.repeat(cells.ethnicity, counts)
    vote = np.zeros(counts.sum(), dtype=int)
    pos = 0
    for c in range(len(cells)):
        vote[pos:pos + yes[c]] = 1
        pos += counts[c]
    survey = Survey(sid, inc, eth, vote)
    return Dataset(survey, cells, states)


def redblue_scenario(S=50, n=30000, seed=0) -> Scenario:
    """Canned M2 world where the income slope falls with state income:
    essentially flat income-voting in the richest states, steep in the
    poorest, with a national top-minus-bottom gap of 0.20."""
    if S < 10:
        raise ValueError("red/blue scenario needs at least 10 states")
    return Scenario(
        S=S, rung="M2", n=n, seed=seed,
        gamma=(0.0, -0.15, 0.1, 0.0, 0.0, 0.0),  # intercept, income, share, regions
        beta_inc=0.0,
        sigma_alpha=0.3,
        slope_mu=0.20, slope_sigma=0.012, rho=0.0,
        slope_on_income=-0.115,
        income_linspace=True,
        target_national_gap=0.20,
    )


def write_scenario_files(scenario: Scenario, outdir) -> dict:
    """Write survey.csv, cells.csv, states.csv, truth.csv for a scenario."""
    os.makedirs(outdir, exist_ok=True)
    states = make_states(scenario)
    cells = make_cells(scenario, states)
    truth = draw_truth(scenario, states, cells)
    dataset = simulate_poll(truth, scenario, states, cells)
    theta = true_cell_theta(truth, scenario, states, cells)

    paths = {k: os.path.join(outdir, f"{k}.csv")
             for k in ("survey", "cells", "states", "truth")}
    write_states(states, paths["states"])
    write_survey(dataset.survey, paths["survey"], states)
    write_cells(cells, paths["cells"], states)
    with open(paths["truth"], "w", encoding="utf-8") as f:
        cols = ["state", "income"] + (["ethnicity"] if scenario.use_ethnicity
                                      else []) + ["theta"]
        f.write(",".join(cols) + "\n")
        for i in range(len(cells)):
            row = [states.labels[cells.state_id[i] - 1],
                   str(int(cells.income_cat[i]))]
            if scenario.use_ethnicity:
                row.append(str(int(cells.ethnicity[i])))
            row.append(repr(float(theta[i])))
            f.write(",".join(row) + "\n")
    return paths
