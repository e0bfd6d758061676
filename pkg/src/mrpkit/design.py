"""Model specification, parameter layout, and linear predictors.

Three model rungs:
  M1  varying state intercept, single centered income slope
  M2  M1 + a per-state income slope with a 2x2 covariance between the
      state intercept and slope errors
  M3  M2 + per-income-category offsets, allowing a nonlinear (on the
      logit scale) income effect

The flat parameter vector is unconstrained: scale parameters are stored as
logs and the intercept/slope correlation as its atanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mrpkit.data import N_ETH, N_INCOME, CellTable, StateTable

RUNGS = ("M1", "M2", "M3")
DEFAULT_STATE_PREDICTORS = ("avg_income", "prev_rep_share", "region")


@dataclass(frozen=True)
class ModelSpec:
    """Which rung to fit and which dimensions/predictors are active."""

    rung: str = "M1"
    use_ethnicity: bool = False
    state_predictors: tuple[str, ...] = DEFAULT_STATE_PREDICTORS

    def __post_init__(self):
        if self.rung not in RUNGS:
            raise ValueError(f"unknown rung {self.rung!r}; expected one of {RUNGS}")
        object.__setattr__(self, "state_predictors", tuple(self.state_predictors))
        for name in self.state_predictors:
            if name not in DEFAULT_STATE_PREDICTORS:
                raise ValueError(f"unknown state predictor {name!r}")

    @property
    def varying_slope(self) -> bool:
        return self.rung in ("M2", "M3")

    @property
    def category_offsets(self) -> bool:
        return self.rung == "M3"


@dataclass(frozen=True)
class ParameterLayout:
    """Named disjoint blocks covering the flat parameter vector.

    Block order is fixed: beta, gamma, alpha, sigma_alpha, then
    slope, slope_mu, slope_sigma, corr (M2/M3), then cat, sigma_cat (M3).
    sigma_* blocks hold log-scale values; corr holds atanh(rho).
    """

    blocks: tuple[tuple[str, int], ...]  # (name, length) in order
    n_states: int
    spec: ModelSpec

    @property
    def n_params(self) -> int:
        return sum(n for _, n in self.blocks)

    @property
    def offsets(self) -> dict[str, int]:
        out, off = {}, 0
        for name, n in self.blocks:
            out[name] = off
            off += n
        return out

    def sl(self, name: str) -> slice:
        off = 0
        for bname, n in self.blocks:
            if bname == name:
                return slice(off, off + n)
            off += n
        raise KeyError(name)

    def has(self, name: str) -> bool:
        return any(bname == name for bname, _ in self.blocks)

    def block_dict(self) -> dict[str, list[int]]:
        """{name: [offset, length]} for serialization."""
        out, off = {}, 0
        for name, n in self.blocks:
            out[name] = [off, n]
            off += n
        return out


def predictor_matrix(states: StateTable, spec: ModelSpec) -> np.ndarray:
    """State-level design matrix W: intercept, then the requested columns.

    Continuous predictors are standardized across states; region enters as
    indicators for regions 2..R (region 1 is the baseline).
    """
    cols = [np.ones(states.n_states)]
    for name in spec.state_predictors:
        if name == "avg_income":
            cols.append(states.avg_income)
        elif name == "prev_rep_share":
            x = states.prev_rep_share
            sd = x.std(ddof=1) if len(x) > 1 else 1.0
            cols.append((x - x.mean()) / sd if sd > 0 else x - x.mean())
        elif name == "region":
            for r in range(2, states.n_regions + 1):
                cols.append((states.region_id == r).astype(float))
    return np.column_stack(cols)


def build_layout(spec: ModelSpec, states: StateTable) -> ParameterLayout:
    """Parameter layout for a spec; pure function of (spec, states)."""
    S = states.n_states
    if S < 2:
        raise ValueError("hierarchy requires at least 2 states")
    n_gamma = predictor_matrix(states, spec).shape[1]
    n_beta = 1 + (N_ETH - 1 if spec.use_ethnicity else 0)
    blocks = [("beta", n_beta), ("gamma", n_gamma), ("alpha", S),
              ("sigma_alpha", 1)]
    if spec.varying_slope:
        blocks += [("slope", S), ("slope_mu", 1), ("slope_sigma", 1), ("corr", 1)]
    if spec.category_offsets:
        blocks += [("cat", N_INCOME), ("sigma_cat", 1)]
    return ParameterLayout(tuple(blocks), S, spec)


def income_code(income_cat) -> np.ndarray:
    """Centered income code: categories 1..5 -> -2..2."""
    return np.asarray(income_cat, dtype=float) - 3.0


def eta_cells(params: np.ndarray, layout: ParameterLayout,
              state_id, income_cat, ethnicity) -> np.ndarray:
    """Linear predictor for an array of units (cells or respondents)."""
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != layout.n_params:
        raise ValueError(f"parameter vector length {params.shape[-1]} != "
                         f"layout length {layout.n_params}")
    spec = layout.spec
    s0 = np.asarray(state_id, dtype=int) - 1
    if np.any((s0 < 0) | (s0 >= layout.n_states)):
        raise ValueError("state index outside declared cross")
    i = np.asarray(income_cat, dtype=int)
    if np.any((i < 1) | (i > N_INCOME)):
        raise ValueError("income category outside declared cross")
    z = income_code(i)

    beta = params[layout.sl("beta")]
    alpha = params[layout.sl("alpha")]
    coef = beta[0]
    if spec.varying_slope:
        coef = coef + params[layout.sl("slope")][s0]
    eta = alpha[s0] + coef * z
    if spec.use_ethnicity:
        e = np.asarray(ethnicity, dtype=int)
        if np.any((e < 1) | (e > N_ETH)):
            raise ValueError("ethnicity category outside declared cross")
        eth_coef = np.concatenate([[0.0], beta[1:]])  # category 1 is baseline
        eta = eta + eth_coef[e - 1]
    if spec.category_offsets:
        eta = eta + params[layout.sl("cat")][i - 1]
    return eta


def linear_predictor(params: np.ndarray, unit, layout: ParameterLayout) -> float:
    """Linear predictor eta for one unit.

    ``unit`` is anything with state_id / income_cat / ethnicity attributes
    (SurveyResponse, PoststratCell) or a (state, income[, ethnicity]) tuple.
    """
    if hasattr(unit, "state_id"):
        s, i, e = unit.state_id, unit.income_cat, unit.ethnicity
    else:
        s, i = unit[0], unit[1]
        e = unit[2] if len(unit) > 2 else 0
    return float(eta_cells(params, layout, [s], [i], [e])[0])
