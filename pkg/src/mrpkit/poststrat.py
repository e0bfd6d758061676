"""From posterior draws to population estimates.

Every aggregate is the voter-count-weighted average of its member cells,
computed per posterior draw; summaries are taken from the aggregated draws,
never from aggregating summaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from mrpkit.data import N_INCOME, CellTable, StateTable
from mrpkit.design import ParameterLayout, eta_cells, income_code
from mrpkit.samplers import PosteriorDraws


@dataclass
class CellEstimates:
    """Per-cell linear predictors and probabilities, one row per draw."""

    cells: CellTable
    eta: np.ndarray  # (D, C)

    def __post_init__(self):
        self.eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        if self.eta.shape[1] != len(self.cells):
            raise ValueError("eta width does not match number of cells")

    @property
    def theta(self) -> np.ndarray:
        return expit(self.eta)

    @property
    def n_draws(self) -> int:
        return self.eta.shape[0]

    def summary(self) -> dict:
        th = self.theta
        return {
            "mean": th.mean(axis=0),
            "sd": th.std(axis=0, ddof=1) if self.n_draws > 1
            else np.zeros(th.shape[1]),
            "q05": np.quantile(th, 0.05, axis=0),
            "q25": np.quantile(th, 0.25, axis=0),
            "q50": np.quantile(th, 0.50, axis=0),
            "q75": np.quantile(th, 0.75, axis=0),
            "q95": np.quantile(th, 0.95, axis=0),
        }


@dataclass
class AggregateEstimates:
    """Weighted aggregates over groups of cells."""

    dims: tuple[str, ...]           # grouping dimensions, may be empty
    keys: list[tuple]               # one tuple per group
    theta: np.ndarray               # (D, G)
    weight: np.ndarray              # (G,) total voter count per group

    @property
    def n_groups(self) -> int:
        return len(self.keys)

    def summary(self) -> dict:
        th = np.atleast_2d(self.theta)
        D = th.shape[0]
        return {
            "mean": th.mean(axis=0),
            "sd": th.std(axis=0, ddof=1) if D > 1 else np.zeros(th.shape[1]),
            "q05": np.quantile(th, 0.05, axis=0),
            "q25": np.quantile(th, 0.25, axis=0),
            "q50": np.quantile(th, 0.50, axis=0),
            "q75": np.quantile(th, 0.75, axis=0),
            "q95": np.quantile(th, 0.95, axis=0),
        }


def predict_cells(draws: PosteriorDraws, cells: CellTable,
                  layout: ParameterLayout) -> CellEstimates:
    """Linear predictor for every cell under every draw."""
    D = draws.n_draws
    C = len(cells)
    eta = np.empty((D, C))
    for d in range(D):
        eta[d] = eta_cells(draws.draws[d], layout,
                           cells.state_id, cells.income_cat, cells.ethnicity)
    return CellEstimates(cells, eta)


def _group_labels(cells: CellTable, dims, states: StateTable | None):
    cols = []
    for dim in dims:
        if dim == "state":
            cols.append(cells.state_id)
        elif dim == "income":
            cols.append(cells.income_cat)
        elif dim == "ethnicity":
            if not cells.use_ethnicity:
                raise ValueError("grouping dimension 'ethnicity' is not part "
                                 "of the model cross")
            cols.append(cells.ethnicity)
        elif dim == "region":
            if states is None:
                raise ValueError("grouping by region requires the state table")
            cols.append(states.region_id[cells.state_id - 1])
        else:
            raise ValueError(f"unknown grouping dimension {dim!r}")
    if not cols:
        return [()] * len(cells)
    return list(zip(*[np.asarray(c).tolist() for c in cols]))


def poststratify(cell_estimates: CellEstimates, cells: CellTable | None = None,
                 grouping=(), states: StateTable | None = None,
                 ) -> AggregateEstimates:
    """N-weighted average of cell probabilities within each group, per draw.

    ``grouping`` is a sequence of dimension names out of
    {state, income, ethnicity, region}; empty means a single national group.
    """
    cells = cells if cells is not None else cell_estimates.cells
    dims = tuple(grouping)
    labels = _group_labels(cells, dims, states)
    keys = sorted(set(labels))
    key_pos = {k: i for i, k in enumerate(keys)}
    gidx = np.array([key_pos[l] for l in labels])
    G = len(keys)

    N = cells.n_voters
    weight = np.bincount(gidx, weights=N, minlength=G)
    zero = np.flatnonzero(weight == 0)
    if len(zero):
        raise ValueError(f"group {keys[zero[0]]} has zero total voter weight")

    theta = cell_estimates.theta  # (D, C)
    D = theta.shape[0]
    num = np.zeros((D, G))
    wth = theta * N  # broadcast over draws
    for g in range(G):
        num[:, g] = wth[:, gidx == g].sum(axis=1)
    return AggregateEstimates(dims, keys, num / weight, weight)


def calibrate_to_totals(cell_estimates: CellEstimates, cells: CellTable | None,
                        recorded: dict | np.ndarray,
                        tol=1e-10, max_iter=200):
    """Shift each state's cell linear predictors so the state aggregate
    matches its recorded two-party Republican share, separately per draw.

    ``recorded`` maps state index (1-based) to share, or is an array indexed
    by state; shares must be strictly inside (0, 1). Returns
    (calibrated CellEstimates, deltas of shape (D, S)).
    """
    cells = cells if cells is not None else cell_estimates.cells
    S = cells.n_states
    if isinstance(recorded, dict):
        rec = np.array([recorded[s] for s in range(1, S + 1)], dtype=float)
    else:
        rec = np.asarray(recorded, dtype=float)
        if len(rec) != S:
            raise ValueError(f"recorded totals cover {len(rec)} states, "
                             f"expected {S}")
    if np.any((rec <= 0.0) | (rec >= 1.0)):
        bad = int(np.argmax((rec <= 0.0) | (rec >= 1.0))) + 1
        raise ValueError(f"recorded share for state {bad} is not strictly "
                         f"inside (0, 1); no finite logit shift exists")

    eta = cell_estimates.eta.copy()
    D = eta.shape[0]
    deltas = np.zeros((D, S))
    for s in range(1, S + 1):
        mask = cells.state_id == s
        w = cells.n_voters[mask]
        w = w / w.sum()
        sub = eta[:, mask]  # (D, C_s)
        target = rec[s - 1]

        cur = sub @ w  # rough center for the initial guess
        delta = logit(target) - cur
        lo = np.full(D, -80.0)
        hi = np.full(D, 80.0)
        for _ in range(max_iter):
            f = expit(sub + delta[:, None]) @ w - target
            done = np.abs(f) < tol
            if np.all(done):
                break
            hi = np.where(f > 0, np.minimum(hi, delta), hi)
            lo = np.where(f < 0, np.maximum(lo, delta), lo)
            p = expit(sub + delta[:, None])
            fp = (p * (1.0 - p)) @ w
            step = np.where(fp > 0, f / np.where(fp > 0, fp, 1.0), 0.0)
            cand = delta - step
            outside = (cand <= lo) | (cand >= hi) | (fp <= 0)
            delta = np.where(done, delta, np.where(outside, 0.5 * (lo + hi), cand))
        deltas[:, s - 1] = delta
        eta[:, mask] = sub + delta[:, None]
    return CellEstimates(cells, eta), deltas


def state_income_slopes(cell_estimates: CellEstimates,
                        cells: CellTable | None = None,
                        states: StateTable | None = None) -> dict:
    """Per-state income-voting slope on the probability scale.

    Primary measure: top income category minus bottom. Secondary: the
    least-squares slope of the state's income curve over codes -2..2.
    """
    cells = cells if cells is not None else cell_estimates.cells
    agg = poststratify(cell_estimates, cells, ("state", "income"))
    S = cells.n_states
    D = agg.theta.shape[0]
    curve = np.empty((D, S, N_INCOME))
    for g, (s, i) in enumerate(agg.keys):
        curve[:, s - 1, i - 1] = agg.theta[:, g]

    gap = curve[:, :, N_INCOME - 1] - curve[:, :, 0]  # (D, S)
    z = income_code(np.arange(1, N_INCOME + 1))
    ls = (curve @ z) / float(np.sum(z * z))

    def _summ(x):
        return {"mean": x.mean(axis=0),
                "q05": np.quantile(x, 0.05, axis=0),
                "q95": np.quantile(x, 0.95, axis=0)}

    out = {"gap": _summ(gap), "ls_slope": _summ(ls),
           "gap_draws": gap, "ls_slope_draws": ls}
    if states is not None:
        out["avg_income"] = states.avg_income.copy()
    return out


def national_income_gap(cell_estimates: CellEstimates,
                        cells: CellTable | None = None) -> np.ndarray:
    """Draws of the national top-minus-bottom income category gap."""
    cells = cells if cells is not None else cell_estimates.cells
    agg = poststratify(cell_estimates, cells, ("income",))
    top = agg.keys.index((N_INCOME,))
    bot = agg.keys.index((1,))
    return agg.theta[:, top] - agg.theta[:, bot]
