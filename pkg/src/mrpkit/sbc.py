"""Simulation-based calibration of the sampler.

Draw a parameter vector from the model's own prior (top-level coefficients
and scales from the proper prior, state effects from the hierarchy), simulate
a poll, fit, and record the rank of each true parameter among thinned
posterior draws. If sampling is correct the ranks are uniform.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from scipy.stats import chi2

from mrpkit.data import Dataset, Survey
from mrpkit.design import build_layout, eta_cells, predictor_matrix
from mrpkit.model import LogDensityModel, PriorConfig
from mrpkit.samplers import sample_mcmc
from mrpkit.synthetic import Scenario, make_cells, make_states


def draw_from_prior(scenario: Scenario, prior: PriorConfig, states, rng):
    """Full parameter vector from the joint prior of the fitted model."""
    spec = scenario.spec
    layout = build_layout(spec, states)
    W = predictor_matrix(states, spec)
    params = np.zeros(layout.n_params)
    cs, ls = prior.coef_scale, prior.log_scale_sd

    params[layout.sl("beta")] = cs * rng.standard_normal(
        layout.sl("beta").stop - layout.sl("beta").start)
    gamma = cs * rng.standard_normal(W.shape[1])
    params[layout.sl("gamma")] = gamma
    log_sa = ls * rng.standard_normal()
    params[layout.sl("sigma_alpha")] = log_sa
    sa = np.exp(log_sa)
    z1 = rng.standard_normal(layout.n_states)
    if not spec.varying_slope:
        params[layout.sl("alpha")] = W @ gamma + sa * z1
    else:
        slope_mu = cs * rng.standard_normal()
        log_ss = ls * rng.standard_normal()
        zrho = rng.standard_normal()
        rho = np.tanh(zrho)
        ss = np.exp(log_ss)
        z2 = rng.standard_normal(layout.n_states)
        params[layout.sl("alpha")] = W @ gamma + sa * z1
        params[layout.sl("slope")] = slope_mu + ss * (
            rho * z1 + np.sqrt(1 - rho ** 2) * z2)
        params[layout.sl("slope_mu")] = slope_mu
        params[layout.sl("slope_sigma")] = log_ss
        params[layout.sl("corr")] = zrho
    if spec.category_offsets:
        log_sc = ls * rng.standard_normal()
        params[layout.sl("sigma_cat")] = log_sc
        params[layout.sl("cat")] = np.exp(log_sc) * rng.standard_normal(5)
    return params


def _simulate_fixed_design(truth, scenario, states, cells, rng) -> Dataset:
    layout = build_layout(scenario.spec, states)
    theta = expit(eta_cells(truth, layout, cells.state_id, cells.income_cat,
                            cells.ethnicity))
    p = cells.n_adults / cells.n_adults.sum()
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
    return Dataset(Survey(sid, inc, eth, vote), cells, states)


def run_sbc(scenario: Scenario, reps=200, n_rank_draws=19,
            warmup=300, iters=400, seed=0,
            prior: PriorConfig | None = None, progress=False):
    """Rank statistics over ``reps`` replications; returns (ranks, layout)
    with ranks of shape (reps, P), each rank in 0..n_rank_draws."""
    prior = prior or PriorConfig(coef_scale=1.0, log_scale_sd=1.0)
    states = make_states(scenario)
    cells = make_cells(scenario, states)
    layout = build_layout(scenario.spec, states)
    ranks = np.empty((reps, layout.n_params), dtype=int)
    for r in range(reps):
        rng = np.random.default_rng([seed, 100 + r])
        truth = draw_from_prior(scenario, prior, states, rng)
        dataset = _simulate_fixed_design(truth, scenario, states, cells, rng)
        model = LogDensityModel(dataset, scenario.spec, prior, layout)
        draws = sample_mcmc(model, chains=1, warmup=warmup, iters=iters,
                            seed=int(rng.integers(2 ** 31)), init="diffuse")
        thin = max(1, iters // n_rank_draws)
        sub = draws.draws[thin - 1::thin][:n_rank_draws]
        ranks[r] = np.sum(sub < truth, axis=0)
        if progress and (r + 1) % 20 == 0:
            print(f"  sbc replication {r + 1}/{reps}")
    return ranks, layout


def uniformity_pvalues(ranks, n_rank_draws=19, n_bins=10) -> np.ndarray:
    """Chi-square goodness-of-fit p-value of the rank histogram, per
    parameter. Ranks take values 0..n_rank_draws (n_rank_draws+1 outcomes)."""
    reps, P = ranks.shape
    levels = n_rank_draws + 1
    edges = np.linspace(0, levels, n_bins + 1)
    expected = reps / n_bins
    pvals = np.empty(P)
    for j in range(P):
        obs, _ = np.histogram(ranks[:, j], bins=edges)
        stat = float(np.sum((obs - expected) ** 2) / expected)
        pvals[j] = chi2.sf(stat, df=n_bins - 1)
    return pvals
