"""Posterior computation: MAP with Laplace approximation, and Hamiltonian
Monte Carlo with dual-averaging step-size adaptation.

Any object exposing ``n_params``, ``log_posterior(x)`` and ``grad(x)`` can be
sampled; LogDensityModel is the usual target but test stubs work too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize


class ConvergenceError(RuntimeError):
    """Optimization or sampling failed to converge; carries the best point."""

    def __init__(self, message, best_point=None):
        super().__init__(message)
        self.best_point = best_point


@dataclass
class PosteriorDraws:
    """Post-warmup draws (D x P), sampling order within chain."""

    draws: np.ndarray
    chain_id: np.ndarray
    layout: object = None
    diagnostics: dict | None = None

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.chain_id = np.asarray(self.chain_id, dtype=int)
        if len(self.chain_id) != self.draws.shape[0]:
            raise ValueError("chain_id length must match number of draws")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_params(self) -> int:
        return self.draws.shape[1]

    @property
    def n_chains(self) -> int:
        return len(np.unique(self.chain_id))

    def by_chain(self) -> np.ndarray:
        """(chains, draws_per_chain, P); requires equal-length chains."""
        ids = np.unique(self.chain_id)
        per = [self.draws[self.chain_id == c] for c in ids]
        n = min(len(x) for x in per)
        return np.stack([x[:n] for x in per])


# ---------------------------------------------------------------------------
# MAP + Laplace

def fd_hessian(grad_fn, x, step=1e-5):
    """Central finite differences of an analytic gradient; symmetrized."""
    x = np.asarray(x, dtype=float)
    P = len(x)
    H = np.empty((P, P))
    for i in range(P):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros(P)
        e[i] = h
        H[:, i] = (grad_fn(x + e) - grad_fn(x - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def _fd_hessian_diag(grad_fn, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty(len(x))
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        e = np.zeros(len(x))
        e[i] = h
        out[i] = (grad_fn(x + e)[i] - grad_fn(x - e)[i]) / (2.0 * h)
    return out


def fit_map(model, init="zeros", max_iter=500, tol=1e-6):
    """Quasi-Newton ascent to the posterior mode.

    Returns (map_point, hessian_factor) where hessian_factor is the lower
    Cholesky factor of the negative Hessian at the mode (the Gaussian
    precision used by sample_laplace).
    """
    P = model.n_params
    x0 = np.zeros(P) if isinstance(init, str) and init == "zeros" \
        else np.asarray(init, dtype=float)

    def neg(x):
        return -model.log_posterior(x)

    def neg_grad(x):
        return -model.grad(x)

    res = scipy.optimize.minimize(
        neg, x0, jac=neg_grad, method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-10,
                 "maxcor": 25})
    x = res.x
    # Damped-Newton polish: L-BFGS stops with a loose gradient, and on badly
    # conditioned posteriors it stalls entirely. Levenberg damping keeps the
    # step an ascent direction even where the Hessian is indefinite.
    lam = 0.0
    for _ in range(100):
        g = model.grad(x)
        gnorm = np.linalg.norm(g)
        if gnorm < tol * max(1, P):
            break
        H = fd_hessian(model.grad, x)
        A = -H
        scale = max(np.abs(np.diag(A)).max(), 1.0)
        lp0 = model.log_posterior(x)
        improved = False
        for _ in range(40):
            try:
                cf = scipy.linalg.cho_factor(A + lam * np.eye(P))
                step = scipy.linalg.cho_solve(cf, g)
                x_new = x + step
                lp_new = model.log_posterior(x_new)
                if np.isfinite(lp_new) and lp_new >= lp0:
                    x = x_new
                    lam = max(lam / 10.0, 0.0)
                    improved = True
                    break
            except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
                pass
            lam = max(lam * 10.0, 1e-8 * scale)
        if not improved:
            break
    g = model.grad(x)
    if np.linalg.norm(g) >= max(tol * max(1, P), 1e-4):
        raise ConvergenceError(
            f"MAP optimization did not converge after {max_iter} iterations "
            f"(gradient norm {np.linalg.norm(g):.3g})", best_point=x)
    neg_H = -fd_hessian(model.grad, x)
    try:
        L = np.linalg.cholesky(neg_H)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(neg_H)
        bad = int(np.argmin(w))
        raise ConvergenceError(
            f"negative Hessian not positive definite at optimum; "
            f"smallest eigenvalue {w[bad]:.3g} along direction "
            f"{np.array2string(v[:, bad], precision=3)}",
            best_point=x) from None
    return x, L


def sample_laplace(map_point, hessian_factor, n_draws, seed=0, layout=None):
    """Draws from the Gaussian approximation N(map, (L L^T)^-1)."""
    L = np.asarray(hessian_factor)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_draws, len(map_point)))
    # x = map + L^-T z has covariance (L L^T)^-1
    x = map_point + scipy.linalg.solve_triangular(L.T, z.T, lower=False).T
    return PosteriorDraws(x, np.zeros(n_draws, dtype=int), layout=layout)


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo

DIVERGENCE_ENERGY = 1000.0


class _DiagMetric:
    """Diagonal kinetic energy; inv_mass holds per-coordinate variances."""

    def __init__(self, inv_mass):
        self.inv_mass = np.asarray(inv_mass, dtype=float)

    def sample(self, rng):
        return rng.standard_normal(len(self.inv_mass)) / np.sqrt(self.inv_mass)

    def velocity(self, p):
        return self.inv_mass * p

    def kinetic(self, p):
        return 0.5 * float(np.sum(self.inv_mass * p * p))


class _DenseMetric:
    """Dense kinetic energy from a curvature (precision-like) matrix.

    Eigenvalues are clipped positive so an indefinite Hessian still yields a
    usable metric; soft ridge directions get large position steps, which is
    exactly what weakly identified coefficient sums need.
    """

    def __init__(self, precision, max_variance=100.0):
        A = 0.5 * (np.asarray(precision) + np.asarray(precision).T)
        w, U = np.linalg.eigh(A)
        # indefinite or near-null directions: use magnitude, cap the implied
        # position variance so soft directions stay explorable but bounded
        wc = np.clip(np.abs(w), 1.0 / max_variance, None)
        self._U = U
        self._w = wc
        self._sample_fac = U * np.sqrt(wc)

    def sample(self, rng):
        return self._sample_fac @ rng.standard_normal(len(self._w))

    def velocity(self, p):
        return self._U @ ((self._U.T @ p) / self._w)

    def kinetic(self, p):
        return 0.5 * float(p @ self.velocity(p))


def _leapfrog(q, p, grad, eps, metric, n_steps, grad_fn):
    p = p + 0.5 * eps * grad
    for step in range(n_steps):
        q = q + eps * metric.velocity(p)
        grad = grad_fn(q)
        if not np.all(np.isfinite(grad)):
            return q, p, grad, False
        if step < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return q, p, grad, True


def _find_reasonable_eps(q, logp_fn, grad_fn, metric, rng):
    eps = 1.0
    p = metric.sample(rng)
    h0 = -logp_fn(q) + metric.kinetic(p)
    q1, p1, _, ok = _leapfrog(q, p, grad_fn(q), eps, metric, 1, grad_fn)
    h1 = -logp_fn(q1) + metric.kinetic(p1) if ok else np.inf
    accept = np.exp(min(0.0, h0 - h1))
    direction = 1.0 if accept > 0.5 else -1.0
    for _ in range(50):
        eps *= 2.0 ** direction
        q1, p1, _, ok = _leapfrog(q, p, grad_fn(q), eps, metric, 1, grad_fn)
        h1 = -logp_fn(q1) + metric.kinetic(p1) if ok else np.inf
        accept = np.exp(min(0.0, h0 - h1))
        if (direction > 0 and accept <= 0.5) or (direction < 0 and accept > 0.5):
            break
    return max(eps, 1e-8)


class _DualAveraging:
    """Nesterov dual averaging on log step size (target acceptance delta)."""

    def __init__(self, eps0, delta=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.t = 0

    def update(self, accept_prob):
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.delta - accept_prob)
        self.log_eps = self.mu - np.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def eps_bar(self):
        return np.exp(self.log_eps_bar)


def _run_chain(model, warmup, iters, rng, q0, metric, adapt_mass,
               target_accept, traj_length, max_steps):
    logp_fn = model.log_posterior
    grad_fn = model.grad
    q = np.asarray(q0, dtype=float).copy()
    logp = logp_fn(q)
    grad = grad_fn(q)

    eps = _find_reasonable_eps(q, logp_fn, grad_fn, metric, rng)
    da = _DualAveraging(eps, delta=target_accept)

    # simplified windowed mass adaptation: settle, collect, switch
    w1 = int(0.15 * warmup)
    w2 = int(0.75 * warmup) if adapt_mass else warmup
    window = []

    draws = np.empty((iters, len(q)))
    n_divergent = 0
    accept_sum = 0.0

    for it in range(warmup + iters):
        warming = it < warmup
        p0 = metric.sample(rng)
        h0 = -logp + metric.kinetic(p0)
        jitter = rng.uniform(0.8, 1.2)
        n_steps = int(np.clip(round(jitter * traj_length / eps), 1, max_steps))
        q1, p1, grad1, ok = _leapfrog(q, p0, grad, eps, metric, n_steps, grad_fn)
        if ok:
            logp1 = logp_fn(q1)
            h1 = -logp1 + metric.kinetic(p1)
            energy_err = h1 - h0
        else:
            energy_err = np.inf
        divergent = not np.isfinite(energy_err) or energy_err > DIVERGENCE_ENERGY
        accept_prob = 0.0 if divergent else float(np.exp(min(0.0, -energy_err)))
        if not divergent and rng.uniform() < accept_prob:
            q, logp, grad = q1, logp1, grad1

        if warming:
            eps = da.update(accept_prob)
            if adapt_mass and w1 <= it < w2:
                window.append(q.copy())
            if adapt_mass and it == w2 - 1 and len(window) > 10:
                var = np.var(np.asarray(window), axis=0)
                metric = _DiagMetric(np.clip(var, 1e-8, None))
                eps = _find_reasonable_eps(q, logp_fn, grad_fn, metric, rng)
                da = _DualAveraging(eps, delta=target_accept)
            if it == warmup - 1:
                eps = da.eps_bar
        else:
            draws[it - warmup] = q
            accept_sum += accept_prob
            if divergent:
                n_divergent += 1

    return draws, n_divergent, accept_sum / max(iters, 1), eps


def sample_mcmc(model, chains=4, warmup=1000, iters=1000, seed=0,
                init="map", target_accept=0.8, traj_length=1.2,
                max_steps=512, jitter_scale=0.1,
                divergence_warn_frac=0.05):
    """HMC over the unconstrained parameter vector.

    init: "map" starts chains at the MAP plus Gaussian jitter and uses the
    Laplace curvature as a fixed diagonal metric; "diffuse" starts from
    N(0, 2) draws and adapts a diagonal metric during warmup; an array is
    used directly (with warmup metric adaptation).

    Diagnostics (requires chains >= 2) are attached to the result; R-hat
    above 1.1 flags the run non-converged but is not an error.
    """
    P = model.n_params
    adapt_mass = True
    metric = _DiagMetric(np.ones(P))
    centers = None
    if isinstance(init, str) and init == "map":
        # stabilized mode-finding where available (hierarchical models have a
        # degenerate joint mode); plain MAP otherwise
        if hasattr(model, "initial_point"):
            centers = model.initial_point()
        else:
            try:
                centers, _ = fit_map(model)
            except ConvergenceError as err:
                centers = err.best_point if err.best_point is not None \
                    else np.zeros(P)
        # full curvature at the center sets a dense metric; this is what
        # handles weakly identified coefficient-sum directions
        metric = _DenseMetric(-fd_hessian(model.grad, centers))
        adapt_mass = False
    elif isinstance(init, str) and init == "diffuse":
        centers = None
    else:
        centers = np.asarray(init, dtype=float)
        adapt_mass = True

    all_draws, all_chain, total_div = [], [], 0
    accept_rates, step_sizes = [], []
    for c in range(chains):
        rng = np.random.default_rng([seed, c])
        if centers is None:
            q0 = 2.0 * rng.standard_normal(P)
        else:
            q0 = centers + jitter_scale * rng.standard_normal(P)
        draws, n_div, acc, eps = _run_chain(
            model, warmup, iters, rng, q0, metric, adapt_mass,
            target_accept, traj_length, max_steps)
        all_draws.append(draws)
        all_chain.append(np.full(iters, c))
        total_div += n_div
        accept_rates.append(acc)
        step_sizes.append(eps)

    out = PosteriorDraws(np.concatenate(all_draws),
                         np.concatenate(all_chain),
                         layout=getattr(model, "layout", None))
    from mrpkit.diagnostics import compute_diagnostics
    div_frac = total_div / max(chains * iters, 1)
    diag = {"divergent": total_div, "divergence_fraction": div_frac,
            "accept_rate": accept_rates, "step_size": step_sizes,
            "warnings": []}
    if div_frac > divergence_warn_frac:
        diag["warnings"].append(
            f"{total_div} divergent transitions ({div_frac:.1%})")
    if chains >= 2:
        d = compute_diagnostics(out)
        diag["rhat"] = d["rhat"]
        diag["ess"] = d["ess"]
        with np.errstate(invalid="ignore"):
            converged = bool(np.all(np.nan_to_num(d["rhat"], nan=1.0) <= 1.1)
                             and np.all(d["ess"] >= 100))
        diag["converged"] = converged
        if not converged:
            diag["warnings"].append("R-hat > 1.1 or ESS < 100 on some parameter")
    out.diagnostics = diag
    return out


# ---------------------------------------------------------------------------
# persistence: flat float64 matrix + JSON header

def save_draws(draws: PosteriorDraws, bin_path, json_path) -> None:
    arr = np.ascontiguousarray(draws.draws, dtype="<f8")
    with open(bin_path, "wb") as f:
        f.write(arr.tobytes())
    header = {
        "n_draws": int(draws.n_draws),
        "n_params": int(draws.n_params),
        "dtype": "float64_le",
        "order": "C",
        "chain_id": draws.chain_id.tolist(),
        "blocks": draws.layout.block_dict() if draws.layout is not None else None,
    }
    if draws.diagnostics is not None:
        d = draws.diagnostics
        header["diagnostics"] = {
            k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
            for k, v in d.items()}
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(header, f, indent=1, sort_keys=True)
        f.write("\n")


def load_draws(bin_path, json_path, layout=None) -> PosteriorDraws:
    with open(json_path, encoding="utf-8") as f:
        header = json.load(f)
    raw = np.fromfile(bin_path, dtype="<f8")
    D, P = header["n_draws"], header["n_params"]
    if raw.size != D * P:
        raise ValueError(f"{bin_path}: expected {D * P} values, got {raw.size}")
    if layout is not None and header.get("blocks") is not None:
        if layout.block_dict() != header["blocks"]:
            raise ValueError("draws file block structure does not match layout")
    return PosteriorDraws(raw.reshape(D, P), np.asarray(header["chain_id"]),
                          layout=layout, diagnostics=header.get("diagnostics"))
