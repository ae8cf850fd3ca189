"""Posterior sampling for (beta, a_1..a_H, sigma) and convergence checks.

The joint density is smooth after mapping each borrowing weight through a
logit and sigma through a log, so an adaptive random-walk Metropolis chain
with covariance learned during warmup samples it reliably; the production
harness reuses the same warmup/adaptation schedule with a compiled batch
kernel. Draws are returned on the constrained scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit, ndtri

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "Diagnostics",
    "InitializationError",
    "sample_posterior",
    "run_adaptive_chain",
    "diagnostics",
    "split_rhat",
    "ess_bulk",
]


class InitializationError(RuntimeError):
    """No finite-density starting point found."""


@dataclass(frozen=True)
class SamplerConfig:
    """Chain schedule; n_iter counts post-warmup draws per chain."""

    n_chains: int = 1
    n_iter: int = 2000
    n_warmup: int = 500
    target_accept: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if self.n_iter < 100:
            raise ValueError("n_iter must be at least 100")
        if not 0.2 < self.target_accept < 0.99:
            raise ValueError("target_accept must lie in (0.2, 0.99)")
        if self.n_chains < 1 or self.n_warmup < 1:
            raise ValueError("n_chains and n_warmup must be positive")


@dataclass
class PosteriorDraws:
    """Stacked post-warmup draws across chains, constrained scale."""

    beta_draws: np.ndarray
    a_draws: np.ndarray
    sigma_draws: np.ndarray | None
    chain_ids: np.ndarray
    mean_accept: float = np.nan

    def __post_init__(self):
        n = self.beta_draws.shape[0]
        if self.a_draws.shape[0] != n or self.chain_ids.shape[0] != n:
            raise ValueError("inconsistent draw counts")
        if self.sigma_draws is not None and self.sigma_draws.shape[0] != n:
            raise ValueError("inconsistent draw counts")
        if self.a_draws.size and not (
            (self.a_draws > 0.0).all() and (self.a_draws < 1.0).all()
        ):
            raise ValueError("a draws must lie strictly in (0, 1)")
        if self.sigma_draws is not None and not (self.sigma_draws > 0).all():
            raise ValueError("sigma draws must be positive")

    @property
    def n_draws(self) -> int:
        return self.beta_draws.shape[0]

    @property
    def n_hist(self) -> int:
        return self.a_draws.shape[1]

    def param_matrix(self) -> np.ndarray:
        cols = [self.beta_draws]
        if self.sigma_draws is not None:
            cols.append(self.sigma_draws[:, None])
        if self.a_draws.size:
            cols.append(self.a_draws)
        return np.hstack(cols)


@dataclass
class Diagnostics:
    split_rhat: np.ndarray
    ess_bulk: np.ndarray
    mean_accept: float
    divergence_count: int = 0

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.split_rhat))

    @property
    def flagged(self) -> bool:
        return self.max_rhat > 1.05


def _default_batch(logpost):
    """Pure-Python Metropolis batch runner over an unconstrained theta."""

    def run(theta, lp, prop_chol, scale, n, rng):
        d = theta.shape[0]
        draws = np.empty((n, d))
        n_acc = 0
        for i in range(n):
            prop = theta + scale * (prop_chol @ rng.standard_normal(d))
            lpp = logpost(prop)
            if lpp - lp > np.log(rng.random()):
                theta, lp = prop, lpp
                n_acc += 1
            draws[i] = theta
        return draws, lp, n_acc

    return run


def run_adaptive_chain(
    batch_fn,
    theta0: np.ndarray,
    lp0: float,
    init_scales: np.ndarray,
    n_iter: int,
    n_warmup: int,
    target_accept: float,
    rng: np.random.Generator,
):
    """Warmup with scale + covariance adaptation, then a frozen kernel.

    ``batch_fn(theta, lp, chol, scale, n, rng) -> (draws, lp, n_accept)``
    runs n Metropolis steps with proposal increment scale * chol @ z.
    Returns (draws, accept_rate) with draws of shape (n_iter, d).
    """
    d = theta0.shape[0]
    chol = np.diag(init_scales)
    scale = 2.38 / np.sqrt(d)
    theta, lp = theta0.copy(), lp0
    batch = 50
    history = []
    done = 0
    k = 0
    recov_at = n_warmup // 2
    recovered = False
    while done < n_warmup:
        n = min(batch, n_warmup - done)
        draws, lp, n_acc = batch_fn(theta, lp, chol, scale, n, rng)
        theta = draws[-1].copy()
        history.append(draws)
        done += n
        k += 1
        acc = n_acc / n
        scale *= float(np.exp((acc - target_accept) / np.sqrt(k)))
        scale = float(np.clip(scale, 1e-4, 50.0))
        if not recovered and done >= recov_at:
            chol = _safe_chol(np.vstack(history), init_scales)
            scale = 2.38 / np.sqrt(d)
            k = 0
            recovered = True
    # final covariance from the adapted half of warmup
    tail = np.vstack(history)[recov_at:]
    if tail.shape[0] >= 10:
        chol = _safe_chol(tail, init_scales)
    draws, lp, n_acc = batch_fn(theta, lp, chol, scale, n_iter, rng)
    return draws, n_acc / n_iter


def _safe_chol(samples: np.ndarray, init_scales: np.ndarray) -> np.ndarray:
    d = samples.shape[1]
    if samples.shape[0] < 2 * d:
        return np.diag(init_scales)
    cov = np.cov(samples.T) + 1e-10 * np.eye(d)
    cov = np.atleast_2d(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 1e-12, None)))


def sample_posterior(
    density,
    init,
    config: SamplerConfig,
    rng: np.random.Generator,
    *,
    has_sigma: bool = False,
    n_hist: int = 0,
    init_scales: np.ndarray | None = None,
) -> PosteriorDraws:
    """Sample the joint posterior given by ``density(beta, a, sigma)``.

    The chain runs on the unconstrained vector (beta, log sigma, logit a)
    with the matching log-Jacobian terms added, so borrowing weights never
    touch the boundary of [0, 1]. ``init`` is (beta, a, sigma).
    """
    beta0, a0, sigma0 = init
    beta0 = np.asarray(beta0, dtype=float)
    a0 = np.atleast_1d(np.asarray(a0, dtype=float)) if n_hist else np.empty(0)
    d = 4 + (1 if has_sigma else 0) + n_hist

    def unpack(theta):
        beta = theta[:4]
        pos = 4
        sigma = None
        if has_sigma:
            sigma = float(np.exp(theta[pos]))
            pos += 1
        a = expit(theta[pos:]) if n_hist else np.empty(0)
        return beta, a, sigma

    def logpost(theta):
        beta, a, sigma = unpack(theta)
        lp = density(beta, a, sigma)
        if not np.isfinite(lp):
            return -np.inf
        pos = 4
        if has_sigma:
            # d sigma / d log(sigma) = sigma
            lp += theta[pos]
            pos += 1
        for j in range(n_hist):
            z = theta[pos + j]
            # d a / d z for a = expit(z)
            lp += z - 2.0 * np.logaddexp(0.0, z)
        return float(lp)

    theta0 = np.concatenate(
        [beta0]
        + ([np.array([np.log(sigma0)])] if has_sigma else [])
        + ([logit(np.clip(a0, 1e-9, 1 - 1e-9))] if n_hist else [])
    )
    lp0 = logpost(theta0)
    tries = 0
    jitter_rng = np.random.default_rng(rng.integers(2**63))
    while not np.isfinite(lp0):
        tries += 1
        if tries > 100:
            raise InitializationError(
                "initialization failure: no finite density in 100 jittered attempts"
            )
        theta0 = theta0 + 0.1 * jitter_rng.standard_normal(d)
        lp0 = logpost(theta0)
    if init_scales is None:
        init_scales = np.full(d, 0.1)
        init_scales[4 + (1 if has_sigma else 0) :] = 0.5
    batch_fn = _default_batch(logpost)
    chain_rngs = rng.spawn(config.n_chains)
    all_draws, all_ids, acc = [], [], []
    for c, crng in enumerate(chain_rngs):
        draws, rate = run_adaptive_chain(
            batch_fn,
            theta0,
            lp0,
            init_scales,
            config.n_iter,
            config.n_warmup,
            config.target_accept,
            crng,
        )
        all_draws.append(draws)
        all_ids.append(np.full(draws.shape[0], c))
        acc.append(rate)
    theta_draws = np.vstack(all_draws)
    pos = 4
    sigma_draws = None
    if has_sigma:
        sigma_draws = np.exp(theta_draws[:, pos])
        pos += 1
    a_draws = expit(theta_draws[:, pos:]) if n_hist else np.empty((theta_draws.shape[0], 0))
    return PosteriorDraws(
        beta_draws=theta_draws[:, :4],
        a_draws=a_draws,
        sigma_draws=sigma_draws,
        chain_ids=np.concatenate(all_ids),
        mean_accept=float(np.mean(acc)),
    )


def _split_chains(x: np.ndarray, chain_ids: np.ndarray) -> np.ndarray:
    """Stack draws into a (m_split, n) matrix of half-chains."""
    chains = [x[chain_ids == c] for c in np.unique(chain_ids)]
    n = min(len(c) for c in chains)
    half = n // 2
    rows = []
    for c in chains:
        rows.append(c[:half])
        rows.append(c[half : 2 * half])
    return np.asarray(rows)


def split_rhat(x: np.ndarray, chain_ids: np.ndarray) -> float:
    """Classic potential scale reduction on split chains, one parameter."""
    m = _split_chains(x, chain_ids)
    n = m.shape[1]
    W = m.var(axis=1, ddof=1).mean()
    B = n * m.mean(axis=1).var(ddof=1)
    if W <= 0:
        return 1.0
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    flat = x.ravel()
    ranks = np.argsort(np.argsort(flat)) + 1.0
    z = ndtri((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(x.shape)


def _autocov(row: np.ndarray) -> np.ndarray:
    n = row.size
    xc = row - row.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    return acov


def ess_bulk(x: np.ndarray, chain_ids: np.ndarray) -> float:
    """Bulk effective sample size via rank-normalized split chains."""
    m = _rank_normalize(_split_chains(x, chain_ids))
    n_chain, n = m.shape
    acov = np.asarray([_autocov(row) for row in m])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    mean_var = acov.mean(axis=0)
    var_plus = W * (n - 1.0) / n
    if n_chain > 1:
        var_plus += m.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(n_chain * n)
    rho = 1.0 - (W - mean_var) / var_plus
    # Geyer initial monotone positive sequence on paired sums rho_{2k-1}+rho_{2k}
    prev_pair = np.inf
    pair_sum = 0.0
    k = 1
    while 2 * k < n:
        pair = rho[2 * k - 1] + rho[2 * k]
        if pair < 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        pair_sum += pair
        k += 1
    tau = 1.0 + 2.0 * pair_sum
    return float(n_chain * n / max(tau, 1e-12))


def diagnostics(draws: PosteriorDraws) -> Diagnostics:
    """Split-Rhat and bulk ESS per parameter (beta, sigma, a)."""
    params = draws.param_matrix()
    rhats = np.array(
        [split_rhat(params[:, j], draws.chain_ids) for j in range(params.shape[1])]
    )
    ess = np.array(
        [ess_bulk(params[:, j], draws.chain_ids) for j in range(params.shape[1])]
    )
    return Diagnostics(
        split_rhat=rhats,
        ess_bulk=ess,
        mean_accept=draws.mean_accept,
        divergence_count=0,
    )
