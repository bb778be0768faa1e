"""Hamiltonian Monte Carlo with step-size and diagonal mass adaptation.

The sampler runs a fixed (jittered) number of leapfrog steps per iteration,
tunes the step size by dual averaging toward a target acceptance rate during
warmup, estimates a diagonal mass matrix from a mid-warmup window, and
freezes both after warmup.  Chains own independent random streams spawned
deterministically from the seed, so results are reproducible regardless of
worker count.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

__all__ = ["SamplerConfig", "PosteriorDraws", "run_hmc", "rhat_ess", "trace_export"]

# dual-averaging constants (Hoffman & Gelman 2014, sec. 3.2)
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_iterations: int = 2000
    warmup_fraction: float = 0.5
    leapfrog_steps: int = 32
    step_jitter: float = 0.2
    target_accept: float = 0.8
    seed: int = 0
    max_energy_error: float = 1000.0
    adapt_mass: bool = True
    init_spread: float = 0.1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_iterations < 2:
            raise ValueError("n_iterations must be >= 2")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ValueError("step_jitter must lie is [0, 1)")

    @property
    def n_warmup(self) -> int:
        return int(self.n_iterations * self.warmup_fraction)

    @property
    def n_kept(self) -> int:
        return self.n_iterations - self.n_warmup


@dataclass(eq=False)
class PosteriorDraws:
    """Post-warmup draws merged across chains plus convergence diagnostics."""

    draws: np.ndarray            # (B, dim)
    chain: np.ndarray            # (B,) chain label of each draw
    param_names: list[str]
    n_chains: int
    n_kept_per_chain: int
    accept_prob: np.ndarray      # per-chain mean Metropolis acceptance probability
    divergences: np.ndarray      # per-chain divergent-trajectory counts
    step_sizes: np.ndarray       # per-chain frozen step sizes
    rhat: np.ndarray | None = None
    ess: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[0] != self.chain.size:
            raise ValueError("draws must be (B, dim) with one chain label per draw")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("posterior draws contain non-finite entries")
        if len(self.param_names) != self.draws.shape[1]:
            raise ValueError("one parameter name per column required")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (n_chains, n_kept, dim)."""
        return self.draws.reshape(self.n_chains, self.n_kept_per_chain, self.dim)


def _find_reasonable_epsilon(target, q, mass, rng) -> float:
    """Double/halve an initial step size until one leapfrog step has
    acceptance ratio crossing 1/2 (Hoffman & Gelman 2014, alg. 4)."""
    eps = 1.0
    logp, grad = target(q)
    if not np.isfinite(logp):
        raise NumericError("initial point has non-finite log density")
    p = rng.standard_normal(q.size) * np.sqrt(mass)

    def energy_delta(eps):
        with np.errstate(over="ignore", invalid="ignore"):
            p1 = p + 0.5 * eps * grad
            q1 = q + eps * p1 / mass
            logp1, grad1 = target(q1)
            p1 = p1 + 0.5 * eps * grad1
            if not np.isfinite(logp1):
                return -np.inf
            delta = (logp1 - 0.5 * np.sum(p1 * p1 / mass)) - (logp - 0.5 * np.sum(p * p / mass))
        return delta if np.isfinite(delta) else -np.inf

    delta = energy_delta(eps)
    direction = 1.0 if delta > np.log(0.5) else -1.0
    for _ in range(100):
        eps = eps * (2.0 ** direction)
        delta = energy_delta(eps)
        if direction > 0 and delta <= np.log(0.5):
            break
        if direction < 0 and delta >= np.log(0.5):
            break
        if eps < 1e-12 or eps > 1e7:
            break
    return eps


def _leapfrog(target, q, p, grad, eps, n_steps, mass):
    """Standard velocity-leapfrog trajectory; returns the final state."""
    p = p + 0.5 * eps * grad
    for step in range(n_steps):
        q = q + eps * p / mass
        logp, grad = target(q)
        if not np.all(np.isfinite(grad)) or not np.isfinite(logp):
            return q, p, -np.inf, grad
        if step < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return q, p, logp, grad


def _run_chain(target, config: SamplerConfig, q0: np.ndarray, rng: np.random.Generator):
    dim = q0.size
    mass = np.ones(dim)
    q = q0.astype(float).copy()
    logp, grad = target(q)
    if not np.isfinite(logp):
        raise NumericError("chain initialized at a point with non-finite log density")

    n_warmup = config.n_warmup
    eps = _find_reasonable_epsilon(target, q, mass, rng)
    mu = np.log(10.0 * eps)
    log_eps_bar, h_bar, da_iter = np.log(eps), 0.0, 1

    # mass-estimation window: draws in [n_warmup/4, n_warmup/2)
    use_mass_window = config.adapt_mass and n_warmup >= 40
    win_lo, win_hi = n_warmup // 4, n_warmup // 2
    window = np.zeros((max(win_hi - win_lo, 1), dim)) if use_mass_window else None

    kept = np.empty((config.n_kept, dim))
    divergences = 0
    warmup_divergences = 0
    accept_sum = 0.0

    for it in range(config.n_iterations):
        warming = it < n_warmup
        p0 = rng.standard_normal(dim) * np.sqrt(mass)
        if config.step_jitter > 0.0:
            jitter = 1.0 + config.step_jitter * (2.0 * rng.random() - 1.0)
        else:
            jitter = 1.0
        n_steps = max(1, int(round(config.leapfrog_steps * jitter)))
        q1, p1, logp1, grad1 = _leapfrog(target, q, p0, grad, eps, n_steps, mass)

        h0 = -logp + 0.5 * np.sum(p0 * p0 / mass)
        h1 = -logp1 + 0.5 * np.sum(p1 * p1 / mass) if np.isfinite(logp1) else np.inf
        delta_h = h1 - h0
        divergent = not np.isfinite(delta_h) or delta_h > config.max_energy_error
        if divergent:
            alpha = 0.0
            if warming:
                warmup_divergences += 1
            else:
                divergences += 1
        else:
            alpha = 1.0 if delta_h <= 0.0 else float(np.exp(-delta_h))
            if rng.random() < alpha:
                q, logp, grad = q1, logp1, grad1

        if warming:
            frac = 1.0 / (da_iter + _DA_T0)
            h_bar = (1.0 - frac) * h_bar + frac * (config.target_accept - alpha)
            log_eps = mu - np.sqrt(da_iter) / _DA_GAMMA * h_bar
            w = da_iter ** (-_DA_KAPPA)
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
            eps = float(np.exp(log_eps))
            da_iter += 1
            if use_mass_window and win_lo <= it < win_hi:
                window[it - win_lo] = q
            if use_mass_window and it == win_hi - 1:
                n_win = window.shape[0]
                var = np.var(window, axis=0)
                # shrink toward a small diagonal, as in windowed adaptation
                var = (n_win / (n_win + 5.0)) * var + (5.0 / (n_win + 5.0)) * 1e-3
                mass = 1.0 / np.maximum(var, 1e-10)
                eps = float(np.exp(log_eps_bar))
                mu = np.log(10.0 * eps)
                log_eps_bar, h_bar, da_iter = np.log(eps), 0.0, 1
            if it == n_warmup - 1:
                if warmup_divergences >= n_warmup:
                    raise NumericError(
                        f"all {n_warmup} warmup iterations diverged; the target may be "
                        "ill-conditioned or the gradient wrong"
                    )
                eps = float(np.exp(log_eps_bar))
        else:
            kept[it - n_warmup] = q
            accept_sum += alpha

    return {
        "draws": kept,
        "accept_prob": accept_sum / config.n_kept,
        "divergences": divergences,
        "warmup_divergences": warmup_divergences,
        "step_size": eps,
    }


def run_hmc(
    target: Callable[[np.ndarray], tuple[float, np.ndarray]],
    config: SamplerConfig,
    init: Sequence[np.ndarray] | np.ndarray,
    param_names: list[str] | None = None,
    n_workers: int = 1,
) -> PosteriorDraws:
    """Sample ``config.n_chains`` chains from ``target`` and merge the
    post-warmup draws.

    ``target`` maps an unconstrained vector to ``(log_density, gradient)``;
    a ``-inf`` value is treated as a rejected state.  ``init`` supplies one
    starting vector per chain.  Chains may execute concurrently
    (``n_workers`` > 1); each owns a private random stream spawned from
    ``config.seed`` and the merged result is identical either way.
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape[0] != config.n_chains:
        raise ValueError(f"need {config.n_chains} initial vectors, got {init.shape[0]}")
    dim = init.shape[1]
    _, grad0 = target(init[0])
    if np.asarray(grad0).size != dim:
        raise ValueError("target gradient dimension does not match init")

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_chains)]

    def job(c):
        return _run_chain(target, config, init[c], streams[c])

    if n_workers > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(job, range(config.n_chains)))
    else:
        results = [job(c) for c in range(config.n_chains)]

    draws = np.concatenate([r["draws"] for r in results], axis=0)
    chain = np.repeat(np.arange(config.n_chains), config.n_kept)
    names = param_names if param_names is not None else [f"theta[{k}]" for k in range(dim)]
    post = PosteriorDraws(
        draws=draws,
        chain=chain,
        param_names=list(names),
        n_chains=config.n_chains,
        n_kept_per_chain=config.n_kept,
        accept_prob=np.array([r["accept_prob"] for r in results]),
        divergences=np.array([r["divergences"] for r in results]),
        step_sizes=np.array([r["step_size"] for r in results]),
    )
    if config.n_chains >= 2 and config.n_kept >= 4:
        post.rhat, post.ess, post.degenerate = rhat_ess(post)
    return post


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------

def _split_chains(x: np.ndarray) -> np.ndarray:
    """(M, N, dim) -> (2M, N//2, dim), dropping the middle draw when N is odd."""
    m, n, dim = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance along axis 1 via FFT; x is (chains, n, dim)."""
    n = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov.real / n


def rhat_ess(draws: PosteriorDraws | np.ndarray):
    """Split-chain R-hat and autocorrelation-based effective sample size.

    Accepts a :class:`PosteriorDraws` or an array shaped (chains, n, dim).
    Returns ``(rhat, ess, degenerate)``; parameters whose chains are all
    constant are flagged degenerate with ``rhat = 1`` by convention and an
    undefined (NaN) ESS.  A single chain yields ``rhat = None``.
    """
    if isinstance(draws, PosteriorDraws):
        x = draws.by_chain()
    else:
        x = np.asarray(draws, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
    m, n, dim = x.shape
    if m < 2:
        return None, None, None
    if n < 4:
        raise ValueError("need at least 4 post-warmup draws per chain")

    s = _split_chains(x)  # (2M, half, dim)
    n_half = s.shape[1]
    means = s.mean(axis=1)                      # (2M, dim)
    variances = s.var(axis=1, ddof=1)           # (2M, dim)
    w = variances.mean(axis=0)                  # within-chain
    b = n_half * means.var(axis=0, ddof=1)      # between-chain
    degenerate = w <= 0.0
    w_safe = np.where(degenerate, 1.0, w)
    var_plus = (n_half - 1.0) / n_half * w + b / n_half
    rhat = np.sqrt(np.where(degenerate, 1.0, var_plus / w_safe))

    # ESS: Geyer initial monotone positive sequence on combined autocorrelations
    acov = _autocovariance(s)                   # (2M, half, dim)
    tau_t = acov.mean(axis=0)                   # (half, dim)
    var_plus_safe = np.where(var_plus <= 0.0, 1.0, var_plus)
    rho = 1.0 - (w - tau_t) / var_plus_safe     # (half, dim)
    rho[0] = 1.0
    ess = np.empty(dim)
    total = m * n
    max_pairs = (n_half - 1) // 2
    for k in range(dim):
        if degenerate[k]:
            ess[k] = np.nan
            continue
        pair_sum = 0.0
        prev = np.inf
        for t in range(max_pairs):
            p = rho[2 * t, k] + rho[2 * t + 1, k]
            if p < 0.0:
                break
            p = min(p, prev)
            pair_sum += p
            prev = p
        tau = max(-1.0 + 2.0 * pair_sum, 1.0 / total)
        ess[k] = total / tau
    ess = np.where(degenerate, np.nan, ess)
    return rhat, ess, degenerate


def trace_export(draws: PosteriorDraws, path: str | Path) -> Path:
    """Write the draws as columnar text with schema ``iter,chain,param,value``.

    Values use ``repr`` so a round trip through the file is bit-identical.
    """
    if draws.n_draws == 0:
        raise ValueError("draws are empty")
    path = Path(path)
    per_chain = draws.by_chain()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "chain", "param", "value"])
        for c in range(draws.n_chains):
            for it in range(draws.n_kept_per_chain):
                row = per_chain[c, it]
                for k, name in enumerate(draws.param_names):
                    writer.writerow([it, c, name, repr(float(row[k]))])
    return path
