"""Adaptive random-walk Metropolis sampler with multi-chain diagnostics.

The proposal starts diagonal and switches to the empirical covariance of the
chain history midway through warmup; a Robbins-Monro recursion tunes the
global step size toward the target acceptance rate. All adaptation stops at
the end of warmup, so the retained draws come from a fixed Markov kernel.
Every chain owns an RNG substream derived from (seed, chain index), which
makes runs reproducible bit-for-bit regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SamplerInitError(RuntimeError):
    """Raised when a chain cannot start (non-finite density at the start)."""


def derive_substream_seed(master: int, index: int) -> int:
    """Mix (master seed, stream index) into an independent 64-bit seed.

    SplitMix64 finalizer over master xor a golden-ratio multiple of the
    index; a bijection of the mixed word, so distinct indices under one
    master never collide.
    """
    z = (master ^ ((index + 1) * _GOLDEN)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 2000
    draws: int = 5000
    seed: int = 0
    target_acceptance: float = 0.30
    init_step_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 100:
            raise ValueError("warmup must be >= 100")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must be in (0, 1)")
        if self.init_step_scale <= 0:
            raise ValueError("init_step_scale must be positive")


@dataclass(frozen=True)
class Diagnostics:
    rhat: np.ndarray
    ess: np.ndarray
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained draws from all chains, stacked chain-major."""

    draws: np.ndarray        # (chains * draws_per_chain, dim)
    chain_ids: np.ndarray    # chain label per row
    accept_rate: np.ndarray  # post-warmup acceptance per chain
    diagnostics: Diagnostics
    param_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("retained draws contain non-finite values")
        if self.draws.shape[0] != self.chain_ids.shape[0]:
            raise ValueError("chain_ids length must match draw count")

    @property
    def n_chains(self) -> int:
        return len(self.accept_rate)

    @property
    def draws_per_chain(self) -> int:
        return self.draws.shape[0] // self.n_chains

    def by_chain(self) -> np.ndarray:
        """Draws reshaped to (chains, draws_per_chain, dim)."""
        return self.draws.reshape(self.n_chains, self.draws_per_chain, -1)


def accept_log_prob(lp_current: float, lp_proposal: float) -> float:
    """Log Metropolis acceptance probability for a symmetric proposal."""
    if not math.isfinite(lp_proposal):
        return -math.inf
    return min(0.0, lp_proposal - lp_current)


def _run_chain(log_density: Callable[[np.ndarray], float], x0: np.ndarray,
               cfg: McmcConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    dim = x0.size
    x = x0.copy()
    lp = float(log_density(x))
    log_step = math.log(cfg.init_step_scale)
    chol = np.eye(dim)

    # Welford accumulator over the chain history, fed from cov_start onward
    cov_start = max(cfg.warmup // 4, 10)
    cov_switch = max(cfg.warmup // 2, 20)
    refresh = 200
    count = 0
    mean = np.zeros(dim)
    m2 = np.zeros((dim, dim))

    for it in range(1, cfg.warmup + 1):
        z = rng.standard_normal(dim)
        prop = x + math.exp(log_step) * (chol @ z)
        lp_prop = float(log_density(prop))
        alpha = math.exp(accept_log_prob(lp, lp_prop))
        if rng.random() < alpha:
            x, lp = prop, lp_prop
        log_step += (alpha - cfg.target_acceptance) * it ** -0.6
        if it >= cov_start:
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += np.outer(delta, x - mean)
        if it >= cov_switch and count > 2 * dim and (it - cov_switch) % refresh == 0:
            cov = m2 / (count - 1) + 1e-8 * np.eye(dim)
            try:
                chol = np.linalg.cholesky(cov)
                log_step = math.log(2.38 / math.sqrt(dim))
            except np.linalg.LinAlgError:
                pass  # keep the previous factor

    retained = np.empty((cfg.draws, dim))
    step = math.exp(log_step)
    accepted = 0
    for it in range(cfg.draws):
        z = rng.standard_normal(dim)
        prop = x + step * (chol @ z)
        lp_prop = float(log_density(prop))
        alpha = math.exp(accept_log_prob(lp, lp_prop))
        if rng.random() < alpha:
            x, lp = prop, lp_prop
            accepted += 1
        retained[it] = x
    return retained, accepted / cfg.draws


def sample_posterior(log_density: Callable[[np.ndarray], float],
                     init: Sequence[float], cfg: McmcConfig,
                     init_jitter_sd: Sequence[float] | None = None,
                     param_names: tuple[str, ...] | None = None) -> PosteriorDraws:
    """Draw from ``log_density`` with adaptive random-walk Metropolis.

    Each chain starts at ``init`` plus an optional per-coordinate normal
    jitter of scale ``init_jitter_sd`` (drawn from the chain's own
    substream), so chains are overdispersed and split-R-hat is meaningful.
    Raises SamplerInitError if a chain's starting density is not finite.
    """
    init = np.asarray(init, dtype=float)
    dim = init.size
    jitter = None if init_jitter_sd is None else np.asarray(init_jitter_sd, dtype=float)

    all_draws = np.empty((cfg.chains * cfg.draws, dim))
    accept = np.empty(cfg.chains)
    for c in range(cfg.chains):
        rng = np.random.Generator(np.random.PCG64(derive_substream_seed(cfg.seed, c)))
        x0 = init.copy()
        if jitter is not None:
            x0 = x0 + rng.standard_normal(dim) * jitter
        if not math.isfinite(float(log_density(x0))):
            raise SamplerInitError(f"chain {c}: log density not finite at start {x0}")
        chain_draws, accept[c] = _run_chain(log_density, x0, cfg, rng)
        all_draws[c * cfg.draws:(c + 1) * cfg.draws] = chain_draws

    chain_ids = np.repeat(np.arange(cfg.chains), cfg.draws)
    by_chain = all_draws.reshape(cfg.chains, cfg.draws, dim)
    warnings = tuple(
        f"chain {c}: acceptance rate {accept[c]:.4f} below 0.01 (degenerate proposal)"
        for c in range(cfg.chains) if accept[c] < 0.01
    )
    diag = Diagnostics(rhat=_rhat_from_array(by_chain),
                       ess=_ess_from_array(by_chain),
                       warnings=warnings)
    return PosteriorDraws(draws=all_draws, chain_ids=chain_ids,
                          accept_rate=accept, diagnostics=diag,
                          param_names=param_names)


# ---------------------------------------------------------------------------
# Convergence diagnostics


def _split_chains(arr: np.ndarray) -> np.ndarray:
    """Halve each chain: (m, n, dim) -> (2m, n//2, dim), dropping an odd tail."""
    m, n, dim = arr.shape
    half = n // 2
    return np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)


def _rhat_from_array(arr: np.ndarray) -> np.ndarray:
    split = _split_chains(arr)
    m, n, dim = split.shape
    if m < 2 or n < 2:
        return np.full(arr.shape[2], np.inf)
    chain_means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean(axis=0)
    between = n * chain_means.var(axis=0, ddof=1)
    out = np.full(dim, np.inf)
    ok = within > 0
    var_hat = (n - 1) / n * within[ok] + between[ok] / n
    out[ok] = np.sqrt(var_hat / within[ok])
    return out


def compute_rhat(draws: PosteriorDraws) -> np.ndarray:
    """Split-R-hat per parameter; infinity flags zero within-chain variance."""
    return _rhat_from_array(draws.by_chain())


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance of a 1-d series via FFT."""
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def _ess_from_array(arr: np.ndarray) -> np.ndarray:
    m, n, dim = arr.shape
    total = m * n
    out = np.empty(dim)
    for j in range(dim):
        chains = arr[:, :, j]
        if n < 2:
            out[j] = 1.0
            continue
        acov = np.stack([_autocovariance(chains[c]) for c in range(m)])
        within = chains.var(axis=1, ddof=1).mean()
        if within == 0:
            out[j] = 1.0
            continue
        var_plus = within * (n - 1) / n
        if m > 1:
            var_plus += chains.mean(axis=1).var(ddof=1)
        mean_acov = acov.mean(axis=0)
        rho = 1.0 - (within - mean_acov) / var_plus
        # Geyer initial positive sequence: sum lag pairs until one goes negative
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + (rho[k + 1] if k + 1 < n else 0.0)
            if pair <= 0.0:
                break
            tau += 2.0 * pair
        out[j] = min(max(total / max(tau, 1e-12), 1.0), float(total))
    return out


def effective_sample_size(draws: PosteriorDraws) -> np.ndarray:
    """Autocorrelation-adjusted ESS per parameter, clamped to [1, total]."""
    return _ess_from_array(draws.by_chain())
