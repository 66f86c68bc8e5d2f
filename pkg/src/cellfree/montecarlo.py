"""Monte Carlo evaluation of LP-MMSE downlink SINRs and the ergodic sum rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ServiceMap
from .stats import ChannelStatistics, psd_sqrt


@dataclass(frozen=True)
class ChannelRealization:
    hhat: list[np.ndarray]  # per AP, (..., K, N_l)
    htil: list[np.ndarray]

    @property
    def h(self) -> list[np.ndarray]:
        return [a + b for a, b in zip(self.hhat, self.htil)]


@dataclass(frozen=True)
class PrecoderSet:
    W: list[np.ndarray]  # per AP, (..., N_l, N_l)
    w: list[np.ndarray]  # per AP, (..., N_l, K) unit-norm directions W h_hat / ||W h_hat||; zero if unserved
    rho: list[np.ndarray]  # per AP, (..., K); 1/||W h_hat||^2, zero if unserved


@dataclass(frozen=True)
class MonteCarloResult:
    sum_rate: float
    stderr: float
    user_rates: np.ndarray
    trial_sum_rates: np.ndarray


class _Sampler:
    """Holds PSD square roots so repeated draws do not redo the eigendecompositions."""

    def __init__(self, stats: ChannelStatistics):
        self.stats = stats
        self.sqrt_hat = [psd_sqrt(r) for r in stats.Rhat]
        self.sqrt_til = [psd_sqrt(r) for r in stats.Rtil]

    def draw(self, seed: int, trials) -> ChannelRealization:
        trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
        K = self.stats.num_users
        dims = [r.shape[-1] for r in self.stats.R]
        total = sum(dims)
        xs_hat = np.empty((len(trials), K, total), complex)
        xs_til = np.empty((len(trials), K, total), complex)
        for i, t in enumerate(trials):
            rng = np.random.default_rng([seed, int(t)])
            z = rng.standard_normal((2, 2, K, total))
            xs_hat[i] = z[0, 0] + 1j * z[0, 1]
            xs_til[i] = z[1, 0] + 1j * z[1, 1]
        hhat, htil = [], []
        start = 0
        for l, n in enumerate(dims):
            # entries of x are CN(0, 1/N_l)
            scale = 1.0 / np.sqrt(2.0 * n)
            xh = scale * xs_hat[:, :, start:start + n]
            xt = scale * xs_til[:, :, start:start + n]
            hhat.append(np.einsum("kab,tkb->tka", self.sqrt_hat[l], xh))
            htil.append(np.einsum("kab,tkb->tka", self.sqrt_til[l], xt))
            start += n
        return ChannelRealization(hhat, htil)


def sample_realization(stats: ChannelStatistics, seed: int, trial_index: int,
                       sampler: _Sampler | None = None) -> ChannelRealization:
    """One channel draw, a deterministic function of ``(seed, trial_index)``."""
    sampler = sampler or _Sampler(stats)
    real = sampler.draw(seed, [trial_index])
    return ChannelRealization([a[0] for a in real.hhat], [a[0] for a in real.htil])


def lp_mmse_precode(realization: ChannelRealization, service: ServiceMap, alpha: float
                    ) -> PrecoderSet:
    """W_l = (sum_{k in S_l} hhat hhat^H + alpha I)^-1 and normalized directions W_l hhat_k."""
    Ws, ws, rhos = [], [], []
    for l, hh in enumerate(realization.hhat):
        served = service.assoc[:, l]
        n = hh.shape[-1]
        hs = hh[..., served, :]  # (..., S, N)
        gram = np.einsum("...sa,...sb->...ab", hs, hs.conj()) + alpha * np.eye(n)
        W = np.linalg.inv(gram)
        W = 0.5 * (W + np.swapaxes(W, -1, -2).conj())
        v = np.einsum("...ab,...kb->...ak", W, hh)  # W hhat_k for all k
        norm2 = np.sum(np.abs(v) ** 2, axis=-2)
        rho = np.where(served, 1.0 / np.where(norm2 > 0, norm2, 1.0), 0.0)
        w = v * np.sqrt(rho)[..., None, :]
        Ws.append(W)
        ws.append(w)
        rhos.append(rho)
    return PrecoderSet(Ws, ws, rhos)


def effective_gains(realization: ChannelRealization, precoders: PrecoderSet,
                    service: ServiceMap) -> np.ndarray:
    """g[..., k, j] = sum_l sqrt(p_jl) h_kl^H w_jl."""
    g = None
    for l, h in enumerate(realization.h):
        amp = np.sqrt(service.power[:, l])
        term = np.einsum("...ka,...aj->...kj", h.conj(), precoders.w[l]) * amp
        g = term if g is None else g + term
    return g


def sinr_from_gains(g: np.ndarray, noise: float) -> np.ndarray:
    power = np.abs(g) ** 2
    signal = np.diagonal(power, axis1=-2, axis2=-1)
    interference = power.sum(axis=-1) - signal
    return signal / (interference + noise)


def instantaneous_sinr(realization: ChannelRealization, precoders: PrecoderSet,
                       service: ServiceMap, noise: float) -> np.ndarray:
    return sinr_from_gains(effective_gains(realization, precoders, service), noise)


def ergodic_sum_rate(stats: ChannelStatistics, service: ServiceMap, alpha: float, noise: float,
                     trials: int, seed: int = 0, batch: int = 128) -> MonteCarloResult:
    """Average of sum_k log2(1 + SINR_k) over ``trials`` independent draws."""
    K = stats.num_users
    if K == 0:
        return MonteCarloResult(0.0, 0.0, np.zeros(0), np.zeros(trials))
    sampler = _Sampler(stats)
    per_user = np.zeros(K)
    sums = np.empty(trials)
    for start in range(0, trials, batch):
        idx = np.arange(start, min(trials, start + batch))
        real = sampler.draw(seed, idx)
        sinr = instantaneous_sinr(real, lp_mmse_precode(real, service, alpha), service, noise)
        rates = np.log2(1.0 + sinr)
        per_user += rates.sum(axis=0)
        sums[idx] = rates.sum(axis=1)
    return MonteCarloResult(float(sums.mean()), float(sums.std(ddof=1) / np.sqrt(trials)),
                            per_user / trials, sums)


def normalized_power_samples(stats: ChannelStatistics, service: ServiceMap, alpha: float,
                             trials: int, seed: int = 0, batch: int = 128) -> list[np.ndarray]:
    """Per AP, (trials, K) samples of rho = 1/||W_l hhat_k||^2 (zero where unserved)."""
    sampler = _Sampler(stats)
    out = [np.empty((trials, stats.num_users)) for _ in range(stats.num_aps)]
    for start in range(0, trials, batch):
        idx = np.arange(start, min(trials, start + batch))
        pre = lp_mmse_precode(sampler.draw(seed, idx), service, alpha)
        for l in range(stats.num_aps):
            out[l][idx] = pre.rho[l]
    return out
