"""Second-order statistics of MMSE channel estimation with orthogonal pilots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .config import SystemConfig


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChannelStatistics:
    """Per-AP stacks of (K, N_l, N_l) matrices: true, estimate and error correlations.

    ``obs_cov[l][t]`` is the pilot observation covariance of pilot ``t`` at AP ``l``.
    """

    R: list[np.ndarray]
    Rhat: list[np.ndarray]
    Rtil: list[np.ndarray]
    obs_cov: list[np.ndarray]
    pilots: np.ndarray
    pilot_power: float
    pilot_len: int
    uplink_noise: float

    @property
    def num_aps(self) -> int:
        return len(self.R)

    @property
    def num_users(self) -> int:
        return len(self.pilots)

    def copilots(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.pilots == self.pilots[k])


def hermitian(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2).conj())


def pilot_observation_cov(R_copilots: np.ndarray, pilot_power: float, pilot_len: int,
                          uplink_noise: float) -> np.ndarray:
    """sum_i eta tau_p R_i + sigma_ul^2 I over the users sharing a pilot."""
    R_copilots = np.asarray(R_copilots)
    n = R_copilots.shape[-1]
    return pilot_power * pilot_len * R_copilots.sum(axis=0) + uplink_noise * np.eye(n)


def estimated_corr(R: np.ndarray, obs_cov: np.ndarray, pilot_power: float,
                   pilot_len: int) -> np.ndarray:
    """eta tau_p R Psi^-1 R (the MMSE estimate covariance)."""
    try:
        factor = scipy.linalg.cho_factor(obs_cov)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("pilot observation covariance is singular") from exc
    return hermitian(pilot_power * pilot_len * R @ scipy.linalg.cho_solve(factor, R))


def error_corr(R: np.ndarray, Rhat: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    Rtil = hermitian(R - Rhat)
    n = R.shape[-1]
    scale = max(np.real(np.trace(R)) / n, np.finfo(float).tiny)
    if np.linalg.eigvalsh(Rtil).min() < -tol * scale:
        raise EstimationError("estimation error correlation is not PSD")
    return Rtil


def compute_statistics(R: list[np.ndarray], pilots: np.ndarray, config: SystemConfig
                       ) -> ChannelStatistics:
    eta, tau, s2 = config.pilot_power_w, config.pilot_len, config.uplink_noise_w
    pilots = np.asarray(pilots, dtype=int)
    Rhat, Rtil, obs = [], [], []
    for R_l in R:
        n = R_l.shape[-1]
        psi = np.stack([pilot_observation_cov(R_l[pilots == t], eta, tau, s2)
                        if np.any(pilots == t) else s2 * np.eye(n) for t in range(tau)])
        rh = np.empty_like(R_l)
        rt = np.empty_like(R_l)
        for k in range(len(pilots)):
            rh[k] = estimated_corr(R_l[k], psi[pilots[k]], eta, tau)
            rt[k] = error_corr(R_l[k], rh[k])
        Rhat.append(rh)
        Rtil.append(rt)
        obs.append(psi)
    return ChannelStatistics(R=list(R), Rhat=Rhat, Rtil=Rtil, obs_cov=obs, pilots=pilots,
                             pilot_power=eta, pilot_len=tau, uplink_noise=s2)


def sample_pilot_estimates(R_l: np.ndarray, pilots: np.ndarray, k: int, config: SystemConfig,
                           n_trials: int, rng: np.random.Generator):
    """Run the pilot pipeline at one AP: returns (h_k, hhat_k) samples of shape (n, N).

    Channels here are CN(0, R) so that the sample covariance of the estimate
    is directly comparable with ``estimated_corr``.
    """
    eta, tau, s2 = config.pilot_power_w, config.pilot_len, config.uplink_noise_w
    group = np.flatnonzero(np.asarray(pilots) == pilots[k])
    n = R_l.shape[-1]

    def cn(shape, var=1.0):
        return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    y = cn((n_trials, n), s2)
    h_k = None
    for i in group:
        h = cn((n_trials, n)) @ psd_sqrt(R_l[i]).T
        y = y + np.sqrt(eta * tau) * h
        if i == k:
            h_k = h
    psi = pilot_observation_cov(R_l[group], eta, tau, s2)
    gain = np.sqrt(eta * tau) * R_l[k] @ np.linalg.inv(psi)
    return h_k, y @ gain.T


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root (batched), negative eigenvalues clipped at zero."""
    w, v = np.linalg.eigh(a)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2).conj()
