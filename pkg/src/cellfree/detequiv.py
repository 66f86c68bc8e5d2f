"""Deterministic equivalents of the LP-MMSE downlink SINR and ergodic sum rate.

Per AP the resolvent of the local estimated-channel Gram matrix is characterized
by the fixed point (Psi_l, e_{.,l}).  Its derivatives along a Hermitian
direction T are the vectors e'_{.,l,T} = (I - J_l)^-1 v_{l,T}, where

    [J_l]_{m,i}   = s_i tr(Rhat_m Psi Rhat_i Psi) / (N^2 (1 + e_i)^2)
    [v_{l,T}]_m   = tr(Rhat_m Psi T Psi) / N

so a single factorization of (I - J_l) serves T = I (normalized power),
T = Rhat_k (coherent interference) and T = Rtil_k (estimation error).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .scenario import ServiceMap
from .stats import ChannelStatistics, hermitian

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


@dataclass
class APState:
    """Deterministic-equivalent quantities for one AP.

    ``eprime_hat[m, k]`` is e'_{m,l,Rhat_k} and ``eprime_til[m, k]`` is
    e'_{m,l,Rtil_k}; rows cover every user, served or not.
    """

    served: np.ndarray
    Rhat: np.ndarray
    Rtil: np.ndarray
    alpha: float
    psi: np.ndarray
    e: np.ndarray
    eprime: np.ndarray
    J: np.ndarray
    eprime_hat: np.ndarray
    eprime_til: np.ndarray
    iterations: int
    residual: float
    _lu: tuple = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._lu, rhs)

    def eprime_target(self, T: np.ndarray) -> np.ndarray:
        return solve_eprime_target(self, T)

    def dpsi(self, T=None, eprime_T: np.ndarray | None = None) -> np.ndarray:
        return dpsi_target(self, T, eprime_T)

    @property
    def dpsi_identity(self) -> np.ndarray:
        return dpsi_target(self, None, self.eprime)

    @property
    def norm_power(self) -> np.ndarray:
        """Deterministic equivalent of rho_{k,l} = 1/||W_l hhat_k||^2 (zero where unserved)."""
        return np.where(self.served, (1 + self.e) ** 2 / np.where(self.served, self.eprime, 1.0), 0.0)


@dataclass(frozen=True)
class RateReport:
    sinr: np.ndarray  # (K,)
    rates: np.ndarray  # (K,) log2(1 + sinr)
    sum_rate: float
    signal_amp: np.ndarray  # (K, M) SA_{k,l}
    interference: np.ndarray  # (K, K, M) ITF_{k,j,l}
    signal: np.ndarray  # (K,) sum_l sqrt(p_kl) SA_kl
    denom: np.ndarray  # (K,) interference + noise


def _traces(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """out[m, i] = Re tr(A_m B_i) for stacks of square matrices."""
    return np.real(np.einsum("mab,iba->mi", A, B))


def _psi_of(Rhat: np.ndarray, served: np.ndarray, e: np.ndarray, alpha: float) -> np.ndarray:
    n = Rhat.shape[-1]
    weights = np.where(served, 1.0 / (n * (1.0 + e)), 0.0)
    A = np.einsum("k,kab->ab", weights, Rhat) + alpha * np.eye(n)
    return hermitian(np.linalg.inv(A))


def solve_fixed_point(Rhat: np.ndarray, served: np.ndarray, alpha: float, tol: float = 1e-10,
                      max_iter: int = 10000):
    """Solve Psi = ((1/N) sum_i s_i Rhat_i / (1 + e_i) + alpha I)^-1, e_k = s_k tr(Rhat_k Psi)/N.

    Starts from the Psi = I/alpha iterate, which makes plain iteration decrease
    monotonically; when contraction stalls a guarded Newton step (whose Jacobian
    is the J matrix restricted to served users) is tried.  The residual is
    max_k |e_k - g_k(e)| / max(1, |g_k(e)|).

    Returns ``(psi, e, iterations, residual)``.
    """
    served = np.asarray(served, dtype=bool)
    K, n = Rhat.shape[0], Rhat.shape[-1]
    trace = np.real(np.einsum("kaa->k", Rhat))
    e = np.where(served, trace / (n * alpha), 0.0)
    if not served.any():
        return np.eye(n) / alpha, e, 0, 0.0

    def image(e):
        psi = _psi_of(Rhat, served, e, alpha)
        g = np.where(served, np.real(np.einsum("kab,ba->k", Rhat, psi)) / n, 0.0)
        return psi, g

    def resid(e, g):
        return float(np.max(np.abs(e - g) / np.maximum(1.0, np.abs(g))))

    idx = np.flatnonzero(served)
    psi, g = image(e)
    res = resid(e, g)
    prev = np.inf
    for it in range(1, max_iter + 1):
        if res <= tol:
            return psi, g, it - 1, res
        step = g
        if it > 5 and res > 0.5 * prev:
            B = Rhat[idx] @ psi
            jac = _traces(B, B) / (n ** 2 * (1.0 + e[idx]) ** 2)[None, :]
            try:
                delta = np.linalg.solve(np.eye(len(idx)) - jac, e[idx] - g[idx])
                cand = e.copy()
                cand[idx] = e[idx] - delta
                if np.all(cand[idx] > 0):
                    psi_c, g_c = image(cand)
                    if resid(cand, g_c) < res:
                        step = None
                        e, psi, g = cand, psi_c, g_c
            except np.linalg.LinAlgError:
                pass
        if step is not None:
            e = step
            psi, g = image(e)
        prev, res = res, resid(e, g)
    raise ConvergenceError("fixed point did not converge", res)


def solve_ap(Rhat: np.ndarray, Rtil: np.ndarray, served: np.ndarray, alpha: float,
             tol: float = 1e-10, max_iter: int = 10000) -> APState:
    """Fixed point plus every e' system needed by the SINR equivalent at one AP."""
    served = np.asarray(served, dtype=bool)
    K, n = Rhat.shape[0], Rhat.shape[-1]
    psi, e, iters, res = solve_fixed_point(Rhat, served, alpha, tol, max_iter)
    B = Rhat @ psi  # Rhat_m Psi
    C = Rtil @ psi
    V = _traces(B, B)
    Vt = _traces(B, C)
    v = np.real(np.einsum("mab,ba->m", B, psi)) / n
    J = V * np.where(served, 1.0 / (n ** 2 * (1.0 + e) ** 2), 0.0)[None, :]
    lhs = np.eye(K) - J
    if K and np.max(np.abs(np.linalg.eigvals(J))) >= 1.0:
        raise ConvergenceError("spectral radius of J is not below one", res)
    lu = scipy.linalg.lu_factor(lhs) if K else None
    if K:
        sol = scipy.linalg.lu_solve(lu, np.column_stack([v, V / n, Vt / n]))
        eprime, Eh, Et = sol[:, 0], sol[:, 1:K + 1], sol[:, K + 1:]
    else:
        eprime, Eh, Et = np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
    return APState(served=served, Rhat=Rhat, Rtil=Rtil, alpha=alpha, psi=psi, e=e,
                   eprime=eprime, J=J, eprime_hat=Eh, eprime_til=Et, iterations=iters,
                   residual=res, _lu=lu)


def solve_eprime(state: APState) -> np.ndarray:
    """e'_{.,l} = (I - J_l)^-1 v_l with v_l = tr(Rhat_m Psi Psi)/N."""
    return solve_eprime_target(state, np.eye(state.n))


def solve_eprime_target(state: APState, T: np.ndarray) -> np.ndarray:
    """e'_{.,l,T} for an arbitrary Hermitian direction T."""
    if len(state.e) == 0:
        return np.zeros(0)
    rhs = np.real(np.einsum("mab,bc,cd,da->m", state.Rhat, state.psi, T, state.psi)) / state.n
    return state.solve(rhs)


def dpsi_target(state: APState, T=None, eprime_T: np.ndarray | None = None) -> np.ndarray:
    """dPsi_{l,T} = Psi ((1/N) sum_i s_i e'_{i,l,T} Rhat_i / (1 + e_i)^2 + T) Psi.

    ``T=None`` means the identity (the derivative with respect to alpha, up to sign).
    """
    n = state.n
    T = np.eye(n) if T is None else T
    if eprime_T is None:
        eprime_T = solve_eprime_target(state, T)
    coef = np.where(state.served, eprime_T / (n * (1.0 + state.e) ** 2), 0.0)
    inner = np.einsum("i,iab->ab", coef, state.Rhat) + T
    return hermitian(state.psi @ inner @ state.psi)


def dpsi_stack(state: APState, targets: np.ndarray, eprimes: np.ndarray) -> np.ndarray:
    """Batched dPsi for targets[k] with e' columns eprimes[:, k]."""
    n = state.n
    coef = np.where(state.served[:, None], eprimes / (n * (1.0 + state.e[:, None]) ** 2), 0.0)
    inner = np.einsum("ik,iab->kab", coef, state.Rhat) + targets
    return hermitian(state.psi @ inner @ state.psi)


def deterministic_sinr(states: list[APState], power: np.ndarray, noise: float) -> RateReport:
    """SINR equivalent with the coherent interference terms; cross-AP terms vanish."""
    K = power.shape[0]
    M = len(states)
    SA = np.zeros((K, M))
    ITF = np.zeros((K, K, M))
    for l, st in enumerate(states):
        s = st.served
        ep = np.where(s, st.eprime, 1.0)
        SA[:, l] = np.where(s, st.e / np.sqrt(ep), 0.0)
        # ITF[k, j] = (e'_{k,Rhat_j} / (1 + e_k)^2 + e'_{j,Rtil_k}) / (N e'_j)
        num = st.eprime_hat / (1.0 + st.e[:, None]) ** 2 + st.eprime_til.T
        ITF[:, :, l] = np.where(s[None, :], num / (st.n * ep[None, :]), 0.0)
    signal = np.einsum("kl,kl->k", np.sqrt(power), SA)
    interf = np.einsum("jl,kjl->k", power, ITF) - np.einsum("kl,kkl->k", power, ITF)
    denom = interf + noise
    sinr = signal ** 2 / denom
    rates = np.log2(1.0 + sinr)
    return RateReport(sinr=sinr, rates=rates, sum_rate=float(rates.sum()), signal_amp=SA,
                      interference=ITF, signal=signal, denom=denom)


def solve_all(stats: ChannelStatistics, service: ServiceMap, alpha: float, **kw) -> list[APState]:
    return [solve_ap(stats.Rhat[l], stats.Rtil[l], service.assoc[:, l], alpha, **kw)
            for l in range(stats.num_aps)]


def deterministic_sum_rate(stats: ChannelStatistics, service: ServiceMap, alpha: float,
                           noise: float, states: list[APState] | None = None
                           ) -> tuple[RateReport, list[APState]]:
    if states is None:
        states = solve_all(stats, service, alpha)
    return deterministic_sinr(states, service.power, noise), states
