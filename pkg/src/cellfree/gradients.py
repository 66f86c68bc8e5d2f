"""Asymptotic derivatives of the deterministic sum rate.

Matrix partials follow the real-inner-product convention: the gradient of a
real scalar f with respect to a Hermitian R is the Hermitian G with
df = Re tr(G^T dR).  Internally each partial is first written in "trace form"
X (df = Re tr(X dRhat)), chained through the estimation factor F = dRhat/dR
and mapped to G = herm(X F)^T.

Association, pilots and powers are constants here; so is the angular part of
every correlation matrix when differentiating with respect to AP positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import Scenario, moved
from .detequiv import APState, RateReport, dpsi_stack
from .scenario import pathloss_beta, pathloss_beta_derivative
from .stats import ChannelStatistics, hermitian

D_MIN = 1.0  # meters; closer pairs are clamped and flagged


@dataclass
class GradientReport:
    grad: np.ndarray  # (M, 2) d Rsum / d lambda_l, bps/Hz per meter
    masked: frozenset = frozenset()
    clamped: list = field(default_factory=list)  # (k, l) pairs closer than D_MIN
    sum_rate: float = float("nan")

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.grad, axis=1)


def _to_grad(X: np.ndarray) -> np.ndarray:
    """Trace-form X (df = Re tr(X dR)) -> Hermitian G with df = Re tr(G^T dR)."""
    return hermitian(X).T


def dRhat_dR(k: int, l: int, stats: ChannelStatistics) -> np.ndarray:
    """Factor eta tau R Psi^-1 (2I - eta tau R Psi^-1) of the estimate correlation.

    It is the exact derivative of Rhat along directions that commute with R when
    user k has no co-pilot users; dRtil/dR is I minus this factor.
    """
    R = stats.R[l][k]
    psi = stats.obs_cov[l][stats.pilots[k]]
    A = stats.pilot_power * stats.pilot_len * np.linalg.solve(psi.T, R.T).T  # R Psi^-1
    return A @ (2.0 * np.eye(len(R)) - A)


def estimation_factors(stats: ChannelStatistics, l: int) -> np.ndarray:
    R = stats.R[l]
    psi = stats.obs_cov[l][stats.pilots]
    A = stats.pilot_power * stats.pilot_len * np.swapaxes(
        np.linalg.solve(np.swapaxes(psi, -1, -2), np.swapaxes(R, -1, -2)), -1, -2)
    return A @ (2.0 * np.eye(R.shape[-1]) - A)


def _sa_trace_form(k: int, st: APState) -> np.ndarray:
    n = st.n
    if not st.served[k]:
        return np.zeros((n, n), complex)
    e, ep = st.e[k], st.eprime[k]
    return (ep * st.psi - 0.5 * e * st.dpsi_identity) / (n * ep ** 1.5)


def dSA_dR(k: int, l: int, st: APState, stats: ChannelStatistics) -> np.ndarray:
    """Partial of SA_{k,l} = e_{k,l}/sqrt(e'_{k,l}) with respect to R_{k,l}."""
    return _to_grad(_sa_trace_form(k, st) @ dRhat_dR(k, l, stats))


def _dpsi_hat(st: APState, j: int) -> np.ndarray:
    return dpsi_stack(st, st.Rhat[j:j + 1], st.eprime_hat[:, j:j + 1])[0]


def _dpsi_til(st: APState, k: int) -> np.ndarray:
    return dpsi_stack(st, st.Rtil[k:k + 1], st.eprime_til[:, k:k + 1])[0]


def dITF_dR(k: int, j: int, l: int, st: APState, stats: ChannelStatistics,
            which: str = "own") -> np.ndarray:
    """Partial of ITF_{k,j,l} with respect to R_{k,l} (``own``) or R_{j,l} (``interferer``)."""
    n = st.n
    if not st.served[j] or j == k:
        return np.zeros((n, n), complex)
    e, ep = st.e, st.eprime
    Eh, Et = st.eprime_hat, st.eprime_til
    if which == "own":
        F = dRhat_dR(k, l, stats)
        dpj = _dpsi_hat(st, j)
        x_hat = (dpj * (1 + e[k]) - 2 * st.served[k] * Eh[k, j] * st.psi) \
            / (n ** 2 * ep[j] * (1 + e[k]) ** 3)
        x_til = dpj / (n ** 2 * ep[j])
        return _to_grad(x_hat @ F + x_til @ (np.eye(n) - F))
    if which == "interferer":
        F = dRhat_dR(j, l, stats)
        dpi = st.dpsi_identity
        x = (ep[j] * _dpsi_hat(st, k) - Eh[k, j] * dpi) / (n ** 2 * (1 + e[k]) ** 2 * ep[j] ** 2) \
            + (ep[j] * _dpsi_til(st, k) - Et[j, k] * dpi) / (n ** 2 * ep[j] ** 2)
        return _to_grad(x @ F)
    raise ValueError(f"which must be 'own' or 'interferer', not {which!r}")


def interferer_bracket(k: int, j: int, st: APState) -> tuple[np.ndarray, np.ndarray]:
    """The two brackets e'_j dPsi_T - e'_{j,T} dPsi of the interferer partial (T = Rhat_k, Rtil_k)."""
    dpi = st.dpsi_identity
    ep = st.eprime[j]
    return (ep * _dpsi_hat(st, k) - st.eprime_hat[k, j] * dpi,
            ep * _dpsi_til(st, k) - st.eprime_til[j, k] * dpi)


def dSINR_dR(k: int, j: int, l: int, st: APState, report: RateReport, power: np.ndarray,
             stats: ChannelStatistics) -> np.ndarray:
    """Partial of the SINR equivalent of user k with respect to R_{j,l}."""
    S, D = report.signal[k], report.denom[k]
    p = power[:, l]
    if j == k:
        out = 2 * S * math.sqrt(p[k]) * dSA_dR(k, l, st, stats) / D
        for i in np.flatnonzero(st.served):
            if i != k:
                out = out - S ** 2 * p[i] * dITF_dR(k, i, l, st, stats, "own") / D ** 2
        return out
    return -S ** 2 * p[j] * dITF_dR(k, j, l, st, stats, "interferer") / D ** 2


def dR_dposition(k: int, l: int, scn: Scenario) -> tuple[np.ndarray, np.ndarray, bool]:
    """(dR_{k,l}/dx_l, dR_{k,l}/dy_l, clamped) with the angular part frozen."""
    delta = scn.layout.ap_positions[l] - scn.layout.ue_positions[k]
    d = float(np.hypot(*delta))
    clamped = d < D_MIN
    unit = delta / d if d > 0 else np.zeros(2)
    slope = pathloss_beta_derivative(max(d, D_MIN), scn.config)
    Rbar = scn.Rbar[l][k]
    return slope * unit[0] * Rbar, slope * unit[1] * Rbar, clamped


def _ap_direction_terms(st: APState, F: np.ndarray, D: np.ndarray):
    """Directional contractions at one AP for per-user directions D[u] applied to R_{u,l}.

    Returns (a, b, c): a[k] = <dSA_k/dR_k, D_k>, b[k, j] = <dITF_{k,j}/dR_k, D_k>,
    c[k, j] = <dITF_{k,j}/dR_j, D_j>.
    """
    n = st.n
    s, e, ep = st.served, st.e, st.eprime
    eps = np.where(s, ep, 1.0)
    Eh, Et = st.eprime_hat, st.eprime_til
    Y = F @ D
    Z = D - Y
    dpi = st.dpsi_identity
    dp_hat = dpsi_stack(st, st.Rhat, Eh)
    dp_til = dpsi_stack(st, st.Rtil, Et)

    def tr(A, B):
        return np.real(np.einsum("mab,iba->mi", A, B))

    P = np.real(np.einsum("ab,kba->k", st.psi, Y))
    Q = np.real(np.einsum("ab,kba->k", dpi, Y))
    a = np.where(s, (eps * P - 0.5 * e * Q) / (n * eps ** 1.5), 0.0)

    T1 = tr(dp_hat, Y)  # [j, k]
    T2 = tr(dp_hat, Z)
    one_e = 1.0 + e
    b = ((one_e[:, None] * T1.T - 2 * s[:, None] * Eh * P[:, None])
         / (n ** 2 * eps[None, :] * one_e[:, None] ** 3)
         + T2.T / (n ** 2 * eps[None, :]))
    T3 = tr(dp_hat, Y)  # [k, j]
    T4 = tr(dp_til, Y)
    c = ((eps[None, :] * T3 - Eh * Q[None, :]) / (n ** 2 * one_e[:, None] ** 2 * eps[None, :] ** 2)
         + (eps[None, :] * T4 - Et.T * Q[None, :]) / (n ** 2 * eps[None, :] ** 2))
    keep = s[None, :] & ~np.eye(len(s), dtype=bool)
    return a, np.where(keep, b, 0.0), np.where(keep, c, 0.0)


def sinr_directional(l: int, st: APState, report: RateReport, power: np.ndarray,
                     stats: ChannelStatistics, D: np.ndarray) -> np.ndarray:
    """out[k, u] = <dSINR_k/dR_{u,l}, D[u]> for all users k, u at AP l."""
    F = estimation_factors(stats, l)
    a, b, c = _ap_direction_terms(st, F, D)
    S, Dn = report.signal, report.denom
    p = power[:, l]
    out = -(S ** 2 / Dn ** 2)[:, None] * p[None, :] * c
    own = 2 * S * np.sqrt(p) * a / Dn - S ** 2 * (b @ p) / Dn ** 2
    out[np.diag_indices_from(out)] = own
    return out


def _tr(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("mab,iba->mi", A, B))


def exact_ap_derivative(l: int, st: APState, report: RateReport, power: np.ndarray,
                        stats: ChannelStatistics, dR: np.ndarray) -> np.ndarray:
    """Forward-mode derivative of every SINR equivalent when R_{u,l} moves by dR[u].

    Unlike the asymptotic partials this keeps every coupling through Psi_l, the
    pilot-contaminated estimates and the e' systems, so it is the exact
    derivative of the deterministic SINR (association and pilots fixed).
    """
    n, K = st.n, len(st.e)
    s, e, psi = st.served, st.e, st.psi
    eta_tau = stats.pilot_power * stats.pilot_len
    R = stats.R[l]
    pil = stats.pilots
    dobs = np.stack([dR[pil == t].sum(axis=0) for t in range(stats.pilot_len)]) * eta_tau
    B = np.linalg.solve(stats.obs_cov[l][pil], R)  # Psi_p^-1 R_k
    BdR = np.linalg.solve(stats.obs_cov[l][pil], dR)
    dRhat = eta_tau * (np.swapaxes(BdR, -1, -2).conj() @ R + R @ BdR
                       - np.swapaxes(B, -1, -2).conj() @ dobs[pil] @ B)
    dRhat = hermitian(dRhat)
    dRtil = dR - dRhat

    idx = np.flatnonzero(s)
    w = np.where(s, 1.0 / (n * (1.0 + e)), 0.0)
    A = np.einsum("i,iab->ab", w, dRhat)
    PAP = psi @ A @ psi
    b = np.where(s, (np.real(np.einsum("mab,ba->m", dRhat, psi))
                     - np.real(np.einsum("mab,ba->m", st.Rhat, PAP))) / n, 0.0)
    de = np.zeros(K)
    if len(idx):
        de[idx] = np.linalg.solve(np.eye(len(idx)) - st.J[np.ix_(idx, idx)], b[idx])
    inner = A - np.einsum("i,iab->ab", np.where(s, de / (n * (1.0 + e) ** 2), 0.0), st.Rhat)
    dpsi = -psi @ inner @ psi

    eye = np.eye(n)[None]
    targets = np.concatenate([eye, st.Rhat, st.Rtil])
    dtargets = np.concatenate([np.zeros_like(eye), dRhat, dRtil])
    E = np.column_stack([st.eprime, st.eprime_hat, st.eprime_til])  # (K, 2K+1)
    c = np.where(s, 1.0 / (n * (1.0 + e) ** 2), 0.0)
    dc = np.where(s, -2.0 * de / (n * (1.0 + e) ** 3), 0.0)
    MT = np.einsum("it,iab->tab", c[:, None] * E, st.Rhat) + targets
    dpsiT = psi @ MT @ psi
    H = psi @ st.Rhat @ psi
    G = psi @ st.Rhat @ dpsi + dpsi @ st.Rhat @ psi
    r = (_tr(dRhat, dpsiT) + _tr(G, MT)
         + _tr(H, dRhat) @ (c[:, None] * E) + _tr(H, st.Rhat) @ (dc[:, None] * E)
         + _tr(H, dtargets)) / n
    dE = st.solve(r)
    dep, dEh, dEt = dE[:, 0], dE[:, 1:K + 1], dE[:, K + 1:]

    ep = np.where(s, st.eprime, 1.0)
    dSA = np.where(s, de / np.sqrt(ep) - 0.5 * e * dep / ep ** 1.5, 0.0)
    one_e = 1.0 + e
    itf = report.interference[:, :, l]
    dITF = ((dEh / one_e[:, None] ** 2 - 2 * st.eprime_hat * (de / one_e ** 3)[:, None] + dEt.T)
            / (n * ep[None, :]) - itf * (dep / ep)[None, :])
    dITF = np.where(s[None, :], dITF, 0.0)
    np.fill_diagonal(dITF, 0.0)
    p = power[:, l]
    dS = np.sqrt(p) * dSA
    dD = dITF @ p
    S, D = report.signal, report.denom
    return 2 * S * dS / D - S ** 2 * dD / D ** 2


def sum_rate_gradient(scn: Scenario, states: list[APState] | None = None,
                      report: RateReport | None = None, method: str = "asymptotic"
                      ) -> GradientReport:
    """d Rsum / d lambda_l for every AP.

    ``asymptotic`` contracts the large-antenna SINR partials (own-user SA and
    ITF terms, the interferer ITF term; other cross-user effects dropped).
    ``exact`` differentiates the deterministic SINR in forward mode.
    Only R_{.,l} depends on lambda_l, so each AP contracts its own terms.
    """
    if method not in ("asymptotic", "exact"):
        raise ValueError(f"unknown gradient method {method!r}")
    if states is None or report is None:
        report, states = scn.deterministic()
    layout = scn.layout
    weight = 1.0 / (math.log(2.0) * (1.0 + report.sinr))
    M = layout.num_aps
    grad = np.zeros((M, 2))
    clamped = []
    for l in range(M):
        delta = layout.ap_positions[l][None, :] - layout.ue_positions
        d = np.hypot(delta[:, 0], delta[:, 1])
        close = d < D_MIN
        clamped += [(int(k), l) for k in np.flatnonzero(close)]
        unit = np.where(d[:, None] > 0, delta / np.where(d > 0, d, 1.0)[:, None], 0.0)
        slope = pathloss_beta_derivative(np.maximum(d, D_MIN), scn.config)
        if method == "exact":
            for c in range(2):
                dR = (slope * unit[:, c])[:, None, None] * scn.Rbar[l]
                dsinr = exact_ap_derivative(l, states[l], report, scn.service.power, scn.stats, dR)
                grad[l, c] = weight @ dsinr
        else:
            dsinr = sinr_directional(l, states[l], report, scn.service.power, scn.stats,
                                     scn.Rbar[l])
            per_user = weight @ dsinr  # d Rsum along R_u -> Rbar_u
            grad[l] = (per_user * slope) @ unit
    return GradientReport(grad=grad, clamped=clamped, sum_rate=report.sum_rate)


def fd_gradient(scn: Scenario, eps: float = 0.5, freeze_angles: bool = True,
                aps=None) -> GradientReport:
    """Central differences of the deterministic sum rate over each AP coordinate."""
    M = scn.layout.num_aps
    grad = np.zeros((M, 2))
    base = scn.layout.ap_positions
    for l in range(M) if aps is None else aps:
        for c in range(2):
            vals = []
            for sign in (1.0, -1.0):
                pos = base.copy()
                pos[l, c] += sign * eps
                vals.append(moved(scn, pos, freeze_angles=freeze_angles).sum_rate())
            grad[l, c] = (vals[0] - vals[1]) / (2 * eps)
    return GradientReport(grad=grad, sum_rate=scn.sum_rate())


def beta_of_position(scn: Scenario, k: int, l: int, ap_xy) -> float:
    d = np.hypot(*(np.asarray(ap_xy) - scn.layout.ue_positions[k]))
    return float(pathloss_beta(d, scn.config))
