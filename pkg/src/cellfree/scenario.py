"""Geometry, large-scale fading, spatial correlation and the AP-UE service map."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SystemConfig

log = logging.getLogger(__name__)


class CorrelationError(RuntimeError):
    """A correlation matrix came out non-PSD (indicates a model bug)."""


@dataclass(frozen=True)
class Layout:
    ap_positions: np.ndarray  # (M, 2) meters
    ue_positions: np.ndarray  # (K, 2) meters

    @property
    def num_aps(self) -> int:
        return len(self.ap_positions)

    @property
    def num_users(self) -> int:
        return len(self.ue_positions)

    def with_aps(self, ap_positions) -> "Layout":
        return Layout(np.asarray(ap_positions, dtype=float).reshape(-1, 2), self.ue_positions)


@dataclass(frozen=True)
class ServiceMap:
    assoc: np.ndarray  # (K, M) bool
    pilots: np.ndarray  # (K,) int in [0, tau_p)
    power: np.ndarray  # (K, M) watts

    def served(self, l: int) -> np.ndarray:
        return np.flatnonzero(self.assoc[:, l])

    def copilots(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.pilots == self.pilots[k])


def _uniform_disk(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def generate_layout(config: SystemConfig, seed: int) -> Layout:
    """Drop APs and users uniformly over the disk of radius ``config.radius_m``.

    APs and users come from separate child streams so that changing one count
    leaves the other point set unchanged.
    """
    ap_seq, ue_seq = np.random.SeedSequence(seed).spawn(2)
    aps = _uniform_disk(np.random.default_rng(ap_seq), config.num_aps, config.radius_m)
    ues = _uniform_disk(np.random.default_rng(ue_seq), config.num_users, config.radius_m)
    return Layout(aps, ues)


def reference_gain(config: SystemConfig) -> float:
    """Linear gain at the reference distance; the loss formula takes f_c in MHz."""
    fc_mhz = config.carrier_hz / 1e6
    pl_db = -35.4 + 34.0 * math.log10(config.ref_dist_m) + 20.0 * math.log10(fc_mhz)
    return 10.0 ** (-pl_db / 10.0)


def pathloss_beta(distance, config: SystemConfig):
    """Large-scale gain 2^g * beta_ref * (1 + d/d0)^-g, regular at d = 0."""
    g = config.pathloss_exp
    d = np.asarray(distance, dtype=float)
    return 2.0 ** g * reference_gain(config) * (1.0 + d / config.ref_dist_m) ** (-g)


def pathloss_beta_derivative(distance, config: SystemConfig):
    """d beta / d distance."""
    g = config.pathloss_exp
    d = np.asarray(distance, dtype=float)
    d0 = config.ref_dist_m
    return -(2.0 ** g) * g * reference_gain(config) / d0 * (1.0 + d / d0) ** (-g - 1.0)


def local_scattering_R(theta: float, config: SystemConfig, num_antennas: int | None = None
                       ) -> np.ndarray:
    """Unit-diagonal ULA correlation under the Gaussian local-scattering approximation."""
    n = config.antennas_per_ap if num_antennas is None else num_antennas
    dist = np.subtract.outer(np.arange(n), np.arange(n)).astype(float)
    dh, sigma = config.antenna_spacing, config.angular_spread_rad
    phase = np.exp(2j * np.pi * dh * dist * np.sin(theta))
    spread = np.exp(-0.5 * sigma ** 2 * (2.0 * np.pi * dh * dist * np.cos(theta)) ** 2)
    return phase * spread


def distances_and_bearings(layout: Layout) -> tuple[np.ndarray, np.ndarray]:
    """(K, M) distances and AP-to-UE bearings atan2(y_U - y_AP, x_U - x_AP)."""
    delta = layout.ue_positions[:, None, :] - layout.ap_positions[None, :, :]
    dist = np.hypot(delta[..., 0], delta[..., 1])
    theta = np.arctan2(delta[..., 1], delta[..., 0])
    return dist, theta


def build_correlations(layout: Layout, config: SystemConfig, psd_tol: float = 1e-10):
    """Return ``(R, Rbar, beta)`` with R[l] of shape (K, N, N).

    ``Rbar`` holds the unit-diagonal directions (kept so position derivatives can
    freeze them) and ``beta`` is the (K, M) gain table.
    """
    dist, theta = distances_and_bearings(layout)
    beta = pathloss_beta(dist, config)
    K, M = dist.shape
    N = config.antennas_per_ap
    R, Rbar = [], []
    for l in range(M):
        rb = np.stack([local_scattering_R(theta[k, l], config, N) for k in range(K)]) \
            if K else np.zeros((0, N, N), complex)
        R.append(beta[:, l, None, None] * rb)
        Rbar.append(rb)
    for l in range(M):
        if K == 0:
            continue
        lam_min = np.linalg.eigvalsh(Rbar[l]).min(axis=-1)
        if np.any(lam_min < -psd_tol):
            raise CorrelationError(f"non-PSD correlation at AP {l}: min eig {lam_min.min():.3e}")
    return R, Rbar, beta


def associate(beta: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Each user keeps its ``assoc_count`` strongest APs; ties go to the lower AP index."""
    K, M = beta.shape
    ser = config.assoc_count
    if ser > M:
        raise ValueError(f"assoc_count {ser} exceeds number of APs {M}")
    order = np.argsort(-beta, axis=1, kind="stable")[:, :ser]
    mask = np.zeros((K, M), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def primary_aps(beta: np.ndarray) -> np.ndarray:
    return np.argmax(beta, axis=1)


def assign_pilots(assoc: np.ndarray, beta: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Greedy pilot assignment in user order.

    User k takes the pilot whose current holders have the smallest summed gain
    at k's primary AP, with ties broken toward the lower pilot index.
    """
    K = beta.shape[0]
    tau = config.pilot_len
    pilots = np.zeros(K, dtype=int)
    if K == 0:
        return pilots
    primary = primary_aps(beta)
    for k in range(K):
        cost = np.zeros(tau)
        for j in range(k):
            cost[pilots[j]] += beta[j, primary[k]]
        pilots[k] = int(np.argmin(cost))
    return pilots


def allocate_power(assoc: np.ndarray, beta: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Square-root large-scale power split of each AP's budget among its served users."""
    weights = np.where(assoc, np.sqrt(beta), 0.0)
    totals = weights.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        power = config.ap_power_w * weights / totals[None, :]
    return np.where(assoc, power, 0.0)


def build_service_map(beta: np.ndarray, config: SystemConfig) -> ServiceMap:
    assoc = associate(beta, config)
    return ServiceMap(assoc, assign_pilots(assoc, beta, config), allocate_power(assoc, beta, config))


def save_layout_csv(layout: Layout, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "kind"])
        for i, (x, y) in enumerate(layout.ap_positions):
            writer.writerow([i, f"{x:.12g}", f"{y:.12g}", "ap"])
        for i, (x, y) in enumerate(layout.ue_positions):
            writer.writerow([i, f"{x:.12g}", f"{y:.12g}", "ue"])


def load_layout_csv(path: str | Path) -> Layout:
    aps: dict[int, tuple[float, float]] = {}
    ues: dict[int, tuple[float, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            target = {"ap": aps, "ue": ues}.get(row["kind"].strip().lower())
            if target is None:
                raise ValueError(f"unknown point kind {row['kind']!r} in {path}")
            target[int(row["id"])] = (float(row["x"]), float(row["y"]))

    def stack(points):
        if sorted(points) != list(range(len(points))):
            raise ValueError(f"non-contiguous ids in {path}")
        return np.array([points[i] for i in range(len(points))], dtype=float).reshape(-1, 2)

    return Layout(stack(aps), stack(ues))
