"""A complete simulation instance: geometry, correlations, service map and statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .detequiv import APState, RateReport, deterministic_sum_rate
from .montecarlo import MonteCarloResult, ergodic_sum_rate
from .scenario import (Layout, ServiceMap, build_correlations, build_service_map,
                       distances_and_bearings, generate_layout, pathloss_beta)
from .stats import ChannelStatistics, compute_statistics


@dataclass(frozen=True)
class Scenario:
    config: SystemConfig
    layout: Layout
    beta: np.ndarray  # (K, M)
    Rbar: list[np.ndarray]  # per AP (K, N, N), unit diagonal
    service: ServiceMap
    stats: ChannelStatistics

    @property
    def R(self) -> list[np.ndarray]:
        return self.stats.R

    def deterministic(self) -> tuple[RateReport, list[APState]]:
        return deterministic_sum_rate(self.stats, self.service, self.config.alpha,
                                      self.config.noise_w)

    def sum_rate(self) -> float:
        return self.deterministic()[0].sum_rate

    def monte_carlo(self, trials: int | None = None, seed: int | None = None) -> MonteCarloResult:
        cfg = self.config
        return ergodic_sum_rate(self.stats, self.service, cfg.alpha, cfg.noise_w,
                                trials or cfg.mc_trials, cfg.rng_seed if seed is None else seed)


def build_scenario(config: SystemConfig, layout: Layout | None = None,
                   service: ServiceMap | None = None, seed: int | None = None) -> Scenario:
    """Assemble a scenario; the service map is derived from the gains unless given."""
    if layout is None:
        layout = generate_layout(config, config.rng_seed if seed is None else seed)
    R, Rbar, beta = build_correlations(layout, config)
    if service is None:
        service = build_service_map(beta, config)
    stats = compute_statistics(R, service.pilots, config)
    return Scenario(config, layout, beta, Rbar, service, stats)


def moved(scn: Scenario, ap_positions, freeze_angles: bool = True,
          freeze_service: bool = True) -> Scenario:
    """Scenario with APs moved.

    With ``freeze_angles`` the unit-diagonal correlation directions stay at their
    current values and only the path-loss gains follow the new distances.  With
    ``freeze_service`` association, pilots and powers are kept.
    """
    layout = scn.layout.with_aps(ap_positions)
    cfg = scn.config
    if freeze_angles:
        dist, _ = distances_and_bearings(layout)
        beta = pathloss_beta(dist, cfg)
        Rbar = scn.Rbar
        R = [beta[:, l, None, None] * Rbar[l] for l in range(layout.num_aps)]
    else:
        R, Rbar, beta = build_correlations(layout, cfg)
    service = scn.service if freeze_service else build_service_map(beta, cfg)
    stats = compute_statistics(R, service.pilots, cfg)
    return Scenario(cfg, layout, beta, Rbar, service, stats)
