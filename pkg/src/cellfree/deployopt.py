"""AP placement by Barzilai-Borwein stepped gradient ascent with backtracking and masking."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .bundle import Scenario, build_scenario
from .config import SystemConfig
from .gradients import fd_gradient, sum_rate_gradient
from .scenario import Layout

log = logging.getLogger(__name__)


@dataclass
class BBGDOptions:
    max_iter: int = 200
    max_move: float = 50.0  # meters moved by the AP with the largest gradient
    min_move: float = 20.0
    rel_tol: float = 1e-4  # relative gain over ``patience`` iterations that ends the run
    patience: int = 5
    gradient: str = "asymptotic"  # or "exact" / "fd"
    fd_eps: float = 0.5


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    positions: np.ndarray
    step: float
    masked: tuple
    backtracks: int


@dataclass
class OptState:
    iteration: int
    positions: np.ndarray
    grad: np.ndarray
    prev_positions: np.ndarray | None = None
    prev_grad: np.ndarray | None = None
    objective: list = field(default_factory=list)
    masked: set = field(default_factory=set)
    step: float = float("nan")
    reason: str = ""
    trace: list = field(default_factory=list)

    def unmasked(self) -> np.ndarray:
        keep = np.ones(len(self.positions), dtype=bool)
        keep[list(self.masked)] = False
        return keep

    def masked_grad(self, g: np.ndarray | None = None) -> np.ndarray:
        g = self.grad if g is None else g
        return np.where(self.unmasked()[:, None], g, 0.0)


def step_bounds(state: OptState, options: BBGDOptions | None = None) -> tuple[float, float]:
    """(delta_m, delta_M) so that the largest unmasked AP move spans [min_move, max_move]."""
    options = options or BBGDOptions()
    norms = np.linalg.norm(state.masked_grad(), axis=1)
    gmax = norms.max() if len(norms) else 0.0
    if gmax <= 0:
        return 0.0, 0.0
    return options.min_move / gmax, options.max_move / gmax


def bb_step(state: OptState, options: BBGDOptions | None = None) -> float:
    """|<d lambda, d g>| / <d g, d g> over unmasked coordinates, clamped to the move bounds."""
    lo, hi = step_bounds(state, options)
    if state.prev_grad is None or state.prev_positions is None:
        return hi
    keep = state.unmasked()
    dl = (state.positions - state.prev_positions)[keep].ravel()
    dg = (state.grad - state.prev_grad)[keep].ravel()
    den = float(dg @ dg)
    if den == 0.0:
        return hi
    return float(np.clip(abs(dl @ dg) / den, lo, hi))


def mask_largest_gradient(state: OptState) -> OptState:
    keep = state.unmasked()
    if not keep.any():
        state.reason = "all derivatives masked"
        return state
    norms = np.where(keep, np.linalg.norm(state.grad, axis=1), -np.inf)
    state.masked.add(int(np.argmax(norms)))
    if len(state.masked) == len(state.positions):
        state.reason = "all derivatives masked"
    return state


def _gradient(scn: Scenario, options: BBGDOptions) -> np.ndarray:
    if options.gradient == "fd":
        return fd_gradient(scn, options.fd_eps).grad
    return sum_rate_gradient(scn, method=options.gradient).grad


def bbgd_optimize(config: SystemConfig, layout: Layout, options: BBGDOptions | None = None
                  ) -> tuple[Layout, OptState]:
    """Ascend the deterministic sum rate over AP positions.

    Association, pilots and powers are rebuilt for every evaluated layout and
    held fixed inside each gradient.  Returns the best layout and the state
    whose ``trace`` lists every accepted iterate.
    """
    options = options or BBGDOptions()
    scn = build_scenario(config, layout)
    f = scn.sum_rate()
    state = OptState(iteration=0, positions=layout.ap_positions.copy(),
                     grad=_gradient(scn, options), objective=[f])
    state.trace.append(TraceRow(0, f, state.positions.copy(), 0.0, (), 0))
    best = layout

    while not state.reason:
        if state.iteration >= options.max_iter:
            state.reason = "max_iter"
            break
        if not state.unmasked().any():
            state.reason = "all derivatives masked"
            break
        delta = bb_step(state, options)
        backtracks = 0
        accepted = None
        while accepted is None:
            lo, hi = step_bounds(state, options)
            if hi == 0.0:
                mask_largest_gradient(state)
                if state.reason:
                    break
                continue
            delta = float(np.clip(delta, lo, hi))
            cand = state.positions + delta * state.masked_grad()
            cand_scn = build_scenario(config, layout.with_aps(cand))
            fc = cand_scn.sum_rate()
            if fc > f:
                accepted = (cand, cand_scn, fc)
                break
            backtracks += 1
            if delta <= lo * (1 + 1e-12):
                mask_largest_gradient(state)
                if state.reason:
                    break
                lo, hi = step_bounds(state, options)
            delta = delta / 2
        if accepted is None:
            break
        cand, scn, f = accepted
        best = layout.with_aps(cand)
        state.prev_positions, state.prev_grad = state.positions, state.grad
        state.positions = cand
        state.grad = _gradient(scn, options)
        state.step = delta
        state.iteration += 1
        state.objective.append(f)
        state.trace.append(TraceRow(state.iteration, f, cand.copy(), delta,
                                    tuple(sorted(state.masked)), backtracks))
        log.debug("iter %d objective %.6f step %.4g", state.iteration, f, delta)
        hist = state.objective
        if len(hist) > options.patience:
            ref = hist[-1 - options.patience]
            if (hist[-1] - ref) / max(abs(ref), 1e-300) < options.rel_tol:
                state.reason = "converged"
    return best, state


def kmeans_init(ue_positions: np.ndarray, num_aps: int, seed: int) -> Layout:
    """AP positions at the k-means centroids of the user positions."""
    ue = np.asarray(ue_positions, dtype=float)
    if len(ue) < num_aps:
        raise ValueError(f"k-means needs at least {num_aps} users, got {len(ue)}")
    km = KMeans(n_clusters=num_aps, n_init=1, max_iter=100, random_state=seed).fit(ue)
    return Layout(km.cluster_centers_.copy(), ue)


def trace_rows(state: OptState) -> tuple[list[str], list[list]]:
    M = len(state.positions)
    header = ["iteration", "objective", "step", "backtracks", "masked"]
    header += [f"{axis}{l}" for l in range(M) for axis in ("x", "y")]
    rows = []
    for r in state.trace:
        rows.append([r.iteration, r.objective, r.step, r.backtracks,
                     " ".join(str(m) for m in r.masked)] + list(r.positions.ravel()))
    return header, rows


def save_trace_csv(state: OptState, path: str | Path) -> None:
    header, rows = trace_rows(state)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
