"""Experiment orchestration: sweeps, result tables and their on-disk formats."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import build_scenario
from .config import ExperimentSpec, apply_point, config_hash
from .deployopt import BBGDOptions, bbgd_optimize, kmeans_init, trace_rows
from .gradients import fd_gradient, sum_rate_gradient
from .scenario import generate_layout, load_layout_csv

log = logging.getLogger(__name__)

MC_KINDS = ("de_vs_mc_antennas", "de_vs_mc_users", "assoc_sweep", "reg_sweep")
DEPLOY_KINDS = ("deploy_random", "deploy_kmeans")

MC_COLUMNS = ["de_sum_rate", "mc_sum_rate", "mc_stderr", "rel_error", "de_iterations"]
DEPLOY_COLUMNS = ["init_objective", "final_objective", "improvement", "iterations", "reason"]
GRADIENT_COLUMNS = ["ap", "min_dist", "excluded", "grad_x", "grad_y", "fd_x", "fd_y",
                    "fd_full_x", "fd_full_y", "rel_error", "cosine", "agrees"]


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    # name -> (header, rows) side tables such as optimizer traces and layouts
    extras: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def result_columns(spec: ExperimentSpec, timing: bool = False) -> list[str]:
    cols = ["seed"] + [name for name, _ in spec.sweep]
    if spec.kind in MC_KINDS:
        cols += MC_COLUMNS
    elif spec.kind in DEPLOY_KINDS:
        cols += DEPLOY_COLUMNS
    else:
        cols += GRADIENT_COLUMNS
    cols.append("status")
    if timing:
        cols.append("wall_time_s")
    return cols


def _initial_layout(spec: ExperimentSpec, cfg, seed: int):
    if spec.layout_file:
        layout = load_layout_csv(spec.layout_file)
    else:
        layout = generate_layout(cfg, seed)
    if spec.kind == "deploy_kmeans":
        layout = kmeans_init(layout.ue_positions, cfg.num_aps, seed)
    return layout


def _mc_unit(spec, cfg, seed):
    scn = build_scenario(cfg, _initial_layout(spec, cfg, seed))
    report, states = scn.deterministic()
    mc = scn.monte_carlo(cfg.mc_trials, seed)
    rel = (report.sum_rate - mc.sum_rate) / mc.sum_rate if mc.sum_rate else float("nan")
    iters = max((st.iterations for st in states), default=0)
    return [[report.sum_rate, mc.sum_rate, mc.stderr, rel, iters]], {}


def _deploy_unit(spec, cfg, seed):
    layout = _initial_layout(spec, cfg, seed)
    opts = BBGDOptions(max_iter=spec.max_iter, gradient=spec.gradient, fd_eps=spec.fd_eps)
    best, state = bbgd_optimize(cfg, layout, opts)
    f0, f1 = state.objective[0], max(state.objective)
    extras = {
        "trace": trace_rows(state),
        "layout_init": _layout_rows(layout),
        "layout_final": _layout_rows(best),
    }
    return [[f0, f1, (f1 - f0) / f0, state.iteration, state.reason]], extras


def _layout_rows(layout):
    rows = [[i, float(x), float(y), "ap"] for i, (x, y) in enumerate(layout.ap_positions)]
    rows += [[i, float(x), float(y), "ue"] for i, (x, y) in enumerate(layout.ue_positions)]
    return ["id", "x", "y", "kind"], rows


def _gradient_unit(spec, cfg, seed):
    scn = build_scenario(cfg, _initial_layout(spec, cfg, seed))
    g = sum_rate_gradient(scn, method=spec.gradient if spec.gradient != "fd" else "asymptotic").grad
    fd = fd_gradient(scn, spec.fd_eps).grad
    full = fd_gradient(scn, spec.fd_eps, freeze_angles=False).grad
    delta = scn.layout.ap_positions[:, None, :] - scn.layout.ue_positions[None, :, :]
    dmin = np.hypot(delta[..., 0], delta[..., 1]).min(axis=1)
    rows = []
    for l in range(scn.layout.num_aps):
        rel, cos = gradient_agreement(g[l], fd[l])
        excluded = bool(dmin[l] < spec.exclusion_m)
        rows.append([l, dmin[l], int(excluded), g[l, 0], g[l, 1], fd[l, 0], fd[l, 1],
                     full[l, 0], full[l, 1], rel, cos, int(rel <= 0.15 or cos >= 0.9)])
    return rows, {}


def gradient_agreement(g: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """(relative error, cosine similarity) of ``g`` against the reference ``ref``."""
    nref, ng = float(np.linalg.norm(ref)), float(np.linalg.norm(g))
    rel = float(np.linalg.norm(g - ref)) / nref if nref > 0 else (0.0 if ng == 0 else math.inf)
    cos = float(g @ ref) / (ng * nref) if ng > 0 and nref > 0 else float("nan")
    return rel, cos


_UNITS = {**{k: _mc_unit for k in MC_KINDS}, **{k: _deploy_unit for k in DEPLOY_KINDS},
          "gradient_check": _gradient_unit}


def _run_unit(args):
    spec, point, seed, width = args
    t0 = time.perf_counter()
    try:
        cfg = apply_point(spec.config, point)
        rows, extras = _UNITS[spec.kind](spec, cfg, seed)
        status = "ok"
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("unit %s seed %s failed: %s", point, seed, exc)
        rows, extras, status = [[float("nan")] * width], {}, f"error: {type(exc).__name__}: {exc}"
    return rows, extras, status, time.perf_counter() - t0


def run_experiment(spec: ExperimentSpec, jobs: int = 1, timing: bool = False) -> ResultTable:
    """One block of rows per (sweep point, seed); order is independent of ``jobs``."""
    columns = result_columns(spec, timing)
    width = len(columns) - 1 - len(spec.sweep) - 1 - int(timing)
    units = [(spec, point, seed, width) for point in spec.sweep_points() for seed in spec.seeds]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_unit, units))
    else:
        outcomes = [_run_unit(u) for u in units]
    table = ResultTable(columns, meta=result_meta(spec))
    for i, ((_, point, seed, _), (rows, extras, status, wall)) in enumerate(zip(units, outcomes)):
        prefix = [seed] + [point[name] for name, _ in spec.sweep]
        for row in rows:
            row = prefix + list(row) + [status]
            if timing:
                row.append(wall)
            table.rows.append(row)
        for name, content in extras.items():
            table.extras[f"{name}_seed{seed}" + (f"_pt{i // len(spec.seeds)}" if spec.sweep else "")] = content
    return table


def result_meta(spec: ExperimentSpec) -> dict:
    return {"config_hash": config_hash(spec.config, spec), "kind": spec.kind,
            "seeds": " ".join(str(s) for s in spec.seeds), "code_version": __version__}


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12g" % float(v)
    return str(v)


def _json_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float("%.12g" % float(v)) if math.isfinite(v) else None
    return v


def format_csv(columns: list[str], rows: list[list], meta: dict | None = None) -> str:
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}: {value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_results(table: ResultTable, path: str | Path, fmt: str = "csv") -> list[Path]:
    """Write the table (plus side tables as CSV next to it); returns every path written."""
    path = Path(path)
    if fmt == "csv":
        text = format_csv(table.columns, table.rows, table.meta)
    elif fmt == "json":
        text = json.dumps({"meta": table.meta, "columns": table.columns,
                           "rows": [[_json_cell(v) for v in r] for r in table.rows]},
                          indent=1, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    written = [path]
    for name in sorted(table.extras):
        header, rows = table.extras[name]
        side = path.with_name(f"{path.stem}_{name}.csv")
        side.write_text(format_csv(header, rows, table.meta))
        written.append(side)
    return written


def read_results_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    meta: dict = {}
    lines = Path(path).read_text().splitlines()
    body = []
    for line in lines:
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        else:
            body.append(line)
    reader = list(csv.reader(body))
    if not reader:
        return meta, [], []
    return meta, reader[0], reader[1:]
