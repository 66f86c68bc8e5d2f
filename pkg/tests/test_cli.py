import json
from dataclasses import replace

import numpy as np
import pytest

from cellfree.cli import main
from cellfree.config import ExperimentSpec, dumps_config
from cellfree.experiments import (ResultTable, emit_results, read_results_csv, result_columns,
                                  run_experiment)

from conftest import small_config

TINY = small_config(num_aps=3, num_users=4, antennas_per_ap=4, assoc_count=2, pilot_len=4,
                    mc_trials=20)


def _spec(kind="assoc_sweep", **kw):
    sweep = kw.pop("sweep", (("assoc_count", (1.0, 2.0)),) if kind == "assoc_sweep" else ())
    return ExperimentSpec(kind, TINY, sweep, **kw)


def _write(tmp_path, spec, name="spec.ini"):
    path = tmp_path / name
    path.write_text(dumps_config(spec.config, spec))
    return path


def test_empty_table_is_header_only(tmp_path):
    table = ResultTable(["seed", "value", "status"], meta={"config_hash": "abc"})
    path = emit_results(table, tmp_path / "empty.csv")[0]
    assert path.read_text() == "# config_hash: abc\nseed,value,status\n"
    meta, cols, rows = read_results_csv(path)
    assert meta == {"config_hash": "abc"} and cols == ["seed", "value", "status"] and rows == []


def test_csv_round_trip(tmp_path):
    table = run_experiment(_spec())
    path = emit_results(table, tmp_path / "r.csv")[0]
    meta, cols, rows = read_results_csv(path)
    assert cols == table.columns == result_columns(_spec())
    assert meta["config_hash"] == table.meta["config_hash"]
    for parsed, row in zip(rows, table.rows):
        for text, value in zip(parsed, row):
            if isinstance(value, float):
                assert float(text) == pytest.approx(value, rel=1e-11)
            else:
                assert text == str(value)


def test_parallel_rows_match_serial():
    spec = _spec(seeds=(0, 1))
    a = run_experiment(spec)
    b = run_experiment(spec, jobs=2)
    assert a.rows == b.rows


def test_row_errors_are_recorded(tmp_path):
    spec = _spec(layout_file=str(tmp_path / "missing.csv"))
    table = run_experiment(spec)
    assert len(table.rows) == 2
    assert all(s.startswith("error: FileNotFoundError") for s in table.column("status"))
    assert all(np.isnan(v) for v in table.column("de_sum_rate"))


def test_timing_column_only_on_request():
    assert "wall_time_s" not in run_experiment(_spec()).columns
    table = run_experiment(_spec(), timing=True)
    assert table.columns[-1] == "wall_time_s" and table.rows[0][-1] > 0


def test_cli_run_is_byte_reproducible(tmp_path, capsys):
    path = _write(tmp_path, _spec())
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", str(path), "--out", str(out1)]) == 0
    assert main(["run", str(path), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert "wrote" in capsys.readouterr().out


def test_cli_overrides_and_seed(tmp_path):
    path = _write(tmp_path, _spec())
    out = tmp_path / "o.csv"
    main(["run", str(path), "--out", str(out), "--seed", "3", "--seed", "4",
          "--set", "stats.noise_dbm=-90"])
    meta, cols, rows = read_results_csv(out)
    assert meta["seeds"] == "3 4"
    assert [r[0] for r in rows] == ["3", "4", "3", "4"]
    base = tmp_path / "base.csv"
    main(["run", str(path), "--out", str(base), "--seed", "3", "--seed", "4"])
    assert read_results_csv(base)[0]["config_hash"] != meta["config_hash"]


def test_cli_json(tmp_path):
    path = _write(tmp_path, _spec())
    out = tmp_path / "r.json"
    main(["run", str(path), "--out", str(out), "--format", "json"])
    data = json.loads(out.read_text())
    assert data["columns"][0] == "seed" and len(data["rows"]) == 2
    assert data["meta"]["kind"] == "assoc_sweep"


def test_cli_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[scenario]\nradius_m = 1\n")
    assert main(["run", str(path)]) == 2
    assert "missing required key" in capsys.readouterr().err


def test_cli_optimize_writes_trace(tmp_path):
    path = _write(tmp_path, _spec("deploy_random", max_iter=2))
    out = tmp_path / "opt.csv"
    assert main(["optimize", str(path), "--out", str(out)]) == 0
    _, cols, rows = read_results_csv(out)
    assert "final_objective" in cols and rows[0][-1] == "ok"
    trace = tmp_path / "opt_trace_seed0.csv"
    _, tcols, trows = read_results_csv(trace)
    assert tcols[:2] == ["iteration", "objective"] and len(trows) >= 1
    _, lcols, lrows = read_results_csv(tmp_path / "opt_layout_final_seed0.csv")
    assert lcols == ["id", "x", "y", "kind"] and len(lrows) == TINY.num_aps + TINY.num_users


def test_cli_kmeans_from_spec(tmp_path):
    path = _write(tmp_path, _spec("deploy_kmeans", max_iter=1))
    out = tmp_path / "km.csv"
    main(["optimize", str(path), "--out", str(out)])
    assert read_results_csv(out)[0]["kind"] == "deploy_kmeans"


def test_cli_check_gradients(tmp_path, capsys):
    path = _write(tmp_path, _spec())
    out = tmp_path / "g.csv"
    assert main(["check-gradients", str(path), "--out", str(out)]) == 0
    meta, cols, rows = read_results_csv(out)
    assert meta["kind"] == "gradient_check" and len(rows) == 2 * TINY.num_aps  # sweep kept
    assert "gradient agreement" in capsys.readouterr().out
