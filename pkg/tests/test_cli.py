import csv
import json

import numpy as np
import pytest

from fedcmfs import cli
from fedcmfs.config import ConfigError, RunConfig, dump_config, load_config
from fedcmfs.dataset import save_csv
from fedcmfs.synthetic import discrete_dag


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    save_csv(discrete_dag(n_nodes=12, n_labels=3, n_rows=600, seed=4).dataset, path)
    return path


def write_config(path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def base_config(tmp_path, data_csv, **extra):
    values = dict(dataset=data_csv, format="csv", data_kind="discrete", label_count=3,
                  n_clients="3, 5, 10", seeds="0, 1, 2, 3, 4", out=tmp_path / "out")
    values.update(extra)
    return write_config(tmp_path / "exp.cfg", **values)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_precedence(tmp_path):
    cfg_file = write_config(tmp_path / "a.cfg", dataset="x.csv", alpha=0.01, k1=0.2, seeds="1,2")
    env = {"FEDCMFS_ALPHA": "0.02", "FEDCMFS_K2": "0.1"}
    cfg = load_config(cfg_file, ["alpha=0.03"], environ=env)
    assert (cfg.alpha, cfg.k1, cfg.k2, cfg.seeds) == (0.03, 0.2, 0.1, [1, 2])
    assert load_config(cfg_file, environ=env).alpha == 0.02


def test_config_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path / "a.cfg", dataset="x.csv"), environ={})
    assert (cfg.alpha, cfg.mlknn_k, cfg.max_cond, cfg.batch_size) == (0.05, 10, 3, 100)


def test_config_round_trip(tmp_path):
    cfg = RunConfig(dataset="d.csv", n_clients=[3, 5], seeds=[7], trace_messages=True)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path, environ={}) == cfg


@pytest.mark.parametrize("override", ["bogus=1", "alpha=abc", "noequals", "k1=0", "format=xls"])
def test_config_errors(tmp_path, override):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path / "a.cfg", dataset="x.csv"), [override], environ={})


def test_k1_zero_exit_code(tmp_path, data_csv, capsys):
    cfg = base_config(tmp_path, data_csv, k1=0)
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "k1" in err and "(0, 0.3]" in err


def test_missing_dataset_exit_code(tmp_path):
    cfg = write_config(tmp_path / "a.cfg", dataset=tmp_path / "absent.csv", label_count=1)
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_DATA


def test_bad_label_exit_code(tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("a,y\n1,0\n2,3\n")
    cfg = write_config(tmp_path / "a.cfg", dataset=data, label_count=1)
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_DATA


@pytest.fixture(scope="module")
def grid(tmp_path_factory, data_csv):
    tmp = tmp_path_factory.mktemp("grid")
    cfg = base_config(tmp, data_csv)
    assert cli.main(["run", "--config", str(cfg), "--trace"]) == cli.EXIT_OK
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp / "again")]) == cli.EXIT_OK
    return tmp / "out", tmp / "again"


def test_grid_rows(grid):
    out, _ = grid
    rows = read_rows(out / "results.csv")
    assert len(rows) == 15
    assert {(int(r["n_clients"]), int(r["seed"])) for r in rows} == \
        {(n, s) for n in (3, 5, 10) for s in range(5)}
    assert len(read_rows(out / "summary.csv")) == 3
    assert len(list((out / "cells").glob("*.json"))) == 15


def test_column_set(grid):
    with open(grid[0] / "results.csv") as fh:
        assert next(csv.reader(fh)) == ["dataset", "n_clients", "seed", "ap", "cv", "hl", "rl",
                                        "fma", "fmi", "n_selected", "ci_tests_total",
                                        "wall_seconds"]


def without_timing(obj):
    if isinstance(obj, dict):
        return {k: without_timing(v) for k, v in obj.items() if k != "wall_seconds"}
    if isinstance(obj, list):
        return [without_timing(v) for v in obj]
    return obj


def test_rerun_identical_except_timing(grid):
    out, again = grid
    for name in ("results.csv", "summary.csv"):
        assert without_timing(read_rows(out / name)) == without_timing(read_rows(again / name))
    for cell in (out / "cells").glob("*.json"):
        a = json.loads(cell.read_text())
        b = json.loads((again / "cells" / cell.name).read_text())
        assert without_timing(a) == without_timing(b)


def test_provenance_round_trip(grid):
    for path in (grid[0] / "cells").glob("*.json"):
        cell = cli.read_cell(path)
        assert cli.CellResult.from_dict(cell.to_dict()).to_dict() == json.loads(path.read_text())


def test_summary_means(grid):
    out, _ = grid
    rows = read_rows(out / "results.csv")
    for summary in read_rows(out / "summary.csv"):
        cells = [r for r in rows if r["n_clients"] == summary["n_clients"]]
        assert int(summary["n_seeds"]) == len(cells) == 5
        for col in ("ap", "hl", "n_selected", "ci_tests_total"):
            expected = np.mean([float(r[col]) for r in cells])
            assert float(summary[col]) == pytest.approx(expected, rel=1e-12, nan_ok=True)


def test_trace_files(grid):
    out, again = grid
    traces = sorted((out / "trace").glob("*.jsonl"))
    assert len(traces) == 15
    first = json.loads(traces[0].read_text().splitlines()[0])
    assert set(first) == {"request_id", "client_id", "query"}
    assert not (again / "trace").exists()


def test_config_written(grid):
    assert (grid[0] / "config.cfg").exists()


def test_batch_and_cache_do_not_change_results(tmp_path, data_csv):
    outs = []
    for i, extra in enumerate([{}, {"batch_size": 1, "cache_enabled": "false", "n_workers": 3}]):
        cfg = base_config(tmp_path, data_csv, n_clients=3, seeds=0, out=tmp_path / f"o{i}",
                          **extra)
        assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_OK
        outs.append(tmp_path / f"o{i}")
    a = json.loads(next((outs[0] / "cells").glob("*.json")).read_text())
    b = json.loads(next((outs[1] / "cells").glob("*.json")).read_text())
    assert a["selection"]["selected"] == b["selection"]["selected"]
    assert a["metrics"] == b["metrics"]
