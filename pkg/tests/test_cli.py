import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from mtefree.cli import main
from mtefree.simulate import PRESETS

FORMATS = os.path.join(os.path.dirname(__file__), os.pardir, "docs", "formats.md")
ESTIMATE_FILES = [
    "coefficients.csv", "coefficients_table.txt", "diagnostics.json", "diagnostics.txt",
    "g_curves.csv", "liv_curves.csv", "liv_delta.csv", "metadata.json", "mte_comparison.csv",
    "mte_curve.csv", "mte_curve_liv.csv", "nl1_curve.csv", "response_curves.csv",
    "score_histogram.csv", "structural_curves.csv", "summary.json",
]
RUN = ["--outcome", "y", "--treatment", "d", "--continuous", "x", "--discrete", "z"]


def documented_columns(path=FORMATS):
    """File name -> column list, read from the per-file tables."""
    out, name, rows = {}, None, None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("### `"):
                name, rows = line.split("`")[1], None
            elif name and line.startswith("|"):
                cell = line.split("|")[1].strip()
                if rows is None:
                    rows = []
                elif not cell.startswith("---"):
                    rows.append(cell.strip("`"))
            elif name and rows is not None:
                if name.endswith(".csv"):
                    out[name] = rows
                name = rows = None
    return out


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "1200", "--seed", "3", "--output", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def estimated(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    code = main(["estimate", "--input", str(simulated / "sample.csv"), *RUN, "--procedure", "both",
                 "--bootstrap", "4", "--seed", "1", "--grid-size", "41", "--output", str(out)])
    assert code == 0
    return out


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--n", "300", "--seed", "1", "--output", str(tmp_path / name)]) == 0
    for f in ("sample.csv", "oracle.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_outputs(simulated):
    df = pd.read_csv(simulated / "sample.csv")
    assert list(df.columns) == ["y", "d", "x", "z"]
    assert len(df) == 1200 and set(df["d"]) <= {0, 1}
    doc = json.loads((simulated / "oracle.json").read_text())
    assert doc["columns"]["continuous"] == ["x"]
    assert set(doc["params"]) >= {"ATE", "TT", "TUT", "LATE", "pi_x"}


def test_simulate_bad_n(tmp_path, capsys):
    assert main(["simulate", "--n", "0", "--output", str(tmp_path)]) == 2
    assert "positive" in capsys.readouterr().err


def test_simulate_unknown_preset_lists_presets(tmp_path, capsys):
    assert main(["simulate", "--preset", "nope", "--output", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert all(name in err for name in PRESETS)


def test_estimate_writes_everything(estimated):
    assert sorted(p.name for p in estimated.iterdir()) == sorted(ESTIMATE_FILES)
    for name in ESTIMATE_FILES:
        path = estimated / name
        if name.endswith(".csv"):
            assert len(pd.read_csv(path)) > 0
        elif name.endswith(".json"):
            json.loads(path.read_text())
    cmp = pd.read_csv(estimated / "mte_comparison.csv")
    np.testing.assert_allclose(cmp["difference"], cmp["separate"] - cmp["liv"], atol=1e-12)
    meta = json.loads((estimated / "metadata.json").read_text())
    assert meta["rows_used"] == 1200 and meta["bootstrap"]["requested"] == 4


@pytest.mark.parametrize("name", sorted(documented_columns()))
def test_csv_headers_match_docs(estimated, simulated, name):
    path = simulated / name if name == "sample.csv" else estimated / name
    cols = documented_columns()[name]
    if name == "sample.csv":
        cols = cols + ["x", "z"]
    assert header(path) == cols


def test_missing_column_exit_2(simulated, tmp_path, capsys):
    code = main(["estimate", "--input", str(simulated / "sample.csv"), "--outcome", "wage",
                 "--treatment", "d", "--continuous", "x", "--output", str(tmp_path)])
    assert code == 2
    assert "column not found: wage" in capsys.readouterr().err


def test_missing_input_exit_2(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "none.csv"), *RUN, "--output", str(tmp_path)]) == 2


def test_row_order_does_not_matter(simulated, tmp_path):
    # shuffle raw lines: a float round trip through pandas is not bit-exact
    head, *lines = (simulated / "sample.csv").read_text().splitlines()
    order = np.random.default_rng(0).permutation(len(lines))
    shuffled = tmp_path / "shuffled.csv"
    shuffled.write_text("\n".join([head] + [lines[i] for i in order]) + "\n")
    for src, dst in ((simulated / "sample.csv", "a"), (shuffled, "b")):
        assert main(["estimate", "--input", str(src), *RUN, "--bootstrap", "0", "--grid-size", "21",
                     "--output", str(tmp_path / dst)]) == 0
    for f in ("mte_curve.csv", "coefficients.csv", "g_curves.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_diagnose_strict_probit_exit_4(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--preset", "probit", "--n", "3000", "--seed", "0", "--output", str(sim)]) == 0
    cols = json.loads((sim / "oracle.json").read_text())["columns"]
    args = ["diagnose", "--input", str(sim / "sample.csv"), "--outcome", "y", "--treatment", "d",
            "--continuous", ",".join(cols["continuous"]), "--discrete", ",".join(cols["discrete"]),
            "--tolerance", "0.02", "--output", str(tmp_path / "diag")]
    assert main(args) == 0
    assert "Identification supported: no" in capsys.readouterr().out
    assert main(args + ["--strict"]) == 4
    assert "strict" in capsys.readouterr().err


def test_config_file_with_flag_override(simulated, tmp_path):
    cfg = {
        "input": str(simulated / "sample.csv"),
        "columns": {"outcome": "y", "treatment": "d", "continuous": ["x"], "discrete": ["z"]},
        "procedure": "separate",
        "grid_size": 15,
        "bootstrap": 0,
        "output": str(tmp_path / "from_config"),
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert main(["estimate", "--config", str(path), "--grid-size", "11"]) == 0
    out = tmp_path / "from_config"
    assert len(pd.read_csv(out / "mte_curve.csv")) == 11
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["config"]["grid_size"] == 11 and meta["config"]["procedure"] == "separate"
    assert not (out / "mte_curve_liv.csv").exists()


def test_bad_config_key_exit_2(tmp_path, capsys):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"colour": "red"}))
    assert main(["estimate", "--config", str(path)]) == 2
    assert "unknown config keys" in capsys.readouterr().err


@pytest.mark.skipif(hasattr(os, "geteuid") and os.geteuid() == 0, reason="root ignores permissions")
def test_unwritable_output(simulated, tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["estimate", "--input", str(simulated / "sample.csv"), *RUN,
                     "--output", str(locked / "out")]) == 2
    finally:
        locked.chmod(0o700)


def test_output_path_is_a_file(simulated, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["estimate", "--input", str(simulated / "sample.csv"), *RUN,
                 "--output", str(blocker / "out")]) == 2
    assert "not writable" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("mtefree") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["mtefree", "simulate", "--n", "50", "--output", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "sample.csv").exists()
    res = subprocess.run([sys.executable, "-m", "mtefree.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "mtefree" in res.stdout
