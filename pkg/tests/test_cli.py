import json
from pathlib import Path

import pytest

from porenet import evaluation as E
from porenet.cli import main
from porenet.config import load_config
from porenet.dataset import load_dataset
from porenet.errors import ConfigurationError

SMALL_INI = """\
[train]
epochs = 3
lr = 0.002
alpha = 0.999

[weights]
m = 1
c = 1
b = 2

[pipn]
local = 8, 8
global = 8, 16, 32
decoder = 16, 16, 8
"""


def _tree(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    assert "Traceback" not in out + err
    return code, out, err


@pytest.fixture
def small_ini(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL_INI)
    return p


@pytest.fixture(scope="module")
def mms_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("mms") / "data"
    assert main(["gen-mms", "--cases", "2", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_gen_mms_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = _run(["gen-mms", "--cases", 5, "--seed", 7, "--out", tmp_path / name], capsys)
        assert code == 0 and "5 MMS cases" in out
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a and a == b
    cases = load_dataset(tmp_path / "a")
    assert len(cases) == 5
    assert all(c.interior_idx.size == 667 and c.boundary_idx.size == 168 for c in cases)


def test_seed_changes_output(tmp_path, capsys):
    _run(["gen-mms", "--cases", 1, "--seed", 1, "--out", tmp_path / "a"], capsys)
    _run(["gen-mms", "--cases", 1, "--seed", 2, "--out", tmp_path / "b"], capsys)
    assert _tree(tmp_path / "a") != _tree(tmp_path / "b")


def test_environment_seed_and_output(tmp_path, capsys, monkeypatch):
    _run(["gen-mms", "--cases", 1, "--seed", 4, "--out", tmp_path / "flag"], capsys)
    monkeypatch.setenv("PORENET_SEED", "4")
    monkeypatch.setenv("PORENET_OUTPUT", str(tmp_path / "env"))
    code, _, _ = _run(["gen-mms", "--cases", 1], capsys)
    assert code == 0
    assert _tree(tmp_path / "flag") == _tree(tmp_path / "env" / "mms")
    monkeypatch.setenv("PORENET_SEED", "four")
    code, _, err = _run(["gen-mms", "--cases", 1], capsys)
    assert code == 2 and "PORENET_SEED" in err


def test_gen_mms_unseen_and_duct(tmp_path, capsys):
    code, _, _ = _run(["gen-mms", "--cases", 1, "--unseen", "--seed", 0, "--out", tmp_path / "m"], capsys)
    assert code == 0
    assert [c.case_id for c in load_dataset(tmp_path / "m")] == ["mms_000", "mms_unseen"]
    code, _, _ = _run(["gen-duct", "--cases", 2, "--seed", 0, "--observations", 10,
                       "--D-min", 50, "--D-max", 150, "--out", tmp_path / "d"], capsys)
    assert code == 0
    ducts = load_dataset(tmp_path / "d")
    assert len(ducts) == 2 and all(c.observations.size == 10 for c in ducts)
    assert all(50 <= c.meta.D <= 150 for c in ducts)


def test_eval_exact_predictions_give_zero_table(mms_dir, tmp_path, capsys):
    code, out, _ = _run(["eval", "--data", mms_dir, "--predictions", mms_dir, "--out", tmp_path / "ev"], capsys)
    assert code == 0 and "u_x" in out
    table = E.RegionMaeTable.from_csv((tmp_path / "ev" / "mae.csv").read_text())
    assert table.fields == ("u_x", "u_y", "p")
    assert all(v == 0.0 for v in table.values.values())
    assert (tmp_path / "ev" / "mae.txt").read_text().startswith("field")
    assert len((tmp_path / "ev" / "mae_per_case.csv").read_text().splitlines()) == 3


def test_train_eval_bench_pipeline(mms_dir, small_ini, tmp_path, capsys):
    run = tmp_path / "run"
    code, out, _ = _run(["train", "--data", mms_dir, "--config", small_ini, "--seed", 1, "--out", run], capsys)
    assert code == 0 and "final checkpoint" in out
    hist = (run / "history.csv").read_text().splitlines()
    assert hist[0] == "epoch,lr,l_m,l_c,l_b,l_d,total" and len(hist) == 4
    assert float(hist[1].split(",")[1]) == 0.002
    assert json.loads((run / "split.json").read_text())["train"] == ["mms_000", "mms_001"]
    code, _, _ = _run(["eval", "--data", mms_dir, "--checkpoint", run / "final", "--out", tmp_path / "ev"], capsys)
    assert code == 0
    table = E.RegionMaeTable.from_csv((tmp_path / "ev" / "mae.csv").read_text())
    assert all(v > 0 for v in table.values.values() if v is not None)
    code, out, _ = _run(["bench", "--checkpoint", run / "final", "--data", mms_dir, "--repetitions", 5,
                         "--solver-time", 1.17, "--out", tmp_path / "bench.json"], capsys)
    assert code == 0 and "mean forward pass" in out
    rep = E.TimingReport.from_json((tmp_path / "bench.json").read_text())
    assert rep.repetitions == 5 and rep.solver_reference_s == 1.17 and rep.mean > 0


def test_train_epochs_flag_overrides_config(mms_dir, small_ini, tmp_path, capsys):
    code, _, _ = _run(["train", "--data", mms_dir, "--config", small_ini, "--epochs", 2, "--quiet",
                       "--out", tmp_path / "r"], capsys)
    assert code == 0
    assert len((tmp_path / "r" / "history.csv").read_text().splitlines()) == 3


def test_bench_synthetic_cloud(tmp_path, capsys):
    code, out, _ = _run(["bench", "--points", 300, "--repetitions", 5, "--out", tmp_path / "b.json"], capsys)
    assert code == 0
    rep = E.TimingReport.from_json((tmp_path / "b.json").read_text())
    assert rep.n_points == [300]


def test_check_passes(capsys):
    code, out, _ = _run(["check"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines and all(ln.startswith("PASS") for ln in lines)


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["gen-mms", "--bogus"],
    ["gen-mms", "--cases", "many"],
    ["train"],
    ["train", "--data", "x", "--model", "mlp"],
])
def test_usage_errors_exit_two(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == 2 and err.startswith("error:")


def test_user_errors_exit_one(tmp_path, mms_dir, capsys):
    code, _, err = _run(["train", "--data", tmp_path / "missing"], capsys)
    assert code == 1 and err.startswith("error:")
    code, _, err = _run(["eval", "--data", mms_dir, "--checkpoint", tmp_path / "nope", "--out", tmp_path / "e"], capsys)
    assert code == 1 and err.startswith("error:")
    code, _, err = _run(["gen-mms", "--cases", 0, "--out", tmp_path / "z"], capsys)
    assert code == 1 and err.startswith("error:")
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nepochz = 3\n")
    code, _, err = _run(["train", "--data", mms_dir, "--config", bad], capsys)
    assert code == 1 and "epochz" in err


def test_eval_needs_exactly_one_source(mms_dir, capsys):
    code, _, _ = _run(["eval", "--data", mms_dir], capsys)
    assert code == 2
    code, _, _ = _run(["eval", "--data", mms_dir, "--predictions", mms_dir, "--checkpoint", mms_dir], capsys)
    assert code == 2
    code, _, err = _run(["eval", "--data", mms_dir, "--predictions", mms_dir, "--cases", "nope"], capsys)
    assert code == 2 and "nope" in err


# ---------------------------------------------------------------- config

def test_config_file_parsing(small_ini):
    cfg = load_config(small_ini)
    tc = cfg.train_config(seed=5)
    assert (tc.epochs, tc.lr, tc.alpha, tc.seed) == (3, 0.002, 0.999, 5)
    assert (tc.weights.m, tc.weights.c, tc.weights.b, tc.weights.d) == (1.0, 1.0, 2.0, 0.0)
    assert cfg.model_overrides("pipn") == {"local": (8, 8), "global_": (8, 16, 32), "decoder": (16, 16, 8)}
    assert cfg.train_config(epochs=9).epochs == 9
    assert cfg.train_config(epochs=None).epochs == 3


def test_default_config_matches_training_defaults():
    cfg = load_config(None)
    tc = cfg.train_config()
    assert (tc.epochs, tc.lr, tc.alpha) == (3000, 1e-3, 0.9995)


@pytest.mark.parametrize("text", [
    "[train]\nepochs = three\n",
    "[mystery]\nx = 1\n",
    "[pipn]\ndepth = 3\n",
    "[train]\nepochs = 0\n",
    "not an ini file",
])
def test_bad_config_files(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(p).train_config()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini")
