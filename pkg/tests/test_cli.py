import csv
import filecmp

import numpy as np
import pytest

from fedgraph_fdia.cli import main
from fedgraph_fdia.config import load_config
from fedgraph_fdia.data import load_dataset
from fedgraph_fdia.evaluation import parse_report
from fedgraph_fdia.grid import load_case, normalized_laplacian

TINY = """\
[data]
window = 4
samples = {samples}
[attack]
delta = 2
[model]
lstm_units = 4
gcn_units = 8, 1
[train]
rounds = {rounds}
lr_local = 0.2
lr_server = 0.03
batch_size = 16
[fed_lstm]
hidden = 4
rounds = 1
[fed_mlp]
hidden = 8
rounds = 2
"""


def write_config(tmp_path, samples=40, rounds=1, extra="", name="run.ini"):
    path = tmp_path / name
    path.write_text(TINY.format(samples=samples, rounds=rounds) + extra)
    return path


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """One generated dataset plus a one-round training run shared by the smoke tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root, cfg


def read_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["round", "client", "loss"]
    return [(int(r), int(c), float(v)) for r, c, v in rows[1:]]


def test_gen_data_smoke(tiny):
    root, _ = tiny
    train, test = load_dataset(root / "data" / "train"), load_dataset(root / "data" / "test")
    assert (len(train), len(test)) == (32, 8)
    assert train.windows.shape[1:] == (57, 4, 2)
    manifest = load_config(root / "data" / "manifest.ini")
    assert manifest.n_samples == 40 and manifest.window == 4


def test_gen_data_deterministic(tmp_path, tiny):
    root, cfg = tiny
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    for split in ("train", "test"):
        cmp = filecmp.dircmp(root / "data" / split, tmp_path / "again" / split)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        for f in cmp.common_files:
            assert (root / "data" / split / f).read_bytes() == (tmp_path / "again" / split / f).read_bytes()


def test_seed_flag_changes_data(tmp_path, tiny):
    root, cfg = tiny
    assert main(["gen-data", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "s7")]) == 0
    a = load_dataset(root / "data" / "train")
    b = load_dataset(tmp_path / "s7" / "train")
    assert not np.array_equal(a.windows, b.windows)
    assert load_config(tmp_path / "s7" / "manifest.ini").data_seed == 7


def test_train_smoke(tiny):
    root, _ = tiny
    run = root / "run"
    assert (run / "model.ckpt").is_file()
    assert all((run / f"client{c}.ckpt").is_file() for c in range(4))
    hist = read_history(run / "history.csv")
    assert {r for r, _, _ in hist} == {1} and {c for _, c, _ in hist} == {0, 1, 2, 3}
    assert load_config(run / "manifest.ini").train.rounds == 1


def test_train_resume(tmp_path, tiny):
    root, _ = tiny
    data = root / "data"
    one = write_config(tmp_path, rounds=1, name="one.ini")
    three = write_config(tmp_path, rounds=3, name="three.ini")
    out = tmp_path / "run"
    assert main(["train", "--config", str(one), "--data", str(data), "--out", str(out)]) == 0
    assert main(["train", "--config", str(three), "--data", str(data), "--out", str(out), "--resume"]) == 0
    assert [r for r, c, _ in read_history(out / "history.csv") if c == 0] == [1, 2, 3]
    straight = tmp_path / "straight"
    assert main(["train", "--config", str(three), "--data", str(data), "--out", str(straight)]) == 0
    assert [r for r, c, _ in read_history(straight / "history.csv") if c == 0] == [1, 2, 3]


def test_train_deterministic(tmp_path, tiny):
    root, cfg = tiny
    out = tmp_path / "again"
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(out)]) == 0
    assert (out / "model.ckpt").read_bytes() == (root / "run" / "model.ckpt").read_bytes()
    assert (out / "history.csv").read_bytes() == (root / "run" / "history.csv").read_bytes()


def test_eval_report_round_trip(tmp_path, tiny):
    root, _ = tiny
    assert main(["eval", "--checkpoint", str(root / "run"), "--data", str(root / "data"),
                 "--out", str(tmp_path)]) == 0
    path = tmp_path / "report-fedgraph-test.txt"
    report = parse_report(path)
    assert report.method == "fedgraph" and report.counts.n_pairs == 8 * 57
    assert 0 <= report.aggregate["f1"] <= 1
    assert main(["eval", "--checkpoint", str(root / "run"), "--data", str(root / "data"),
                 "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / path.name).read_bytes() == path.read_bytes()


def test_eval_matches_monolithic_forward(tmp_path, tiny):
    # the federated inference path in eval equals the centralized forward pass
    from fedgraph_fdia.cli import _load_scaler
    from fedgraph_fdia.model import HybridConfig, ModelWeights, predict_proba
    from fedgraph_fdia.nn.checkpoint import load_checkpoint, unflatten
    from fedgraph_fdia.evaluation import build_report
    root, _ = tiny
    tensors, header = load_checkpoint(root / "run" / "model.ckpt")
    g = unflatten(tensors)
    w = ModelWeights(g["fe"], g["gcn"], HybridConfig(**header["model"]))
    test = load_dataset(root / "data" / "test")
    grid = load_case("ieee57")
    p = predict_proba(w, _load_scaler(g["scaler"]).transform(test.windows), normalized_laplacian(grid))
    assert main(["eval", "--checkpoint", str(root / "run"), "--data", str(root / "data"),
                 "--out", str(tmp_path)]) == 0
    report = parse_report(tmp_path / "report-fedgraph-test.txt")
    ref = build_report(p, test.labels, grid.labels, header["threshold"], method="fedgraph",
                       dataset=report.dataset)
    assert report == ref


def test_compare_three_methods(tmp_path, tiny):
    root, cfg = tiny
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg), "--data", str(root / "data"), "--out", str(out)]) == 0
    rows = (out / "comparison.txt").read_text().splitlines()
    assert len(rows) == 5
    assert [r.split()[0] for r in rows[2:]] == ["fedgraph", "fed_lstm", "fed_mlp"]
    # compare's baseline checkpoints evaluate to the same reports
    for method in ("fed_lstm", "fed_mlp"):
        assert main(["eval", "--checkpoint", str(out / f"{method}.ckpt"), "--data", str(root / "data"),
                     "--out", str(tmp_path / "ev")]) == 0
        assert parse_report(tmp_path / "ev" / f"report-{method}-test.txt") == parse_report(
            out / f"report-{method}.txt")
    # tabulating stored reports is the single-method path
    assert main(["compare", "--reports", str(out / "report-fed_mlp.txt"), "--out", str(tmp_path / "one")]) == 0
    assert len((tmp_path / "one" / "comparison.txt").read_text().splitlines()) == 3


def test_compare_rejects_mixed_datasets(tmp_path, tiny, capsys):
    root, cfg = tiny
    assert main(["gen-data", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path / "d3")]) == 0
    for d, name in ((root / "data", "a"), (tmp_path / "d3", "b")):
        assert main(["eval", "--checkpoint", str(root / "run"), "--data", str(d),
                     "--out", str(tmp_path / name)]) == 0
    code = main(["compare", "--reports", str(tmp_path / "a" / "report-fedgraph-test.txt"),
                 str(tmp_path / "b" / "report-fedgraph-test.txt"), "--out", str(tmp_path / "c")])
    assert code == 5
    assert "different datasets" in capsys.readouterr().err


def test_overfit_train_beats_holdout(tmp_path):
    cfg = write_config(tmp_path, samples=60, rounds=25,
                       extra="[partition]\nnum_clients = 2\n")
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    for split in ("train", "test"):
        assert main(["eval", "--checkpoint", str(run), "--data", str(data), "--split", split,
                     "--out", str(tmp_path)]) == 0
    f1 = {s: parse_report(tmp_path / f"report-fedgraph-{s}.txt").aggregate["f1"] for s in ("train", "test")}
    assert f1["train"] > f1["test"]
    hist = read_history(run / "history.csv")
    mean = lambda r: np.mean([v for rr, _, v in hist if rr == r])
    assert mean(25) < mean(1)


# ---------------------------------------------------------------- exit codes


def test_exit_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearnin_rate = 1\n")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["gen-data", "--config", str(tmp_path / "missing.ini")]) == 2
    assert main(["gen-data", "--threads", "0", "--out", str(tmp_path / "y")]) == 2


def test_exit_io_error(tmp_path, tiny):
    _, cfg = tiny
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "nothing"),
                 "--out", str(tmp_path / "r")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--config", str(cfg), "--out", str(blocker / "sub")]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_numeric_failure(tmp_path, tiny, capsys):
    root, _ = tiny
    cfg = write_config(tmp_path, rounds=2, extra="", name="hot.ini")
    text = cfg.read_text().replace("lr_local = 0.2", "lr_local = 1e200")
    cfg.write_text(text)
    code = main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path / "r")])
    assert code == 4
    assert "round 1" in capsys.readouterr().err


def test_exit_compatibility(tmp_path, tiny):
    root, _ = tiny
    other = tmp_path / "w6.ini"
    other.write_text(TINY.format(samples=20, rounds=1).replace("window = 4", "window = 6"))
    assert main(["gen-data", "--config", str(other), "--out", str(tmp_path / "d6")]) == 0
    assert main(["eval", "--checkpoint", str(root / "run"), "--data", str(tmp_path / "d6")]) == 5
    grid118 = tmp_path / "g118.ini"
    grid118.write_text("[grid]\ncase = ieee118\n")
    assert main(["train", "--config", str(grid118), "--data", str(root / "data"),
                 "--out", str(tmp_path / "r")]) == 5


def test_eval_untrained_model(tmp_path, tiny):
    root, _ = tiny
    cfg = write_config(tmp_path, rounds=0, name="zero.ini")
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path / "r")]) == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "r"), "--data", str(root / "data"),
                 "--out", str(tmp_path)]) == 0
    report = parse_report(tmp_path / "report-fedgraph-test.txt")
    c = report.counts.total()
    base = (c.tp + c.fn)[0] / report.counts.n_pairs
    # an uninformed detector lands between all-negative (F1 0) and all-positive
    assert 0 <= report.aggregate["f1"] <= 2 * base / (1 + base) + 1e-12
