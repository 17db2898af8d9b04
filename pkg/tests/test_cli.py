import hashlib
import os

import pytest

from bpc.cli import main
from bpc.coreset import load_coreset

FAST = ["--dataset", "blobs", "--n-per-class", "60", "--trajectories", "3", "--epochs", "6",
        "--iters", "5", "--eval-seeds", "2", "--eval-epochs", "20"]


def run(*args):
    return main([str(a) for a in args])


def digest(directory):
    h = hashlib.sha256()
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if os.path.isfile(path):
            h.update(name.encode())
            with open(path, "rb") as f:
                h.update(f.read())
    return h.hexdigest()


@pytest.fixture(scope="module")
def distilled(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("buffer", *FAST, "--out", out) == 0
    assert run("distill", *FAST, "--out", out) == 0
    return out


def test_buffer_writes_files_and_index(tmp_path):
    assert run("buffer", "--dataset", "blobs", "--trajectories", 4, "--epochs", 10,
               "--out", tmp_path) == 0
    files = sorted(os.listdir(tmp_path / "buffer"))
    assert files == ["index.tsv"] + [f"traj{i:04d}.bpct" for i in range(4)]
    assert len((tmp_path / "buffer" / "index.tsv").read_text().splitlines()) == 4
    assert (tmp_path / "resolved_config.ini").exists()


def test_buffer_rerun_identical(tmp_path):
    for sub, jobs in (("a", 1), ("b", 2)):
        assert run("buffer", *FAST, "--jobs", jobs, "--out", tmp_path / sub) == 0
    assert digest(tmp_path / "a" / "buffer") == digest(tmp_path / "b" / "buffer")


def test_unwritable_output_fails_cleanly(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    code = run("buffer", *FAST, "--out", blocker / "out")
    assert code == 3
    assert not os.path.exists(blocker / "out")
    assert "IO error" in capsys.readouterr().err


def test_zero_iterations_rejected(tmp_path):
    assert run("distill", *FAST, "--iters", 0, "--out", tmp_path) == 2


def test_metrics_log_lines(distilled):
    lines = (distilled / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 5 + 1
    assert lines[0].split("\t") == ["iteration", "loss", "e_plus", "e_minus", "grad_norm"]
    assert [line.split("\t")[0] for line in lines[1:]] == ["1", "2", "3", "4", "5"]


def test_resolved_config_reproduces_run(distilled, tmp_path):
    resolved = distilled / "resolved_config.ini"
    text = resolved.read_text()
    assert "[distill]" in text and "iters = 5" in text
    assert run("distill", "--config", resolved, "--out", tmp_path) == 0
    assert ((tmp_path / "coreset.bpcs").read_bytes()
            == (distilled / "coreset.bpcs").read_bytes())


def test_distill_leaves_buffer_untouched(distilled, tmp_path):
    before = digest(distilled / "buffer")
    assert run("distill", *FAST, "--buffer", distilled / "buffer", "--out", tmp_path) == 0
    assert digest(distilled / "buffer") == before


def test_eval_defaults_to_five_seeds(distilled, tmp_path, capsys):
    assert run("eval", "--dataset", "blobs", "--n-per-class", 60, "--eval-epochs", 20,
               "--coreset", distilled / "coreset.bpcs", "--out", tmp_path) == 0
    report = (tmp_path / "eval_report.txt").read_text()
    accs = next(l for l in report.splitlines() if l.startswith("accuracies"))
    assert len(accs.split("=")[1].split(",")) == 5
    assert capsys.readouterr().out.startswith("coreset\tmlp\t")


def test_compare_prints_means_and_difference(distilled, tmp_path, capsys):
    assert run("compare", *FAST, "--coreset", distilled / "coreset.bpcs", "--out", tmp_path) == 0
    rows = [l.split("\t") for l in capsys.readouterr().out.strip().splitlines()]
    assert [r[0] for r in rows] == ["method", "distilled", "random", "difference"]
    assert float(rows[3][2]) == pytest.approx(float(rows[1][2]) - float(rows[2][2]), abs=0.011)


def test_tampered_coreset_is_format_error(distilled, tmp_path):
    bad = tmp_path / "bad.bpcs"
    bad.write_bytes(b"XXXX" + (distilled / "coreset.bpcs").read_bytes()[4:])
    assert run("eval", *FAST, "--coreset", bad, "--out", tmp_path) == 3


def test_numeric_failure_exit_code(tmp_path):
    cfg = tmp_path / "boom.ini"
    cfg.write_text("[buffer]\nlr = 1e12\n")
    assert run("buffer", *FAST, "--config", cfg, "--out", tmp_path / "o") == 4
    assert not (tmp_path / "o" / "buffer" / "index.tsv").exists()


def test_config_errors(tmp_path):
    bad_key = tmp_path / "k.ini"
    bad_key.write_text("[distill]\nlearning_rate = 3\n")
    assert run("distill", "--config", bad_key, "--out", tmp_path) == 2
    assert run("distill", "--config", tmp_path / "missing.ini", "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as info:
        main(["distill", "--no-such-flag"])
    assert info.value.code == 2


def test_distill_needs_buffer(tmp_path):
    assert run("distill", *FAST, "--out", tmp_path) != 0


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BPC_OUT", str(tmp_path / "env"))
    assert run("buffer", *FAST, "--trajectories", 1) == 0
    assert (tmp_path / "env" / "buffer" / "index.tsv").exists()


def test_cross_arch_and_cross_loss_smoke(tmp_path, capsys):
    image = ["--dim", 16, "--shape", "1,4,4", "--model", "convnet-small"]
    out = tmp_path / "x"
    assert run("buffer", *FAST, *image, "--out", out) == 0
    assert run("distill", *FAST, *image, "--out", out) == 0
    assert load_coreset(out / "coreset.bpcs").meta["model"] == "convnet-small"
    assert run("cross-arch", *FAST, *image, "--models", "convnet-small,mlp", "--out", out) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-2].startswith("convnet-small*\t") and lines[-1].startswith("mlp\t")
    assert run("cross-loss", *FAST, "--losses", "ce,margin", "--trajectories", 2,
               "--out", tmp_path / "l") == 0
    printed = capsys.readouterr().out
    assert "fraction_rows_diagonal_max" in printed and "diagonal_mean" in printed
    assert (tmp_path / "l" / "buffer_margin" / "index.tsv").exists()
