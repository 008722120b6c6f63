import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from disentangle.cli import main, read_config_file, UsageError

TINY = ["--window", "6", "--hidden-dim", "8", "--heads", "2", "--recurrent-dim", "4", "--hash-buckets", "64"]


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture
def data(tmp_path):
    code, _ = run("synth", "--n", 60, "--users", 4, "--threads", 2, "--seed", 7, "--out", tmp_path / "data")
    assert code == 0
    return tmp_path / "data"


def test_synth_writes_two_deterministic_files(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--n", 200, "--users", 6, "--threads", 4, "--seed", 7, "--out", tmp_path / name)[0] == 0
    for f in ("utterances.jsonl", "links.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    lines = (tmp_path / "a" / "utterances.jsonl").read_text().splitlines()
    assert len(lines) == 200 and set(json.loads(lines[0])) >= {"id", "speaker", "text"}


@pytest.mark.parametrize("flags", [["--threads", "0"], ["--users", "1"], ["--mention-prob", "2"]])
def test_synth_config_errors_exit_2(tmp_path, flags):
    assert run("synth", *flags, "--out", tmp_path)[0] == 2


def test_synth_unwritable_output_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("synth", "--out", blocker / "sub")[0] == 2


def test_unknown_flag_exits_2():
    assert run("synth", "--bogus", "1")[0] == 2


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# synthetic corpus\nn = 30\nthreads=2\nusers = 3\n")
    assert run("synth", "--config", cfg, "--n", 40, "--out", tmp_path / "o")[0] == 0
    lines = (tmp_path / "o" / "utterances.jsonl").read_text().splitlines()
    assert len(lines) == 40
    speakers = {json.loads(x)["speaker"] for x in lines}
    assert len(speakers) <= 3


def test_config_file_rejects_unknown_and_malformed(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("depth=3\n")
    assert run("synth", "--config", bad, "--out", tmp_path)[0] == 2
    bad.write_text("n 30\n")
    assert run("synth", "--config", bad, "--out", tmp_path)[0] == 2
    bad.write_text("n=thirty\n")
    with pytest.raises(UsageError):
        read_config_file(bad, "synth")
    assert run("synth", "--config", tmp_path / "missing.cfg")[0] == 2


def test_config_file_booleans(tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("speaker-mask = false\nreference=yes\n")
    assert read_config_file(cfg, "train") == {"speaker_mask": False, "reference": True}


def test_train_default_window_is_fifty():
    from disentangle.cli import OPTIONS

    assert {o.name: o.default for o in OPTIONS["train"]}["window"] == 50


def test_train_zero_lr_constant_trace(data, tmp_path):
    out = tmp_path / "m.npz"
    code, _ = run("train", data / "utterances.jsonl", data / "links.tsv", *TINY, "--lr", 0, "--epochs", 2, "--out", out)
    assert code == 0
    with open(str(out) + ".trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "loss", "accuracy"]
    assert rows[1][1] == rows[2][1]


def test_train_same_seed_identical_checkpoints(data, tmp_path):
    for name in ("a.npz", "b.npz"):
        args = ["train", data / "utterances.jsonl", data / "links.tsv", *TINY, "--epochs", 1, "--seed", 7]
        assert run(*args, "--out", tmp_path / name)[0] == 0
    a, b = np.load(tmp_path / "a.npz"), np.load(tmp_path / "b.npz")
    assert sorted(a.files) == sorted(b.files)
    for k in a.files:
        assert np.array_equal(a[k], b[k])


def test_train_corrupt_corpus_exits_2(tmp_path):
    (tmp_path / "u.jsonl").write_text('{"id": 0, "speaker": "a"}\n{broken\n')
    (tmp_path / "l.tsv").write_text("")
    code, _ = run("train", tmp_path / "u.jsonl", tmp_path / "l.tsv", *TINY, "--out", tmp_path / "m.npz")
    assert code == 2


def test_train_missing_input_exits_2(tmp_path):
    assert run("train", tmp_path / "nope.jsonl", tmp_path / "nope.tsv")[0] == 2


def test_train_numeric_blowup_exits_3(data, tmp_path):
    with np.errstate(all="ignore"):
        code, _ = run("train", data / "utterances.jsonl", data / "links.tsv", *TINY, "--lr", "1e300", "--epochs", 3, "--out", tmp_path / "m.npz")
    assert code == 3


def test_predict_and_evaluate(data, tmp_path):
    model = tmp_path / "m.npz"
    assert run("train", data / "utterances.jsonl", data / "links.tsv", *TINY, "--epochs", 1, "--out", model)[0] == 0
    pred = tmp_path / "pred.tsv"
    assert run("predict", data / "utterances.jsonl", "--model", model, "--out", pred)[0] == 0
    links = pred.read_text().splitlines()
    assert len(links) == 60
    conf = [json.loads(x) for x in (tmp_path / "pred.tsv.confidence.jsonl").read_text().splitlines()]
    assert [f"{c['child']}\t{c['parent']}" for c in conf] == links
    assert all(0.0 < c["confidence"] <= 1.0 for c in conf)
    code, text = run("evaluate", pred, data / "links.tsv", "--json", tmp_path / "r.json")
    assert code == 0
    report = json.loads(text.strip().splitlines()[-1])
    assert list(report) == ["vi", "ari", "one_to_one", "p", "r", "f1"]
    assert json.loads((tmp_path / "r.json").read_text()) == report
    assert "accuracy" in text


def test_predict_with_wrong_checkpoint_exits_2(data, tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"garbage")
    assert run("predict", data / "utterances.jsonl", "--model", bad, "--out", tmp_path / "p.tsv")[0] == 2


def test_evaluate_gold_against_itself(data):
    code, text = run("evaluate", data / "links.tsv", data / "links.tsv")
    assert code == 0
    assert json.loads(text.strip().splitlines()[-1]) == {"vi": 1.0, "ari": 1.0, "one_to_one": 100.0, "p": 1.0, "r": 1.0, "f1": 1.0}


def test_evaluate_crossing_example(tmp_path):
    # {{1,2},{3,4}} against {{1,3},{2,4}}
    (tmp_path / "x.tsv").write_text("1\t1\n2\t1\n3\t3\n4\t3\n")
    (tmp_path / "y.tsv").write_text("1\t1\n2\t2\n3\t1\n4\t2\n")
    code, text = run("evaluate", tmp_path / "x.tsv", tmp_path / "y.tsv")
    assert code == 0
    report = json.loads(text.strip().splitlines()[-1])
    assert report["ari"] == pytest.approx(-0.5)
    assert report["one_to_one"] == pytest.approx(50.0)


def test_evaluate_coverage_mismatch_exits_2(tmp_path):
    (tmp_path / "x.tsv").write_text("1\t1\n2\t1\n")
    (tmp_path / "y.tsv").write_text("1\t1\n2\t2\n3\t3\n")
    assert run("evaluate", tmp_path / "x.tsv", tmp_path / "y.tsv")[0] == 2


def test_gradcheck_passes_and_injected_fault_exits_4():
    code, text = run("gradcheck", "--seeds", "0")
    assert code == 0, text
    assert text.count("pass") == 7
    code, text = run("gradcheck", "--seeds", "0", "--inject-wrong-sign")
    assert code == 4
    assert "FAIL" in text and "worst:" in text


def test_gradcheck_bad_seed_list():
    assert run("gradcheck", "--seeds", "a,b")[0] == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "disentangle.cli", "synth", "--threads", "0", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "n_threads" in proc.stderr


def test_train_unknown_graph_scope_exits_2(data, tmp_path):
    args = ["train", data / "utterances.jsonl", data / "links.tsv", *TINY, "--graph", "global"]
    assert run(*args, "--out", tmp_path / "m.npz")[0] == 2
