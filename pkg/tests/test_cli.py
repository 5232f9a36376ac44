import csv
import json

import pytest

from helpers import MICRO
from triplanetok import io
from triplanetok.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, run_cli


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data"
    assert run_cli(["gen-data", "--out", str(data), "--count", "3", "--frames", "4", "--height", "8",
                    "--width", "8", "--speeds", "0,2", "--seed", "1"]) == EXIT_OK
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": MICRO.to_dict(), "train": {"batch_size": 2, "num_coords": 4, "lr": 1e-3},
                               "seed": 5}))
    return tmp_path, data, cfg


def _train(ws, run="run", *extra):
    tmp, data, cfg = ws
    return run_cli(["train", "--config", str(cfg), "--data", str(data), "--run-dir", str(tmp / run),
                    "--steps", "3", *extra])


def test_gen_data_writes_clips_and_index(workspace):
    _, data, _ = workspace
    files = sorted(p.name for p in data.iterdir())
    assert files == ["clip_00000.cvid", "clip_00001.cvid", "clip_00002.cvid", "index.json"]
    assert io.read_cvid(data / "clip_00001.cvid").shape == (4, 8, 8, 3)
    assert json.loads((data / "index.json").read_text())["speeds"] == [0.0, 2.0, 0.0]


def test_train_encode_decode_eval_pipeline(workspace):
    tmp, data, cfg = workspace
    assert _train(workspace) == EXIT_OK
    run = tmp / "run"
    log = [json.loads(line) for line in (run / "log.ndjson").read_text().splitlines()]
    assert [r["step"] for r in log] == [1, 2, 3]
    assert {"step", "phase", "l2", "perceptual", "peak_elems", "ms"} <= set(log[0])
    meta = json.loads((run / "config.json").read_text())
    assert meta["seed"] == 5 and meta["format_versions"] == {"cvid": 1, "ctck": 1, "ctok": 1}
    ck = run / "checkpoint.ctck"

    tok = tmp / "a.ctok"
    assert run_cli(["encode", "--checkpoint", str(ck), "--input", str(data / "clip_00000.cvid"),
                    "--output", str(tok)]) == EXIT_OK
    assert len(tok.read_bytes()) == 24 + io.token_payload_bytes(2, 2, 2, 2)
    out = tmp / "a.cvid"
    assert run_cli(["decode", "--checkpoint", str(ck), "--input", str(tok), "--output", str(out)]) == EXIT_OK
    assert io.read_cvid(out).shape == (4, 8, 8, 3)
    assert run_cli(["decode", "--checkpoint", str(ck), "--input", str(tok), "--output", str(tmp / "b.cvid"),
                    "--chunk", "5"]) == EXIT_OK

    # eval needs 11x11 frames for SSIM; MICRO clips are 8x8, so a clear typed failure is expected
    assert run_cli(["eval", "--checkpoint", str(ck), "--data", str(data), "--output", str(tmp / "m.csv")]) != EXIT_OK


def test_eval_writes_csv(tmp_path):
    # SSIM needs frames of at least 11x11
    cfg = MICRO.replace(height=12, width=12, plane_h=4, plane_w=4)
    data = tmp_path / "d"
    assert run_cli(["gen-data", "--out", str(data), "--count", "2", "--frames", "4", "--height", "12",
                    "--width", "12"]) == EXIT_OK
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"model": cfg.to_dict(), "train": {"batch_size": 1, "num_coords": 3}}))
    assert run_cli(["train", "--config", str(conf), "--data", str(data), "--run-dir", str(tmp_path / "r"),
                    "--steps", "1"]) == EXIT_OK
    out = tmp_path / "m.csv"
    assert run_cli(["eval", "--checkpoint", str(tmp_path / "r" / "checkpoint.ctck"), "--data", str(data),
                    "--output", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["id", "psnr", "ssim", "dynamics", "frequency"]
    assert [r[0] for r in rows[1:]] == ["clip_00000", "clip_00001", "mean"]


def test_resume_continues_from_saved_step(workspace):
    tmp, data, cfg = workspace
    assert _train(workspace, "a") == EXIT_OK
    assert run_cli(["train", "--config", str(cfg), "--data", str(data), "--run-dir", str(tmp / "b"),
                    "--steps", "2", "--resume", str(tmp / "a" / "checkpoint.ctck")]) == EXIT_OK
    log = [json.loads(line) for line in (tmp / "b" / "log.ndjson").read_text().splitlines()]
    assert [r["step"] for r in log] == [4, 5]


def test_finetune_runs(workspace):
    tmp, data, cfg = workspace
    assert _train(workspace) == EXIT_OK
    assert run_cli(["finetune", "--config", str(cfg), "--data", str(data), "--run-dir", str(tmp / "ft"),
                    "--checkpoint", str(tmp / "run" / "checkpoint.ctck"), "--steps", "2"]) == EXIT_OK
    log = [json.loads(line) for line in (tmp / "ft" / "log.ndjson").read_text().splitlines()]
    assert all(r["phase"] == "finetune" and r["perceptual"] > 0 for r in log)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workspace, tmp_path):
    tmp, data, cfg = workspace
    assert run_cli(["train", "--preset", "nope", "--data", str(data), "--run-dir", str(tmp / "x")]) == EXIT_CONFIG
    assert run_cli(["train", "--config", str(cfg), "--data", str(data), "--run-dir", str(tmp / "x"),
                    "--steps", "0"]) == EXIT_CONFIG
    assert run_cli(["frobnicate"]) == EXIT_CONFIG
    # tiny preset expects 16x32x32 clips
    assert run_cli(["train", "--data", str(data), "--run-dir", str(tmp / "x"), "--steps", "1"]) == EXIT_CONFIG
    assert run_cli(["encode", "--checkpoint", str(tmp / "missing.ctck"), "--input", "a", "--output", "b"]) == EXIT_IO
    bad = tmp / "bad.ctck"
    bad.write_bytes(b"CTCK\x01\x00")
    assert run_cli(["encode", "--checkpoint", str(bad), "--input", "a", "--output", "b"]) == EXIT_IO
    assert run_cli(["train", "--config", str(cfg), "--data", str(data), "--run-dir", str(tmp / "x"),
                    "--steps", "5", "--lr", "1e30"]) == EXIT_DIVERGED


def test_bench_writes_csv(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"model": MICRO.to_dict(), "train": {"num_coords": 4}}))
    out = tmp_path / "bench.csv"
    assert run_cli(["bench", "--config", str(conf), "--frames", "4,8", "--budget", "1e6",
                    "--output", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4
    assert {r["mode"] for r in rows} == {"random-patch", "full-frame"}
    assert all(int(r["max_batch"]) >= 0 and int(r["peak_live_elements"]) > 0 for r in rows)
    assert run_cli(["bench", "--config", str(conf), "--frames", "3", "--output", str(out)]) == EXIT_CONFIG


def test_ablation_rejects_fractional_frames(tmp_path):
    assert run_cli(["ablate-sampling", "--ratio", "0.01", "--output", str(tmp_path / "a.csv")]) == EXIT_CONFIG


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "triplanetok", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
