"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or input data, 3 I/O or file-format failure,
4 numerical divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import glob
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import diffcore as dc
from . import io as fio
from .config import ConfigError, ModelConfig, TrainConfig, preset
from .data import DataError, sprite_corpus
from .diffcore import NonFiniteGradientError
from .metrics import MetricError
from .train import DivergenceError, TrainState, deterministic_mode, fit

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything a run needs: model, optimisation, data and seeding."""

    model: ModelConfig
    train: TrainConfig
    data: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    deterministic: bool = True

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(), "data": self.data,
                "seed": self.seed, "deterministic": self.deterministic}


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: {e}") from None
    if not isinstance(blob, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(blob) - {"preset", "model", "train", "data", "seed", "deterministic"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return blob


def build_run_config(args: argparse.Namespace, phase: str = "main") -> RunConfig:
    """Merge config file and flags, then validate everything up front."""
    blob = _load_json(getattr(args, "config", None))
    name = getattr(args, "preset", None) or blob.get("preset", "tiny")
    model = preset(name)
    if blob.get("model"):
        model = ModelConfig.from_dict({**model.to_dict(), **blob["model"]})
    tdict = dict(blob.get("train", {}))
    tdict["phase"] = phase
    for flag, key in (("steps", "steps"), ("batch_size", "batch_size"), ("lr", "lr"),
                      ("num_coords", "num_coords"), ("n_frames", "n_frames"), ("sampler", "sampler"),
                      ("perceptual_weight", "perceptual_weight")):
        val = getattr(args, flag, None)
        if val is not None:
            tdict[key] = val
    seed = args.seed if getattr(args, "seed", None) is not None else int(blob.get("seed", tdict.get("seed", 0)))
    tdict["seed"] = seed
    det = blob.get("deterministic", True)
    if getattr(args, "deterministic", None) is not None:
        det = args.deterministic
    tdict["deterministic"] = bool(det)
    if phase == "finetune" and getattr(args, "steps", None) is None and "steps" not in blob.get("train", {}):
        tdict["steps"] = 500
    train = TrainConfig.from_dict(tdict)
    data = dict(blob.get("data", {}))
    return RunConfig(model=model, train=train, data=data, seed=seed, deterministic=bool(det))


def _run_context(rc: RunConfig):
    return deterministic_mode() if rc.deterministic else contextlib.nullcontext()


def _prepare_run_dir(path: str, rc: RunConfig, command: str, extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {
        **rc.to_dict(),
        "command": command,
        "format_versions": fio.FORMAT_VERSIONS,
        "kernel_backend": dc.backend_name(),
        "package_version": __version__,
    }
    if extra:
        meta.update(extra)
    fio.atomic_write(os.path.join(path, "config.json"), json.dumps(meta, indent=2, sort_keys=True).encode())


def load_clips(path: str) -> tuple[list[np.ndarray], list[str]]:
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.cvid")))
    else:
        files = [path]
    if not files:
        raise DataError(f"no .cvid clips under {path}")
    return [fio.read_cvid(f) for f in files], [os.path.splitext(os.path.basename(f))[0] for f in files]


def _check_clips(clips: Sequence[np.ndarray], m: ModelConfig) -> None:
    for v in clips:
        if v.shape[1:] != (m.height, m.width, m.channels) or v.shape[0] < m.frames:
            raise DataError(f"clip shape {v.shape} does not fit model input "
                            f"{(m.frames, m.height, m.width, m.channels)}")


# ---------------------------------------------------------------------------
# subcommands


def _train_common(args, phase: str) -> int:
    rc = build_run_config(args, phase)
    ckpt = None
    if phase == "finetune" or args.resume:
        ckpt = fio.load_checkpoint(args.checkpoint if phase == "finetune" and not args.resume else args.resume)
        rc.model = ckpt.model
    clips, _ = load_clips(args.data)
    _check_clips(clips, rc.model)
    from .model import init_params

    if ckpt is not None:
        params = ckpt.params
        state = ckpt.train_state() if (args.resume or phase == "finetune") else None
        if state is None:
            state = TrainState.fresh(rc.train)
        state.seed = rc.seed
        state.opt.lr = rc.train.lr
    else:
        params = init_params(rc.model, rc.seed)
        state = TrainState.fresh(rc.train)
    _prepare_run_dir(args.run_dir, rc, phase, {"start_step": state.step})
    log_path = os.path.join(args.run_dir, "log.ndjson")
    out_ckpt = os.path.join(args.run_dir, "checkpoint.ctck")
    every = max(1, rc.train.log_every)
    with open(log_path, "a") as log, _run_context(rc):
        def on_step(res):
            if res.step % every == 0:
                log.write(json.dumps(res.record()) + "\n")
                log.flush()
            if args.save_every and res.step % args.save_every == 0:
                fio.save_checkpoint(out_ckpt, params, rc.model, rc.train, state)

        fit(clips, params, state, rc.train, rc.model, on_step=on_step)
    fio.save_checkpoint(out_ckpt, params, rc.model, rc.train, state)
    print(f"{phase}: {rc.train.steps} steps, last loss {state.last_loss:.6g}; checkpoint {out_ckpt}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _train_common(args, "main")


def cmd_finetune(args) -> int:
    return _train_common(args, "finetune")


def cmd_encode(args) -> int:
    from .model import tokenize
    ck = fio.load_checkpoint(args.checkpoint)
    v = fio.read_cvid(args.input)
    _check_clips([v], ck.model)
    with dc.no_grad():
        z = tokenize(v[:ck.model.frames], ck.params, ck.model)
    fio.write_tokens(args.output, z)
    print(f"encoded {args.input} -> {args.output} ({z.token_count} tokens)")
    return EXIT_OK


def cmd_decode(args) -> int:
    from .model import reconstruct_full
    ck = fio.load_checkpoint(args.checkpoint)
    z = fio.read_tokens(args.input, ck.model)
    chunk = "all" if args.chunk in (None, "all") else int(args.chunk)
    rec = reconstruct_full(z, ck.params, ck.model, chunk=chunk)[0]
    fio.write_cvid(args.output, np.clip(rec, 0.0, 1.0))
    print(f"decoded {args.input} -> {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MetricReport
    from .model import reconstruct_full, tokenize
    ck = fio.load_checkpoint(args.checkpoint)
    clips, names = load_clips(args.data)
    _check_clips(clips, ck.model)
    rep = MetricReport()
    for name, v in zip(names, clips):
        v = v[:ck.model.frames]
        with dc.no_grad():
            z = tokenize(v, ck.params, ck.model)
        rec = np.clip(reconstruct_full(z, ck.params, ck.model)[0], 0.0, 1.0)
        rep.add(name, v, rec)
    rep.write_csv(args.output)
    m = rep.means()
    print(f"eval: {rep.count} clips, PSNR {m['psnr']:.3f} dB, SSIM {m['ssim']:.4f} -> {args.output}")
    return EXIT_OK


def _int_list(s: str) -> list[int]:
    try:
        out = [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None
    if not out:
        raise ConfigError("empty list")
    return out


def _float_list(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {s!r}") from None


def cmd_bench(args) -> int:
    from .bench import bench_cells, write_bench_csv
    rc = build_run_config(args)
    frames = _int_list(args.frames)
    if args.budget <= 0:
        raise ConfigError("budget must be positive")
    for T in frames:
        rc.model.replace(frames=T)  # validates divisibility before any compute
    with _run_context(rc):
        cells = bench_cells(rc.model, frames, args.budget, num_coords=rc.train.num_coords, seed=rc.seed,
                            on_cell=lambda c: print(f"T={c.frames:<4d} {c.mode:<13s} peak={c.peak_live_elements:>12d} "
                                                    f"dec_peak={c.dec_peak_live_elements:>11d} max_batch={c.max_batch}"))
    write_bench_csv(args.output, cells)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    speeds = _float_list(args.speeds)
    if args.count < 1:
        raise ConfigError("count must be positive")
    clips, used = sprite_corpus(args.count, args.frames, args.height, args.width, speeds, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, v in enumerate(clips):
        fio.write_cvid(os.path.join(args.out, f"clip_{i:05d}.cvid"), v)
    index = {"count": args.count, "frames": args.frames, "height": args.height, "width": args.width,
             "seed": args.seed, "speeds": used, "format_versions": fio.FORMAT_VERSIONS}
    fio.atomic_write(os.path.join(args.out, "index.json"), json.dumps(index, indent=2).encode())
    print(f"wrote {args.count} clips to {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    import csv
    from .experiments import ABLATION_MODEL, coords_for_ratio, sampling_ablation
    seeds = _int_list(args.seeds)
    coords_for_ratio(ABLATION_MODEL, args.ratio)
    if args.steps < 1 or args.clips < 1:
        raise ConfigError("steps and clips must be positive")
    rows = []
    wins = 0
    with deterministic_mode():
        for s in seeds:
            runs = sampling_ablation(s, steps=args.steps, ratio=args.ratio, n_train=args.clips,
                                     eval_every=args.eval_every)
            for r in runs.values():
                rows += [(s, r.sampler, st, h) for st, h in zip(r.steps, r.heldout)]
            win = runs["patch"].final < runs["frame"].final
            wins += win
            print(f"seed {s}: random-patch {runs['patch'].final:.6f}  random-frame {runs['frame'].final:.6f}"
                  f"  {'patch wins' if win else 'frame wins'}")
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "sampler", "step", "heldout_l2"])
        w.writerows(rows)
    print(f"random-patch lower in {wins}/{len(seeds)} seeds -> {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", help="model preset (tiny, S, B, L)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--num-coords", type=int)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--sampler", choices=["patch", "frame"])
    p.add_argument("--perceptual-weight", type=float)
    p.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="triplanetok", description="Triplane video tokenizer toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("train", cmd_train, "main-phase training on random patch coordinates"),
                               ("finetune", cmd_finetune, "frame-sampled fine-tuning from a checkpoint")):
        p = sub.add_parser(name, help=helptext)
        _add_train_flags(p)
        p.add_argument("--data", required=True, help="directory of .cvid clips (or one file)")
        p.add_argument("--run-dir", required=True)
        p.add_argument("--resume", help="checkpoint whose state is continued")
        p.add_argument("--save-every", type=int, default=0)
        if name == "finetune":
            p.add_argument("--checkpoint", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("encode", help="CVID clip -> CTOK tokens")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="CTOK tokens -> CVID clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--chunk", default="all", help="patches decoded per pass, or 'all'")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="PSNR/SSIM/dynamics/frequency CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="peak memory and max-feasible batch per clip length")
    _add_train_flags(p)
    p.add_argument("--frames", default="16,32,64")
    p.add_argument("--budget", type=float, default=5e7, help="element budget")
    p.add_argument("--output", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="write a synthetic sprite corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--speeds", default="0,1,2,4")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ablate-sampling", help="random-patch vs random-frame held-out loss")
    p.add_argument("--ratio", type=float, default=0.03125)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--output", default="ablation.csv")
    p.set_defaults(func=cmd_ablate)
    return ap


def run_cli(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (ConfigError, DataError, MetricError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (fio.FormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, NonFiniteGradientError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
