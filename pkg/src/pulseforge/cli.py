"""Command-line entry point: synth, train, infer, baseline, eval, bench.

Every command writes its outputs plus ``config.json`` (the fully resolved
run configuration) into ``--out`` and prints a JSON summary on stdout.
Exit codes: 0 success, 1 usage error, 2 data or validation error (with a
JSON error object on stderr).
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .baselines import METHODS as BASELINE_METHODS
from .bench import BENCH_METHODS, bench
from .conv_model import EfficientPhysC
from .dataio import ClipManifest, load_clip, store_clip
from .errors import TrainingDiverged
from .inference import (
    baseline_hr, baseline_trace, evaluate, load_model, model_hr, predict_trace, require_variation,
)
from .signals import PulseTrace, bandpass, hr_fft
from .synth import CorpusSpec, SynthParams, gen_clip
from .train import TrainConfig, fit

log = logging.getLogger("pulseforge")

DEFAULTS = {
    "seed": 0,
    "out": None,
    "synth": {"n_clips": 200, "duration_s": 10.0, "size": 36, "clean": False,
              "split": [0.8, 0.1, 0.1], "hr_range": [48.0, 144.0]},
    "train": {"model": "conv", "lr": None, "epochs": 5, "batch_size": 4, "weight_decay": 0.01,
              "loss": None, "stride": None, "model_options": {}},
    "eval": {"split": "test", "methods": ["pos", "chrom", "ica"], "region": "full"},
    "bench": {"methods": list(BENCH_METHODS), "trials": 10, "duration_s": 10.0, "size": 36, "pin": True},
}
NEURAL = ("conv", "t1", "t2")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_config(path: str | None, overrides: dict) -> dict:
    """Defaults, then the JSON file, then command-line overrides. Unknown keys raise ValueError."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        user = json.loads(Path(path).read_text())
        if not isinstance(user, dict):
            raise ValueError("config must be a JSON object")
        for key, val in user.items():
            if key not in cfg:
                raise ValueError(f"unknown config key {key!r}")
            if isinstance(cfg[key], dict):
                if not isinstance(val, dict):
                    raise ValueError(f"config section {key!r} must be an object")
                for sub in val:
                    if sub not in cfg[key]:
                        raise ValueError(f"unknown config key {key}.{sub}")
                cfg[key].update(val)
            else:
                cfg[key] = val
    for dotted, val in overrides.items():
        if val is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = val
    return cfg


def _prepare_out(out: str | None, force: bool) -> Path:
    if not out:
        raise UsageError("--out is required")
    d = Path(out)
    if d.exists() and any(d.iterdir()) and not force:
        raise UsageError(f"output directory {d} is not empty; pass --force to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_config(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _corpus_spec(cfg: dict) -> CorpusSpec:
    s = cfg["synth"]
    return CorpusSpec(n_clips=int(s["n_clips"]), duration_s=float(s["duration_s"]), size=int(s["size"]),
                      clean=bool(s["clean"]), split=tuple(s["split"]), seed=int(cfg["seed"]),
                      hr_range=tuple(s["hr_range"]))


def _threads() -> int:
    raw = os.environ.get("PULSEFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"PULSEFORGE_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def cmd_synth(cfg: dict, out: Path) -> dict:
    spec = _corpus_spec(cfg)
    if spec.n_clips < 1:
        raise ValueError("n_clips must be >= 1")
    params = [spec.params(i) for i in range(spec.n_clips)]

    def make(i: int):
        item = gen_clip(params[i], clip_id=f"clip_{i:04d}")
        store_clip(out / "clips" / item.clip.clip_id, item)
        return item

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        items = list(pool.map(make, range(spec.n_clips)))
    manifest = ClipManifest(root=out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clip_id", "split", "hr_gt", "saturated", "noise_std", "motion", "shape"])
    for i, item in enumerate(items):
        split = spec.split_of(i)
        manifest.add(f"clips/{item.clip.clip_id}", item.hr_gt, split)
        p: SynthParams = params[i]
        w.writerow([item.clip.clip_id, split, f"{item.hr_gt:.4f}", int(item.saturated),
                    f"{p.noise_std:.4f}", p.motion, p.shape])
    manifest.save(out / "manifest.json")
    (out / "synth_log.csv").write_text(buf.getvalue())
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    return {"manifest": str(out / "manifest.json"), "clips": spec.n_clips, "splits": counts}


def _train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    return TrainConfig(seed=int(cfg["seed"]), **t)


def cmd_train(cfg: dict, out: Path, manifest_path: str) -> dict:
    manifest = ClipManifest.load(manifest_path)
    manifest.validate()
    tc = _train_config(cfg)
    cfg["train"].update(lr=tc.lr, loss=tc.loss)
    result = fit(tc, manifest)
    weights = result.model.to_weights()
    weights.meta["model"] = tc.model
    weights.save(out / "model.weights")
    (out / "train_log.csv").write_text(result.log_csv())
    last = result.log[-1]
    return {"weights": str(out / "model.weights"), "epochs": len(result.log),
            "final_train_loss": last["train_loss"], "final_val_mae": last["val_mae"]}


def _write_trace(out: Path, trace: PulseTrace) -> None:
    lines = ["index,value"] + [f"{i},{v:.8g}" for i, v in enumerate(trace.samples)]
    (out / "trace.csv").write_text("\n".join(lines) + "\n")


def cmd_infer(cfg: dict, out: Path, weights_path: str, clip_dir: str) -> dict:
    model = load_model(weights_path)
    item = load_clip(clip_dir)
    require_variation(item)
    trace = PulseTrace(predict_trace(model, item.clip.frames), item.fps, "derivative")
    _write_trace(out, trace)
    hr = hr_fft(bandpass(trace))
    result = {"clip_id": item.clip.clip_id, "hr_bpm": round(hr, 4), "trace": str(out / "trace.csv")}
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def cmd_baseline(cfg: dict, out: Path, method: str, clip_dir: str) -> dict:
    if method not in BASELINE_METHODS:
        raise UsageError(f"unknown baseline {method!r}; expected one of {sorted(BASELINE_METHODS)}")
    item = load_clip(clip_dir)
    trace = baseline_trace(method, item, cfg["eval"]["region"], seed=int(cfg["seed"]))
    _write_trace(out, trace)
    hr = hr_fft(bandpass(trace))
    result = {"clip_id": item.clip.clip_id, "method": method, "hr_bpm": round(hr, 4),
              "trace": str(out / "trace.csv")}
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def _model_kind(model) -> str:
    if isinstance(model, EfficientPhysC):
        return "conv"
    return "t1" if len(model.config.depths) == 4 else "t2"


def cmd_eval(cfg: dict, out: Path, manifest_path: str, weights: list[str]) -> dict:
    e = cfg["eval"]
    methods = list(e["methods"])
    models = {}
    for wp in weights or []:
        m = load_model(wp)
        models[_model_kind(m)] = m
    fns = {}
    for name in methods:
        if name in BASELINE_METHODS:
            fns[name] = lambda item, name=name: baseline_hr(name, item, e["region"])
        elif name in NEURAL:
            if name not in models:
                raise UsageError(f"method {name!r} needs --weights for a {name} model")
            fns[name] = lambda item, m=models[name]: model_hr(m, item)
        else:
            raise UsageError(f"unknown method {name!r}")
    manifest = ClipManifest.load(manifest_path)
    clips = manifest.load_split(e["split"])
    if not clips:
        raise ValueError(f"split {e['split']!r} of {manifest_path} is empty")
    report = evaluate(clips, fns)
    (out / "eval.csv").write_text(report.to_csv())
    summary = report.aggregates()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"report": str(out / "eval.csv"), "clips": len(clips), "metrics": summary}


def cmd_bench(cfg: dict, out: Path) -> dict:
    b = cfg["bench"]
    for m in b["methods"]:
        if m not in BENCH_METHODS:
            raise UsageError(f"unknown bench method {m!r}; expected one of {BENCH_METHODS}")
    params = SynthParams(duration_s=float(b["duration_s"]), height=int(b["size"]), width=int(b["size"]),
                         noise_std=1.0, seed=int(cfg["seed"]))
    clip = gen_clip(params, "bench")
    report = bench(b["methods"], clip, trials=int(b["trials"]), seed=int(cfg["seed"]), pin=bool(b["pin"]))
    (out / "bench.txt").write_text(report.to_table())
    (out / "bench.csv").write_text(report.to_csv())
    sys.stderr.write(report.to_table())
    return {"table": str(out / "bench.txt"), "csv": str(out / "bench.csv"), **report.to_dict()}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pulseforge", description="Camera-based pulse estimation toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    s.add_argument("--clips", type=int, help="number of clips")

    t = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--model", choices=NEURAL)
    t.add_argument("--epochs", type=int)

    i = sub.add_parser("infer", parents=[common], help="run a trained model on one clip")
    i.add_argument("--weights", required=True)
    i.add_argument("--clip", required=True, help="clip directory")

    bl = sub.add_parser("baseline", parents=[common], help="run a classical method on one clip")
    bl.add_argument("--method", required=True)
    bl.add_argument("--clip", required=True, help="clip directory")

    e = sub.add_parser("eval", parents=[common], help="evaluate methods on a manifest split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--method", help="comma-separated methods, e.g. conv,pos,chrom,ica")
    e.add_argument("--weights", action="append", help="trained weights (repeatable)")
    e.add_argument("--split", choices=("train", "val", "test"))

    bn = sub.add_parser("bench", parents=[common], help="per-frame latency table")
    bn.add_argument("--method", help="comma-separated methods")
    bn.add_argument("--trials", type=int)
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _error("UsageError", exc, 1)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {"seed": args.seed, "out": args.out}
    cmd = args.command
    if cmd == "synth":
        overrides["synth.n_clips"] = args.clips
    elif cmd == "train":
        overrides["train.model"] = args.model
        overrides["train.epochs"] = args.epochs
    elif cmd == "eval":
        overrides["eval.methods"] = args.method.split(",") if args.method else None
        overrides["eval.split"] = args.split
    elif cmd == "bench":
        overrides["bench.methods"] = args.method.split(",") if args.method else None
        overrides["bench.trials"] = args.trials
    try:
        cfg = resolve_config(args.config, overrides)
        out = _prepare_out(cfg["out"], args.force)
        cfg["out"] = str(out)
        if cmd == "synth":
            result = cmd_synth(cfg, out)
        elif cmd == "train":
            result = cmd_train(cfg, out, args.manifest)
        elif cmd == "infer":
            result = cmd_infer(cfg, out, args.weights, args.clip)
        elif cmd == "baseline":
            result = cmd_baseline(cfg, out, args.method, args.clip)
        elif cmd == "eval":
            result = cmd_eval(cfg, out, args.manifest, args.weights)
        else:
            result = cmd_bench(cfg, out)
        _write_config(out, cfg)
    except UsageError as exc:
        return _error("UsageError", exc, 1)
    except TrainingDiverged as exc:
        return _error("TrainingDiverged", exc, 2)
    except (ValueError, OSError, KeyError, TypeError, RuntimeError) as exc:
        return _error(type(exc).__name__, exc, 2)
    print(json.dumps({"command": cmd, "result": result, "config": cfg}, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
