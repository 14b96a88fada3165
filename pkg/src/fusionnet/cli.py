"""Command-line entry point.

Exit codes: 0 success, 1 a check failed (gradcheck) or training diverged,
2 usage error (bad flags, missing or malformed inputs).
"""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import CheckpointError
from .data import DataError

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2
CONFIG_KEYS = {"data", "out", "model", "train"}


class UsageError(Exception):
    pass


def _limit_threads():
    n = os.environ.get("FUSIONNET_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def _read_json(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: invalid JSON ({err})") from err


def _write_outputs(out_dir, produced, command, echo):
    from .data import write_json
    write_json(os.path.join(out_dir, "config_echo.json"), {"command": command, "args": echo})
    write_json(os.path.join(out_dir, "run_meta.json"), {"version": __version__, "timestamp": time.time()})
    produced = sorted(set(produced) | {"config_echo.json", "run_meta.json", "outputs.json"})
    write_json(os.path.join(out_dir, "outputs.json"), {"files": produced})


def cmd_synth(args):
    from .data import synth_generate
    os.makedirs(args.out, exist_ok=True)
    manifest, _ = synth_generate(args.cement, args.landcover, args.band, args.size, args.seed,
                                 args.preset, args.out, args.repetitions)
    produced = [r["path"] for r in manifest["chips"]] + ["manifest.json", "masks.npy"]
    echo = {k: v for k, v in vars(args).items() if k != "func"}
    _write_outputs(args.out, produced, "synth", echo)
    print(f"wrote {len(manifest['chips'])} chips and manifest.json to {args.out}")
    if not manifest["splits"]:
        print("note: fewer than 5 chips in a class, so no train/val/test splits were written")
    return EXIT_OK


def _load_train_config(path):
    from .models import normalise_model_spec
    from .train import TrainConfig
    cfg = _read_json(path)
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)} (allowed: {sorted(CONFIG_KEYS)})")
    if "data" not in cfg or "model" not in cfg:
        raise UsageError("config needs 'data' (manifest path) and 'model' (ModelSpec)")
    base = os.path.dirname(os.path.abspath(path))
    data = os.path.join(base, cfg["data"])
    out = os.path.join(base, cfg.get("out", "run"))
    try:
        model_spec = normalise_model_spec(cfg["model"])
        train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    except (ValueError, TypeError) as err:
        raise UsageError(str(err)) from err
    return data, out, model_spec, train_cfg


def cmd_train(args):
    from .data import Split, load_dataset, write_json
    from .metrics import mean_over_splits
    from .models import model_bands
    from .train import TrainingDiverged, evaluate_model, save_run, train
    data, out, model_spec, cfg = _load_train_config(args.config)
    if args.out:
        out = args.out
    if not os.path.isfile(data):
        raise UsageError(f"no such manifest: {data}")
    bands = model_bands(model_spec)
    dataset, manifest = load_dataset(data, bands)
    splits = {s["repetition"]: Split.from_dict(s) for s in manifest["splits"]}
    os.makedirs(out, exist_ok=True)
    produced, runs = [], []
    for rep, seed in zip(range(1, cfg.repetitions + 1), cfg.seeds):
        if rep not in splits:
            raise UsageError(f"manifest has no split for repetition {rep}")
        split = splits[rep]
        rep_dir = os.path.join(out, f"rep{rep}")
        try:
            result = train(model_spec, dataset, split, cfg, seed=seed,
                           log=(lambda r: print(json.dumps(r), flush=True)) if args.verbose else None)
        except TrainingDiverged as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CHECK
        save_run(result, rep_dir, cfg, seed, {"repetition": rep, "manifest": os.path.abspath(data)})
        metrics, _ = evaluate_model(result.model, dataset, split.test, bands, result.norm)
        rec = {"repetition": rep, "seed": seed, "test": metrics.to_dict()}
        write_json(os.path.join(rep_dir, "metrics.json"), rec)
        runs.append(rec)
        produced += [f"rep{rep}/{f}" for f in ("checkpoint.fckp", "history.jsonl", "metrics.json")]
        print(f"repetition {rep}: test accuracy {metrics.accuracy:.4f}")
    summary = {"runs": runs, "config": cfg.to_dict(), "model": model_spec}
    if len(runs) >= 2:
        mean, sd = mean_over_splits([r["test"]["accuracy"] for r in runs])
        summary["accuracy_mean"], summary["accuracy_sd"] = float(mean), float(sd)
    write_json(os.path.join(out, "metrics.json"), summary)
    _write_outputs(out, produced + ["metrics.json"], "train", {"config": os.path.abspath(args.config)})
    return EXIT_OK


def _parse_counts(text):
    try:
        vals = [int(v) for v in text.replace(";", ",").split(",")]
    except ValueError as err:
        raise UsageError(f"--counts needs four integers, got {text!r}") from err
    if len(vals) != 4 or min(vals) < 0:
        raise UsageError(f"--counts needs four non-negative integers, got {text!r}")
    return np.array(vals).reshape(2, 2)


def cmd_eval(args):
    from .checkpoint import read_checkpoint
    from .data import Split, load_dataset
    from .metrics import metrics_from_counts
    from .train import evaluate
    if args.counts:
        metrics = metrics_from_counts(_parse_counts(args.counts))
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint (or --counts)")
        if not os.path.isfile(args.checkpoint):
            raise UsageError(f"no such checkpoint: {args.checkpoint}")
        header, _ = read_checkpoint(args.checkpoint)
        data = args.data or header["meta"].get("manifest")
        if not data or not os.path.isfile(data):
            raise UsageError("eval needs --data pointing at a dataset manifest")
        rep = args.repetition or header["meta"].get("repetition", 1)
        from .models import model_bands
        dataset, manifest = load_dataset(data, model_bands(header["model_spec"]))
        splits = {s["repetition"]: Split.from_dict(s) for s in manifest["splits"]}
        if rep not in splits:
            raise UsageError(f"manifest has no split for repetition {rep}")
        idx = getattr(splits[rep], args.split)
        metrics = evaluate(args.checkpoint, dataset, idx)
    text = json.dumps(metrics.to_dict(), indent=1, sort_keys=True)
    print(text)
    if args.out:
        from .data import write_json
        write_json(args.out, metrics.to_dict())
    return EXIT_OK


def cmd_ablate(args):
    from .ablation import AblationSuite, format_table, run_ablation
    from .data import write_json
    try:
        suite = AblationSuite.from_dict(_read_json(args.suite))
    except (ValueError, TypeError) as err:
        raise UsageError(str(err)) from err
    result = run_ablation(suite, log=(lambda c: print(json.dumps(c), flush=True)) if args.verbose else None)
    table = format_table(result)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "ablation.json"), result)
        with open(os.path.join(args.out, "ablation.md"), "w") as fh:
            fh.write(table + "\n")
        _write_outputs(args.out, ["ablation.json", "ablation.md"], "ablate", {"suite": os.path.abspath(args.suite)})
    return EXIT_OK


def cmd_cam(args):
    from .cam import CAMUndefined, cam, write_pgm16
    from .checkpoint import load_checkpoint
    from .data import Chip
    from .train import normalise
    for p in (args.checkpoint, args.chip):
        if not os.path.isfile(p):
            raise UsageError(f"no such file: {p}")
    model, header = load_checkpoint(args.checkpoint)
    chip = Chip.load(args.chip)
    norm = header["meta"]["input_norm"]
    if chip.band_id not in norm:
        raise UsageError(f"checkpoint was trained on {sorted(norm)}, chip is {chip.band_id}")
    x = normalise(chip.pixels[None], norm[chip.band_id])[0]
    try:
        heat, cls = cam(model, x)
    except CAMUndefined as err:
        raise UsageError(str(err)) from err
    out = args.out or os.path.splitext(args.chip)[0] + "_cam.pgm"
    write_pgm16(out, heat)
    print(f"class {cls}: wrote {out} and {out}.f32")
    return EXIT_OK


def cmd_gradcheck(args):
    from . import gradcheck
    t0 = time.time()
    try:
        results = gradcheck.run(args.module, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from err
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.time() - t0:.1f}s")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fusionnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic chips and a manifest")
    s.add_argument("--cement", type=int, required=True)
    s.add_argument("--landcover", type=int, required=True)
    s.add_argument("--band", choices=["b11", "b10", "b7", "b6", "b76", "all"], default="b76")
    s.add_argument("--size", type=int, choices=[32, 256], default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--preset", choices=["separable", "hard"], default="separable")
    s.add_argument("--repetitions", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="metrics for a checkpoint on a split, or from confusion counts")
    s.add_argument("--checkpoint")
    s.add_argument("--split", choices=["train", "val", "test"], default="test")
    s.add_argument("--data")
    s.add_argument("--repetition", type=int)
    s.add_argument("--counts", help="confusion counts TP_c,FN_c,FP_c,TN_c (cement row first)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run an ablation suite")
    s.add_argument("--suite", required=True)
    s.add_argument("--out")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("cam", help="class activation map of one chip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--chip", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cam)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--module", nargs="+", default=["all"],
                   choices=["all", "primitives", "gabor", "mixpool", "dilated", "attention", "models"])
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = _limit_threads()
    try:
        return args.func(args)
    except (UsageError, DataError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
