"""Command-line front end: analyze | prune | flops | eval | report.

Machine output goes to stdout or the named output files, human summaries
to stderr. Exit codes: 0 success, 2 input/validation error, 3 shape or
config mismatch, 1 internal error. Every run writes one manifest (for
``flops``, which has no output file, it is embedded in the stdout JSON).
Output files are written atomically and inputs are never mutated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .analysis import RedundancyReport, redundancy_report
from .archive import ArchiveError, read_archive, write_archive
from .engine import forward
from .flops import OpCounter, count_flops
from .model import ModelConfig, load_model, save_model
from .pruning import PruningPlan, apply_plan, build_plan
from .tcs import TcsPolicy
from .validation import ShapeError


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ShapeError as exc:
        _err(f"shape mismatch: {exc}")
        return 3
    except (ArchiveError, ValueError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        _err(f"invalid input: {exc}")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _err(f"internal error: {exc}")
        if getattr(args, "verbose", False):
            raise
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override every seeded choice in the run")
    common.add_argument("--verbose", action="store_true")

    p = sub.add_parser("analyze", parents=[common], help="layer-wise FFN redundancy report")
    p.add_argument("model_json")
    p.add_argument("weights")
    p.add_argument("calibration")
    p.add_argument("out_json")
    p.add_argument("--eps", type=float, default=1e-3, help="near-zero activation threshold")
    p.add_argument("--max-targets", type=int, default=32)
    p.add_argument("--predictors", type=int, default=32)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prune", parents=[common], help="build and apply a coupled head-dim pruning plan")
    p.add_argument("model_json")
    p.add_argument("weights")
    p.add_argument("out_weights")
    p.add_argument("out_plan")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--skip-first", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--scale-original", action="store_true", help="keep the unpruned attention scaling")
    p.add_argument("--config-out", default=None, help="path for the compressed config (default: <out>.model.json)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("flops", parents=[common], help="analytic multiply-accumulate report")
    p.add_argument("model_json")
    p.add_argument("--plan", default=None)
    p.add_argument("--policy", default=None)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("eval", parents=[common], help="run the forward pass over archived token batches")
    p.add_argument("model_json")
    p.add_argument("weights")
    p.add_argument("inputs")
    p.add_argument("out_weights")
    p.add_argument("--policy", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="convert a redundancy report to CSV")
    p.add_argument("report_json")
    p.add_argument("out_csv")
    p.set_defaults(func=cmd_report)

    return parser


def cmd_analyze(args) -> int:
    config = ModelConfig.load(args.model_json)
    model = load_model(config, args.weights)
    batches = _load_batches(config, args.calibration)
    seed = args.seed if args.seed is not None else 0
    report = redundancy_report(
        model,
        batches,
        eps=args.eps,
        max_targets=args.max_targets,
        num_predictors=args.predictors,
        seed=seed,
    )
    _atomic_text(args.out_json, json.dumps(report.to_dicts(), indent=2) + "\n")
    _write_manifest(args, inputs=[args.model_json, args.weights, args.calibration], outputs=[args.out_json])
    _err(f"analyze: {len(report.layers)} layers -> {args.out_json}")
    return 0


def cmd_prune(args) -> int:
    if not 0.0 <= args.ratio < 1.0:
        raise ValueError("ratio must be < 1 and >= 0")
    config = ModelConfig.load(args.model_json)
    model = load_model(config, args.weights)
    plan = build_plan(model, ratio=args.ratio, skip_first=args.skip_first)
    pruned = apply_plan(model, plan, scale_original=args.scale_original)

    config_out = args.config_out or _default_config_out(args.out_weights)
    save_model(pruned, args.out_weights)
    plan.save(args.out_plan)
    pruned.config.save(config_out)
    _write_manifest(
        args,
        inputs=[args.model_json, args.weights],
        outputs=[args.out_weights, args.out_plan, config_out],
    )
    kept = [lp.dk_prime for lp in plan.layers]
    _err(f"prune: ratio {args.ratio} -> per-layer head dims {kept}")
    return 0


def cmd_flops(args) -> int:
    config = ModelConfig.load(args.model_json)
    if args.plan is not None:
        plan = PruningPlan.load(args.plan)
        plan.validate(config.dense())
        config = ModelConfig.from_dict(
            {**config.to_dict(), "per_layer_head_dim": [lp.dk_prime for lp in plan.layers]}
        )
    ffn_keep = None
    if args.policy is not None:
        policy = TcsPolicy.load(args.policy)
        policy.bind(config)
        ffn_keep = policy.keep_counts(config)
    report = count_flops(config, ffn_keep)
    doc = report.to_dict()
    doc["run"] = _manifest_dict(args, inputs=[p for p in (args.model_json, args.plan, args.policy) if p], outputs=[])
    print(json.dumps(doc, indent=2))
    _err(f"flops: total {report.total / 1e9:.3f} GFLOPs, reduction {report.reduction_percent:.1f}%")
    return 0


def cmd_eval(args) -> int:
    config = ModelConfig.load(args.model_json)
    model = load_model(config, args.weights)
    batches = read_archive(args.inputs)
    if not batches:
        raise ValueError("inputs: archive holds no token batches")
    policy = None
    if args.policy is not None:
        policy = TcsPolicy.load(args.policy)
        if args.seed is not None:
            policy.seed = args.seed
        policy.bind(config)

    counter = OpCounter()
    outputs = []
    started = time.perf_counter()
    for name, batch in batches:
        _check_batch(config, name, batch)
        out, _ = forward(model, batch, tcs=policy, counter=counter)
        outputs.append((name, out))
    elapsed = time.perf_counter() - started

    write_archive(args.out_weights, outputs)
    _write_manifest(
        args,
        inputs=[p for p in (args.model_json, args.weights, args.inputs, args.policy) if p],
        outputs=[args.out_weights],
        extra={"op_counts": counter.to_dict(), "num_batches": len(batches)},
    )
    _err(
        f"eval: {len(batches)} batch(es) in {elapsed:.3f}s, "
        f"{counter.total} MACs counted -> {args.out_weights}"
    )
    return 0


def cmd_report(args) -> int:
    report = RedundancyReport.load(args.report_json)
    _atomic_text(args.out_csv, report.to_csv())
    _write_manifest(args, inputs=[args.report_json], outputs=[args.out_csv])
    _err(f"report: {len(report.layers)} rows -> {args.out_csv}")
    return 0


def _check_batch(config: ModelConfig, name: str, batch: np.ndarray) -> None:
    expected = (config.num_tokens, config.embed_dim)
    if batch.ndim != 2 or tuple(batch.shape) != expected:
        raise ShapeError(f"{name}: expected shape {expected}, got {tuple(batch.shape)}")


def _load_batches(config: ModelConfig, path) -> list[np.ndarray]:
    batches = []
    for name, batch in read_archive(path):
        _check_batch(config, name, batch)
        batches.append(batch)
    if not batches:
        raise ValueError(f"{path}: archive holds no token batches")
    return batches


def _manifest_dict(args, inputs, outputs, extra=None) -> dict:
    resolved = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and not k.startswith("_")
    }
    digest = hashlib.sha256(json.dumps(resolved, sort_keys=True, default=str).encode()).hexdigest()
    manifest = {
        "command": args.command,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": args.seed,
        "config_digest": digest,
    }
    if extra:
        manifest.update(extra)
    return manifest


def _write_manifest(args, inputs, outputs, extra=None) -> dict:
    manifest = _manifest_dict(args, inputs, outputs, extra)
    path = Path(str(outputs[0]) + ".manifest.json")
    _atomic_text(path, json.dumps(manifest, indent=2) + "\n")
    return manifest


def _default_config_out(out_weights) -> str:
    path = Path(out_weights)
    return str(path.with_name(path.stem + ".model.json"))


def _atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _err(message: str) -> None:
    print(message, file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
