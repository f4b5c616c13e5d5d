"""Command-line entry point.

Subcommands: ``summary`` (complexity report), ``verify`` (invariant suite),
``gen-data`` (synthetic samples), ``train-toy`` (overfit harness), ``eval``
(metrics on saved samples). All are deterministic under ``--seed``.

Precedence: built-in defaults, then command-line flags, then the ``--config``
file (the file wins where both specify a field). Exit codes: 0 success,
1 validation or check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("CIT_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()  # before numpy loads anywhere in the package


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citnet", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON model config (overrides flags)")
        p.add_argument("--variant", choices=["T", "B", "micro"], default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, default=None, help="output file or directory")

    p_sum = sub.add_parser("summary", help="parameter/FLOP report vs published targets")
    common(p_sum)

    p_ver = sub.add_parser("verify", help="run named invariant checks")
    common(p_ver)
    p_ver.add_argument("--level", choices=["fast", "full"], default="fast")

    p_gen = sub.add_parser("gen-data", help="write synthetic segmentation samples")
    common(p_gen)
    p_gen.add_argument("--n", type=int, default=8)
    p_gen.add_argument("--size", type=int, default=56)

    p_train = sub.add_parser("train-toy", help="overfit a micro model on synthetic data")
    common(p_train)
    p_train.add_argument("--steps", type=int, default=300)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--n", type=int, default=4)
    p_train.add_argument("--size", type=int, default=56)
    p_train.add_argument("--data", type=Path, default=None,
                         help="sample directory (generated from --seed when omitted)")

    p_eval = sub.add_parser("eval", help="compute metrics for a trained model")
    common(p_eval)
    p_eval.add_argument("--model", type=Path, required=True, help="checkpoint directory")
    p_eval.add_argument("--data", type=Path, required=True, help="sample directory")
    return parser


def _resolve_config(args, default_variant="T", **micro_overrides):
    from .config import load_config, micro_config, variant_config

    if args.config is not None:
        return load_config(args.config)
    variant = args.variant or default_variant
    if variant == "micro":
        return micro_config(**micro_overrides)
    return variant_config(variant)


def _write_json(path: Path, payload: dict) -> None:
    from .config import canonical_dumps

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_dumps(payload))


def cmd_summary(args) -> int:
    from .analysis import summarize

    cfg = _resolve_config(args)
    report = summarize(cfg, seed=args.seed)
    print(report.render())
    if args.out:
        out = args.out / "report.json" if args.out.suffix == "" else args.out
        _write_json(out, report.to_dict())
        print(f"report written to {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(level=args.level, seed=args.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"[{status}] {r.name}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed (level={args.level})")
    return 0 if failed == 0 else 1


def cmd_gen_data(args) -> int:
    from .synth import gen_synthetic, save_samples

    if args.out is None:
        print("gen-data requires --out DIRECTORY", file=sys.stderr)
        return 2
    samples = gen_synthetic(seed=args.seed, n=args.n, size=args.size)
    save_samples(args.out, samples)
    print(f"wrote {len(samples)} samples ({args.size}x{args.size}) to {args.out}")
    return 0


def cmd_train_toy(args) -> int:
    import numpy as np

    from . import io as cio
    from .config import canonical_dumps
    from .model import build_model
    from .synth import gen_synthetic, load_samples
    from .train import evaluate, train_toy
    from dataclasses import asdict

    if args.data is not None:
        samples = load_samples(args.data)
        size = samples[0].image.shape[-1]
    else:
        size = args.size
        samples = gen_synthetic(seed=args.seed, n=args.n, size=size)
    cfg = _resolve_config(args, default_variant="micro", image_size=size, base_dim=32)
    model = build_model(cfg, seed=args.seed)
    history = train_toy(model, samples, steps=args.steps, lr=args.lr)
    final_dice = history.dice[-1] if history.dice else float("nan")
    print(f"trained {args.steps} steps; final loss {history.loss[-1]:.4f}, "
          f"train dice {final_dice:.4f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_json(args.out / "history.json", history.to_dict())
        _write_json(args.out / "config.json", asdict(cfg))
        cio.save_checkpoint(args.out / "checkpoint", model.state_dict())
        metrics = evaluate(model, samples)
        _write_json(args.out / "metrics.json", metrics.to_dict())
        print(f"history, config, metrics, and checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from . import io as cio
    from .config import config_from_dict
    from .model import build_model
    from .synth import load_samples
    from .tensor import Tensor
    from .train import evaluate

    cfg_path = args.model / "config.json"
    if args.config is not None:
        cfg = _resolve_config(args)
    elif cfg_path.exists():
        cfg = config_from_dict(json.loads(cfg_path.read_text()))
    else:
        print(f"no config found at {cfg_path}; pass --config", file=sys.stderr)
        return 1
    model = build_model(cfg, seed=args.seed)
    state = cio.load_checkpoint(args.model / "checkpoint")
    model.load_state_dict({k: Tensor(v) for k, v in state.items()})
    samples = load_samples(args.data)
    report = evaluate(model, samples)
    means = report.to_dict()["mean"]
    print("  ".join(f"{k}={v:.4f}" for k, v in means.items()))
    if args.out:
        out = args.out / "metrics.json" if args.out.suffix == "" else args.out
        _write_json(out, report.to_dict())
        print(f"metrics written to {out}")
    return 0


COMMANDS = {
    "summary": cmd_summary,
    "verify": cmd_verify,
    "gen-data": cmd_gen_data,
    "train-toy": cmd_train_toy,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import CitnetError

    try:
        return COMMANDS[args.command](args)
    except CitnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
