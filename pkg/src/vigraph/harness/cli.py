"""Command-line entry point: ``vigraph <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..model import SgnMini, SgnMiniConfig
from ..synthdata import TASKS, SyntheticTask, generate, save_jsonl
from .ablation import PRESETS, get_preset, run_ablation
from .train import TrainConfig, train

log = logging.getLogger("vigraph")


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config)
    if args.out:
        config.output_dir = args.out
    metrics = train(config)
    last = metrics.rows[-1]
    print(f"epochs={len(metrics)} train_loss={last['train_loss']:.4f} val_acc={last['val_acc']:.4f}")
    if config.output_dir:
        print(f"wrote {config.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    preset = get_preset(args.preset, args.scale)
    start = time.perf_counter()
    report = run_ablation(preset, args.out, seeds=tuple(args.seeds), jobs=args.jobs)
    print(report.table())
    print(f"wrote {args.out} ({time.perf_counter() - start:.1f}s)")
    return 0


def cmd_dump_adjacency(args) -> int:
    model = SgnMini.load(args.checkpoint)
    text = json.dumps(model.export_adjacency(), indent=None)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_gen_data(args) -> int:
    task = SyntheticTask(args.task, args.T, args.feature_dim, args.noise, args.gap)
    data = generate(task, args.n, args.seed)
    save_jsonl(data, args.out)
    print(f"wrote {len(data)} samples to {args.out}")
    return 0


def run_oracle_suite(seed: int = 0) -> dict:
    """Partition classification, forward fidelity and end-to-end gradient checks."""
    from ..oracle import check_model_gradients, classify_edge, gradient_probe, naive_sgm_forward
    from ..partition import PartitionScheme, build_masks
    from ..sgm import SgmLayer
    from ..tensor import Tensor

    mismatches = 0
    for T in range(2, 33):
        for tau in range(1, T):
            for scheme in ("local-global", "directional"):
                ms = build_masks(T, tau, PartitionScheme.parse(scheme))
                for i in range(T):
                    for j in range(T):
                        owner = [ms.names[k] for k in range(len(ms)) if ms.masks[k][i, j]]
                        mismatches += owner != [classify_edge(i, j, tau, scheme)]
    partition = {"mismatches": mismatches, "passed": mismatches == 0}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for paradigm in ("transductive", "inductive"):
        for fusion in ("sum", "concat"):
            for scheme in ("full", "local-global", "directional", "full-x4"):
                for T in (2, 3, 4, 8):
                    c_in, c_out = rng.choice([1, 2, 4], size=2)
                    masks = build_masks(T, 1, PartitionScheme.parse(scheme))
                    layer = SgmLayer(masks, int(c_in), int(c_out), paradigm, fusion, rng)
                    if layer.adjacency is not None:
                        for a in layer.adjacency:
                            a.data[...] = rng.uniform(-1, 1, size=a.shape)
                    x = rng.uniform(-2, 2, size=(2, T, int(c_in)))
                    diff = np.abs(layer(Tensor(x)).data - naive_sgm_forward(layer, x)).max()
                    worst = max(worst, float(diff))
    forward = {"max_abs_diff": worst, "passed": worst <= 1e-12}

    gradients = {}
    for paradigm in ("transductive", "inductive"):
        config = SgnMiniConfig(T=8, input_dim=6, hidden_dim=8, num_blocks=2,
                               scheme="directional", paradigm=paradigm)
        model, x, labels, used = gradient_probe(config, seed)
        report, margin = check_model_gradients(model, x, labels)
        gradients[paradigm] = {**report.to_dict(), "probe_seed": used, "kink_margin": margin}

    passed = partition["passed"] and forward["passed"] and all(
        g["passed"] for g in gradients.values())
    return {"passed": passed, "partition": partition, "forward": forward, "gradients": gradients}


def cmd_gradcheck(args) -> int:
    report = run_oracle_suite(args.seed)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vigraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration from a flat JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override output_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run an ablation preset")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on the preset's epoch and warmup budget")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-adjacency", help="print learned adjacency matrices as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_adjacency)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as JSON lines")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--gap", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gradcheck", help="run the oracle suite and emit a JSON report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic line
        print(f"vigraph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
