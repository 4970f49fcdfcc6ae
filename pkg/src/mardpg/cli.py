"""Command-line entry point: ``mardpg <command> --config C --seed S --out DIR``.

Every command prints a one-line JSON result on success. Failures print a
one-line JSON error to stderr and exit nonzero (2 for configuration errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import gradsuite, harness
from .agents import load_model


def _seeds(cfg: harness.ExperimentConfig, seed: Optional[int]) -> List[int]:
    return [seed] if seed is not None else list(cfg.eval.seeds)


def cmd_train(cfg, args) -> dict:
    out = Path(args.out)
    result = {"command": "train", "task": cfg.task, "out": str(out), "seeds": {}}
    for seed in _seeds(cfg, args.seed):
        model, records = harness.train_mardpg(cfg, seed, out)
        entry = {"steps": len(records), "checkpoint": str(out / f"model_seed{seed}.npz")}
        if cfg.task == "beach":
            positions, reward = harness.beach_greedy_positions(
                model, harness.BeachEnv(cfg.beach.rho, cfg.beach.n_customers))
            entry.update(positions=positions, reward=reward)
        result["seeds"][str(seed)] = entry
    (out / "train_result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def _models_from_checkpoint(args, seeds):
    if args.checkpoint is None:
        return None
    model = load_model(args.checkpoint)
    return {s: model for s in seeds}


def cmd_evaluate(cfg, args) -> dict:
    seeds = _seeds(cfg, args.seed)
    res = harness.run_experiment(cfg, args.out, seeds, [cfg.policies.pair], _models_from_checkpoint(args, seeds))
    return {"command": "evaluate", "pair": harness.pair_name(cfg.policies.pair), "out": str(args.out),
            "records": len(res.records), "gmv_total": [r.gmv_total for r in res.records]}


def cmd_compare(cfg, args) -> dict:
    seeds = _seeds(cfg, args.seed)
    res = harness.run_experiment(cfg, args.out, seeds, None, _models_from_checkpoint(args, seeds))
    summary = harness.summarize(res.records) if res.records else {"pairs": {}}
    table = {name: {k: entry.get(k) for k in ("gmv_total", "gap_main", "gap_inshop", "gap_total")}
             for name, entry in summary["pairs"].items()}
    return {"command": "compare", "out": str(args.out), "pairs": table}


def cmd_gradcheck(cfg, args) -> dict:
    seeds = _seeds(cfg, args.seed) if args.seed is not None else list(range(10))
    suite = gradsuite.run_suite(seeds)
    report = {name: {str(s): {"max_error": r.max_error, "passed": r.passed, "blocks": r.errors}
                     for s, r in per_seed.items()} for name, per_seed in suite.items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    passed = all(r.passed for per_seed in suite.values() for r in per_seed.values())
    worst = {name: max(r.max_error for r in per_seed.values()) for name, per_seed in suite.items()}
    result = {"command": "gradcheck", "passed": passed, "max_error": worst, "out": str(out)}
    if not passed:
        raise GradCheckFailed(result)
    return result


def cmd_beach_oracle(cfg, args) -> dict:
    oracle = harness.beach_oracle(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "beach_oracle.json").write_text(json.dumps(oracle, indent=2, sort_keys=True) + "\n")
    return {"command": "beach-oracle", **oracle}


class GradCheckFailed(RuntimeError):
    def __init__(self, result: dict):
        super().__init__(json.dumps(result["max_error"], sort_keys=True))
        self.result = result


COMMANDS = {
    "train": (cmd_train, "train MA-RDPG and save checkpoints and logs"),
    "evaluate": (cmd_evaluate, "evaluate the configured policy pair"),
    "compare": (cmd_compare, "evaluate every configured pair and report GMV gaps against EW+EW"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of all analytic gradients"),
    "beach-oracle": (cmd_beach_oracle, "brute-force optimum of the beach game"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mardpg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="run a single seed instead of eval.seeds")
        p.add_argument("--out", default="runs", help="output directory")
        if name in ("evaluate", "compare"):
            p.add_argument("--checkpoint", help="use a saved model instead of training")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config)
        result = COMMANDS[args.command][0](cfg, args)
    except harness.ConfigError as exc:
        print(json.dumps({"error": "config", "path": exc.path, "message": str(exc)}), file=sys.stderr)
        return 2
    except GradCheckFailed as exc:
        print(json.dumps({"error": "gradcheck", "message": "gradient check failed",
                          "max_error": exc.result["max_error"]}), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0
