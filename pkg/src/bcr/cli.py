"""Command-line driver for the pipeline.

Subcommands: corpus, groups, extract, verify, reward, train-sim, eval, report.
Every run writes a RunManifest next to its primary output; all randomness
flows from the single --seed through stable sub-seed derivation. A TOML config
file may pre-set any flag, with the command line taking precedence. Exit codes:
0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, asdict
from fractions import Fraction
from pathlib import Path

from .corpus import estimate_difficulty, load_corpus, save_corpus
from .errors import BcrError
from .evalharness import EvalConfig, emit_report, endpoint_source, evaluate, export_trajectory
from .extraction import extract_answers
from .grouping import BudgetConfig, GroupingConfig, build_groups, save_groups, select_budget
from .grpo import TrainConfig
from .reward import RewardWeights, total_reward
from .seeding import derive_seed
from .sim import (
    ARM_WEIGHTS,
    SimEnvConfig,
    ToyPolicy,
    generate_corpus,
    run_bcr_training,
    write_training_log,
)
from .verification import VerifyConfig, verify


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    seed: int
    input_paths: tuple[str, ...]
    output_paths: tuple[str, ...]
    started: str
    finished: str


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _config_hash(args: argparse.Namespace) -> str:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(args, started, inputs, outputs) -> None:
    if not outputs:
        return
    manifest = RunManifest(
        command=args.command,
        config_hash=_config_hash(args),
        seed=getattr(args, "seed", 0),
        input_paths=tuple(str(p) for p in inputs),
        output_paths=tuple(str(p) for p in outputs),
        started=started,
        finished=_now(),
    )
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(asdict(manifest), indent=2) + "\n", encoding="utf-8")


def _parse_mix(text: str) -> tuple[float, float, float]:
    parts = [float(Fraction(part.strip())) for part in text.split(",")]
    if len(parts) != 3:
        raise ValueError("class mix needs exactly three proportions")
    return tuple(parts)


_ENV_PRESETS = {
    "default": SimEnvConfig.default,
    "ablation": SimEnvConfig.ablation,
}


def _cmd_corpus(args) -> int:
    started = _now()
    config = _ENV_PRESETS[args.env]()
    corpus = generate_corpus(
        args.count,
        derive_seed(args.seed, "sim-corpus"),
        _parse_mix(args.mix),
        config.thresholds,
    )
    if args.probe:
        policy = ToyPolicy(config, corpus)
        corpus = estimate_difficulty(
            corpus, policy, rollouts=args.rollouts, seed=derive_seed(args.seed, "sim-probe")
        )
    save_corpus(corpus, args.out)
    _write_manifest(args, started, [], [args.out])
    print(f"wrote {len(corpus)} problems to {args.out}")
    return 0


def _cmd_groups(args) -> int:
    started = _now()
    corpus = load_corpus(args.corpus)
    budget = select_budget(
        [p.difficulty for p in corpus if p.difficulty is not None],
        args.group_size,
        BudgetConfig(args.ratio, args.granularity),
    )
    result = build_groups(
        corpus, GroupingConfig(group_size=args.group_size, seed=args.seed), budget=budget
    )
    save_groups(result, args.out)
    _write_manifest(args, started, [args.corpus], [args.out])
    print(
        f"wrote {len(result.groups)} groups (budget {budget}, "
        f"{len(result.leftovers)} leftover) to {args.out}"
    )
    return 0


def _cmd_extract(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    extracted = extract_answers(text, args.n, lenient=args.lenient)
    print(
        json.dumps(
            {
                "answers": list(extracted.answers),
                "stages": [s.value for s in extracted.stages],
                "raw_boxed_count": extracted.raw_boxed_count,
            },
            ensure_ascii=False,
            indent=2,
        )
    )
    return 0


def _cmd_verify(args) -> int:
    ok = verify(args.candidate, args.truth, VerifyConfig(numeric_tolerance=args.tolerance))
    print("match" if ok else "no match")
    return 0 if ok else 1


def _cmd_reward(args) -> int:
    from .grouping import ProblemGroup, render_prompt

    corpus = load_corpus(args.corpus)
    members = tuple(corpus.by_id(pid.strip()) for pid in args.ids.split(","))
    group = ProblemGroup(
        group_id="cli", members=members, prompt=render_prompt(members), budget=args.budget
    )
    text = Path(args.file).read_text(encoding="utf-8")
    breakdown = total_reward(
        text,
        group,
        RewardWeights(args.w_acc, args.w_fmt, args.w_len),
        max_len=args.budget,
        tokens=args.tokens,
    )
    print(
        json.dumps(
            {
                "r_acc": breakdown.r_acc,
                "r_fmt": breakdown.r_fmt,
                "r_len": breakdown.r_len,
                "total": breakdown.total,
                "per_problem_correct": list(breakdown.per_problem_correct),
            },
            indent=2,
        )
    )
    return 0


def _cmd_train_sim(args) -> int:
    started = _now()
    config = _ENV_PRESETS[args.env]()
    weights = ARM_WEIGHTS[args.arm]
    train_config = TrainConfig(
        candidates_per_group=args.candidates,
        kl_coefficient=args.beta,
        learning_rate=args.lr,
        steps=args.steps,
        seed=args.seed,
    )
    result = run_bcr_training(config, train_config, weights)
    write_training_log(result.rows, args.log)
    _write_manifest(args, started, [], [args.log])
    final = result.rows[-1]
    print(
        f"arm={result.arm} steps={args.steps} budget={result.env.budget} "
        f"final mean_tokens={final.mean_tokens:.1f} accuracy={final.accuracy:.3f} "
        f"objective={final.objective:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    started = _now()
    corpus = load_corpus(args.corpus)
    config = EvalConfig(
        n_values=tuple(int(x) for x in args.n.split(",")),
        endpoint=args.endpoint,
        model_name=args.model,
        parallelism=args.parallelism,
        retries=args.retries,
        skip_failed=args.skip_failed,
        seed=args.seed,
        max_tokens=args.max_tokens,
    )
    source = endpoint_source(config)
    _, summaries = evaluate(source, corpus, config)
    emit_report(summaries, args.out, fmt=args.format)
    _write_manifest(args, started, [args.corpus], [args.out])
    for row in summaries:
        print(
            f"n={row['n']} accuracy={row['accuracy_pct']:.2f}% "
            f"tokens/problem={row['tokens_per_problem']:.2f} failures={row['failures']}"
        )
    return 0


def _cmd_report(args) -> int:
    started = _now()
    rows = []
    with Path(args.log).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                rows.append(argparse.Namespace(**record))
    export_trajectory(rows, args.out, fmt=args.format, group_size=args.group_size)
    _write_manifest(args, started, [args.log], [args.out])
    print(f"wrote {len(rows)} trajectory points to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcr", description=__doc__)
    parser.add_argument("--config", help="TOML file pre-setting any flag", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate (and optionally probe) a synthetic corpus")
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", default="1/3,1/3,1/3")
    p.add_argument("--env", choices=sorted(_ENV_PRESETS), default="default")
    p.add_argument("--probe", action="store_true", help="attach difficulty estimates")
    p.add_argument("--rollouts", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corpus)

    p = sub.add_parser("groups", help="build difficulty-balanced groups with a budget")
    p.add_argument("--corpus", required=True)
    p.add_argument("--group-size", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.5)
    p.add_argument("--granularity", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_groups)

    p = sub.add_parser("extract", help="extract boxed answers from a completion file")
    p.add_argument("--file", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("verify", help="check a candidate answer against ground truth")
    p.add_argument("--candidate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("reward", help="score a completion against a group of problems")
    p.add_argument("--file", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ids", required=True, help="comma-separated problem ids, in order")
    p.add_argument("--budget", type=int, default=5120)
    p.add_argument("--tokens", type=int, default=0)
    p.add_argument("--w-acc", type=float, default=2.0)
    p.add_argument("--w-fmt", type=float, default=1.0)
    p.add_argument("--w-len", type=float, default=0.0)
    p.set_defaults(func=_cmd_reward)

    p = sub.add_parser("train-sim", help="run the synthetic training loop")
    p.add_argument("--arm", choices=sorted(ARM_WEIGHTS), default="implicit")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--env", choices=sorted(_ENV_PRESETS), default="default")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--candidates", type=int, default=4)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--log", required=True)
    p.set_defaults(func=_cmd_train_sim)

    p = sub.add_parser("eval", help="evaluate a chat endpoint under N-way packing")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--n", default="1,2,3,4,5")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--skip-failed", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tokens", type=int, default=32768)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="export a Pareto trajectory from a training log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_report)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Fold TOML config values in as defaults; command line wins."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    with open(path, "rb") as fh:
        settings = tomllib.load(fh)
    flat = {}
    for key, value in settings.items():
        if isinstance(value, dict):
            for inner, v in value.items():
                flat[inner.replace("-", "_")] = v
        else:
            flat[key.replace("-", "_")] = value
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        for sub in action.choices.values():
            sub.set_defaults(**{k: v for k, v in flat.items()
                                if any(a.dest == k for a in sub._actions)})  # noqa: SLF001
    return argv[:idx] + argv[idx + 2 :]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (BcrError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
