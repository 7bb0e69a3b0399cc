"""Experiment runner: seeded generation runs, sweeps, and verification.

Configuration is a flat JSON file; every key has a default and any key can
be overridden from the command line.  Result rows are written as CSV and
JSONL with a fixed column order, one row per (method, config, seed), in
deterministic config x seed order.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, verify
from .bridge import BridgeConfig, remote_denoiser, remote_reward
from .core import (
    Denoiser,
    PlantedDenoiser,
    RandomTableDenoiser,
    Vocab,
    make_schedule,
)
from .rewards import LexiconReward, Reward, TargetMatchReward
from .samplers import fhs_generate
from .search import WidthSchedule, tree_search

METHODS = ("base", "bon", "fk", "tree")
SCORERS = ("resubstitution", "previous", "true_posterior")
SWEEP_AXES = {
    "tree_width": "tree",
    "beam_width": "tree",
    "groups": "tree",
    "N": "bon",
    "particles": "fk",
}
RESULT_COLUMNS = (
    "method",
    "per_step_nfe",
    "total_nfe",
    "seed",
    "final_reward",
    "dist1",
    "dist2",
    "dist3",
    "runtime_ms",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """All run settings; round-trips losslessly through JSON."""

    task_kind: str = "planted"  # planted | table | bridge
    length: int = 32
    vocab: int = 16
    eps0: float = 0.6
    concentration: float = 1.0
    task_seed: int = 0
    reward_kind: str = "target_match"  # target_match | lexicon | bridge
    reward_target: list[int] | None = None  # defaults to the planted target
    reward_weights: list[float] | None = None  # defaults to seeded normals
    schedule: str = "linear"  # linear | geometric
    schedule_floor: float = 1e-4
    method: str = "base"
    beam: int = 5
    tree_width: int = 2
    groups: int = 1
    scorer: str = "resubstitution"
    n: int = 4
    particles: int = 4
    fk_lambda: float = 1.0
    fk_ess_frac: float = 0.5
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"
    timing: bool = True
    bridge_endpoint: str | None = None
    bridge_timeout_ms: int = 10_000

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path) as f:
            data = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown config key: {key!r}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.task_kind not in ("planted", "table", "bridge"):
            raise ConfigError(f"unknown task_kind: {self.task_kind!r}")
        if self.reward_kind not in ("target_match", "lexicon", "bridge"):
            raise ConfigError(f"unknown reward_kind: {self.reward_kind!r}")
        if not self.seeds:
            raise ConfigError("seeds list is empty")
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")


def _planted_target(cfg: RunConfig, vocab: Vocab) -> np.ndarray:
    rng = np.random.default_rng(cfg.task_seed)
    return rng.integers(0, vocab.size - 1, size=cfg.length).astype(np.int64)


def build_task(cfg: RunConfig) -> tuple[Denoiser, Reward]:
    """Construct the denoiser and reward named by the config."""
    vocab = Vocab(cfg.vocab)
    endpoint = cfg.bridge_endpoint or os.environ.get("MASKTREE_BRIDGE")

    if cfg.task_kind == "bridge":
        if not endpoint:
            raise ConfigError("task_kind=bridge needs bridge_endpoint or MASKTREE_BRIDGE")
        den: Denoiser = remote_denoiser(
            BridgeConfig.from_endpoint(endpoint, cfg.bridge_timeout_ms)
        )
        vocab = den.vocab
    elif cfg.task_kind == "planted":
        den = PlantedDenoiser(_planted_target(cfg, vocab), vocab, eps0=cfg.eps0)
    else:
        den = RandomTableDenoiser(vocab, seed=cfg.task_seed, concentration=cfg.concentration)

    if cfg.reward_kind == "bridge":
        if not endpoint:
            raise ConfigError("reward_kind=bridge needs bridge_endpoint or MASKTREE_BRIDGE")
        reward: Reward = remote_reward(
            BridgeConfig.from_endpoint(endpoint, cfg.bridge_timeout_ms)
        )
    elif cfg.reward_kind == "target_match":
        if cfg.reward_target is not None:
            target = np.asarray(cfg.reward_target, dtype=np.int64)
        else:
            target = _planted_target(cfg, vocab)
        reward = TargetMatchReward(target, vocab)
    else:
        if cfg.reward_weights is not None:
            weights = np.asarray(cfg.reward_weights, dtype=np.float64)
        else:
            weights = np.random.default_rng(cfg.task_seed).normal(size=vocab.size)
        reward = LexiconReward(weights, vocab)
    return den, reward


def _tree_scorer(cfg: RunConfig):
    if cfg.scorer == "previous":
        return baselines.previous_step_scorer
    if cfg.scorer == "true_posterior":
        return baselines.true_posterior_scorer
    return None  # resubstitution default


def build_schedule(cfg: RunConfig):
    if cfg.schedule == "geometric":
        return make_schedule("geometric", floor=cfg.schedule_floor)
    return make_schedule(cfg.schedule)


def execute_run(cfg: RunConfig, seed: int, den: Denoiser, reward: Reward) -> dict:
    sched = build_schedule(cfg)
    start = time.perf_counter()
    if cfg.method == "base":
        seq, ledger = fhs_generate(cfg.length, den, sched, np.random.default_rng(seed))
    elif cfg.method == "bon":
        seq, _, ledger = baselines.best_of_n(cfg.n, cfg.length, den, sched, reward, seed)
    elif cfg.method == "fk":
        seq, _, ledger = baselines.fk_steer(
            cfg.particles, cfg.length, den, sched, reward,
            lam=cfg.fk_lambda, ess_frac=cfg.fk_ess_frac, seed=seed,
        )
    else:
        result = tree_search(
            cfg.length, den, sched, reward,
            WidthSchedule.constant(cfg.beam, cfg.tree_width),
            seed, groups=cfg.groups, scorer=_tree_scorer(cfg),
        )
        seq, ledger = result.sequence, result.ledger
    runtime_ms = (time.perf_counter() - start) * 1e3 if cfg.timing else 0.0
    row = {
        "method": cfg.method,
        "per_step_nfe": ledger.evals / cfg.length,
        "total_nfe": ledger.evals,
        "seed": seed,
        "final_reward": reward.score(seq),
        "runtime_ms": runtime_ms,
    }
    for k in (1, 2, 3):
        row[f"dist{k}"] = verify.dist_n([seq], k) if cfg.length >= k else None
    return {col: row[col] for col in RESULT_COLUMNS}


def write_rows(rows: list[dict], out_base: str, columns: tuple[str, ...]) -> None:
    os.makedirs(os.path.dirname(out_base) or ".", exist_ok=True)
    with open(out_base + ".csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)
    with open(out_base + ".jsonl", "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate()
    den, reward = build_task(cfg)
    rows: list[dict] = []
    failed = False
    for seed in cfg.seeds:
        try:
            rows.append(execute_run(cfg, seed, den, reward))
        except Exception as exc:  # partial results are still written
            print(f"error: run with seed {seed} failed: {exc}", file=sys.stderr)
            failed = True
            break
    write_rows(rows, cfg.out, RESULT_COLUMNS)
    return 1 if failed else 0


def cmd_sweep(cfg: RunConfig, axis: str, values: list[str]) -> int:
    cfg.validate()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {sorted(SWEEP_AXES)}, got {axis!r}")
    try:
        points = [int(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"sweep values must be integers: {exc}") from None
    cfg.method = SWEEP_AXES[axis]
    attr = {"tree_width": "tree_width", "beam_width": "beam", "groups": "groups",
            "N": "n", "particles": "particles"}[axis]
    rows: list[dict] = []
    failed = False
    for value in points:
        point = dataclasses.replace(cfg)
        setattr(point, attr, value)
        den, reward = build_task(point)
        for seed in point.seeds:
            try:
                row = execute_run(point, seed, den, reward)
            except Exception as exc:
                print(f"error: {axis}={value} seed {seed} failed: {exc}", file=sys.stderr)
                failed = True
                break
            rows.append({"axis": axis, "value": int(value), **row})
        if failed:
            break
    write_rows(rows, cfg.out + "_sweep", ("axis", "value") + RESULT_COLUMNS)
    return 1 if failed else 0


def cmd_trajectory(cfg: RunConfig) -> int:
    cfg.validate()
    if cfg.method != "tree":
        raise ConfigError("trajectory requires method=tree")
    den, reward = build_task(cfg)
    sched = build_schedule(cfg)
    rows: list[dict] = []
    for seed in cfg.seeds:
        result = tree_search(
            cfg.length, den, sched, reward,
            WidthSchedule.constant(cfg.beam, cfg.tree_width),
            seed, groups=cfg.groups, scorer=_tree_scorer(cfg),
        )
        for stats in result.trajectory:
            rows.append(
                {
                    "seed": seed,
                    "step": stats.level,
                    "pool_max": stats.pool_max,
                    "pool_mean": stats.pool_mean,
                }
            )
    write_rows(rows, cfg.out + "_trajectory", ("seed", "step", "pool_max", "pool_mean"))
    return 0


def cmd_verify(check: str, seed: int, quick: bool, out: str | None) -> int:
    battery = verify.default_battery(seed=seed, quick=quick)
    if check != "all":
        if check not in battery:
            raise ConfigError(f"check must be one of {sorted(battery) + ['all']}, got {check!r}")
        battery = {check: battery[check]}
    lines = []
    ok = True
    for group in battery.values():
        for report in group:
            lines.append(report.to_json())
            print(lines[-1])
            ok = ok and report.passed
    if out:
        with open(out, "w") as f:
            f.write("\n".join(lines) + "\n")
    return 0 if ok else 1


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--length", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--task", dest="task_kind", choices=["planted", "table", "bridge"])
    p.add_argument("--task-seed", dest="task_seed", type=int)
    p.add_argument("--eps0", type=float)
    p.add_argument("--concentration", type=float)
    p.add_argument("--reward", dest="reward_kind",
                   choices=["target_match", "lexicon", "bridge"])
    p.add_argument("--schedule", choices=["linear", "geometric"])
    p.add_argument("--beam", type=int)
    p.add_argument("--tree-width", dest="tree_width", type=int)
    p.add_argument("--groups", type=int)
    p.add_argument("--scorer", choices=list(SCORERS))
    p.add_argument("--n", type=int, help="candidate count for bon")
    p.add_argument("--particles", type=int)
    p.add_argument("--fk-lambda", dest="fk_lambda", type=float)
    p.add_argument("--fk-ess-frac", dest="fk_ess_frac", type=float)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",") if x != ""],
                   help="comma-separated run seeds")
    p.add_argument("--out")
    p.add_argument("--no-timing", dest="timing", action="store_false", default=None)
    p.add_argument("--bridge", dest="bridge_endpoint", metavar="HOST:PORT")


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="masktree")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, method in (
        ("generate", "base"),
        ("tree", "tree"),
        ("bon", "bon"),
        ("fk", "fk"),
    ):
        p = sub.add_parser(name, help=f"run the {method} method over the seed list")
        _add_config_flags(p)
        p.set_defaults(command_method=method)

    p = sub.add_parser("sweep", help="cross-product runs along one axis")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", required=True,
                   type=lambda s: [x for x in s.split(",") if x != ""])

    p = sub.add_parser("trajectory", help="per-level pool scores for tree runs")
    _add_config_flags(p)

    p = sub.add_parser("verify", help="statistical checks; one JSON report per line")
    p.add_argument("--check", default="all",
                   choices=["evals", "fhs", "gap", "width", "variance", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="reduced sample counts")
    p.add_argument("--out")

    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.check, args.seed, args.quick, args.out)
        cfg = load_config(args)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.axis, args.values)
        if args.command == "trajectory":
            cfg.method = "tree"
            return cmd_trajectory(cfg)
        cfg.method = args.command_method
        return cmd_run(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
