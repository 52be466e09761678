"""``grpokit`` command line: gen | sft | filter | grpo | eval | pipeline."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from grpokit._io import atomic_write_csv, atomic_write_text
from grpokit.config import ConfigError, ExperimentConfig, load_config
from grpokit.evaluation import evaluate_policy
from grpokit.grpo import GRPOTrainer, TrainingDivergedError
from grpokit.policy import PolicyParams, load_policy, save_policy
from grpokit.rewards import RewardWeights
from grpokit.sft import SFTTrainer, demonstrations_from
from grpokit.tasks import (
    ACTIVITY_CLASSES,
    BoxGrid,
    DifficultyFilter,
    LabelGrid,
    TemporalGrid,
    generate,
    read_dataset,
    write_dataset,
    write_difficulty_report,
)

logger = logging.getLogger("grpokit")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIVERGED = 4

TRAIN_FILE = "train.jsonl"
EVAL_FILE = "eval.jsonl"
FILTERED_FILE = "filtered.jsonl"
SFT_POLICY = "sft_policy.json"
GRPO_POLICY = "grpo_policy.json"


class MissingInputError(FileNotFoundError):
    pass


def _path(out: str, name: str, must_exist: bool = False) -> str:
    p = os.path.join(out, name)
    if must_exist and not os.path.exists(p):
        raise MissingInputError(f"missing input {p}; run the earlier stage first")
    return p


def _grids(cfg: ExperimentConfig) -> dict:
    g = cfg.gen
    return {
        "temporal": TemporalGrid(g.temporal_points, g.temporal_step),
        "box": BoxGrid(g.box_cells, g.box_size),
        "match": LabelGrid("match", tuple(str(i) for i in range(g.match_k))),
        "activity": LabelGrid("activity", ACTIVITY_CLASSES),
    }


def _full_shapes(cfg: ExperimentConfig) -> dict[str, tuple[int, int]]:
    return {k: (len(g.candidates()), g.n_features) for k, g in _grids(cfg).items()}


def _write_config_snapshot(cfg: ExperimentConfig, out: str, stage: str) -> None:
    atomic_write_text(os.path.join(out, f"config.{stage}.ini"), cfg.to_ini())


def cmd_gen(cfg: ExperimentConfig, out: str) -> None:
    g = cfg.gen
    train, evals = [], []
    for kind, grid in _grids(cfg).items():
        n = getattr(g, f"n_{kind}")
        n_eval = int(round(n * g.eval_fraction))
        noise = getattr(g, f"noise_{kind}")
        train += generate(grid, n - n_eval, cfg.stage_seed(f"gen-train-{kind}"), noise)
        evals += generate(grid, n_eval, cfg.stage_seed(f"gen-eval-{kind}"), noise)
    write_dataset(train, _path(out, TRAIN_FILE))
    write_dataset(evals, _path(out, EVAL_FILE))
    logger.info("gen: %d train / %d eval samples", len(train), len(evals))


def _demo_mix(cfg: ExperimentConfig, train: list, seed: int) -> list:
    """Activity ("home") demos mixed with general-task demos at ``home_fraction``."""
    rng = np.random.default_rng(seed)
    home = [s for s in train if s.task_kind == "activity"]
    general = [s for s in train if s.task_kind != "activity"]
    n_home = min(len(home), int(round(cfg.sft.n_demos * cfg.sft.home_fraction)))
    n_general = min(len(general), cfg.sft.n_demos - n_home)
    picked = [home[i] for i in sorted(rng.choice(len(home), n_home, replace=False))] if n_home else []
    if n_general:
        picked += [general[i] for i in sorted(rng.choice(len(general), n_general, replace=False))]
    return picked


def cmd_sft(cfg: ExperimentConfig, out: str) -> None:
    train = read_dataset(_path(out, TRAIN_FILE, must_exist=True))
    seed = cfg.stage_seed("sft")
    demos = demonstrations_from(_demo_mix(cfg, train, seed))
    if not demos:
        raise ConfigError("sft: no demonstrations selected")
    s = cfg.sft
    init = PolicyParams.zeros(_full_shapes(cfg))
    est = SFTTrainer(s.learning_rate, s.epochs, s.batch_size, seed, s.optimizer).fit(demos, init=init)
    save_policy(est.policy_, _path(out, SFT_POLICY))
    atomic_write_csv(_path(out, "sft_loss.csv"), ("epoch", "loss"),
                     ((e, repr(v)) for e, v in enumerate(est.loss_history_)))
    logger.info("sft: loss %.4f -> %.4f", est.loss_history_[0], est.loss_history_[-1])


def _rl_samples(cfg: ExperimentConfig, samples: list) -> list:
    kinds = set(cfg.grpo_tasks())
    return [s for s in samples if s.task_kind in kinds]


def cmd_filter(cfg: ExperimentConfig, out: str) -> None:
    train = _rl_samples(cfg, read_dataset(_path(out, TRAIN_FILE, must_exist=True)))
    probe = load_policy(_path(out, SFT_POLICY, must_exist=True))
    f = cfg.filter
    weights = RewardWeights(cfg.grpo.lambda_acc, cfg.grpo.lambda_fmt)
    filt = DifficultyFilter(probe, f.group_size, f.lo, f.hi, cfg.stage_seed("filter"), f.score, weights)
    kept = filt.fit_transform(train)
    write_dataset(kept, _path(out, FILTERED_FILE))
    write_difficulty_report(filt.reports_, _path(out, "difficulty.csv"))
    logger.info("filter: kept %d of %d samples", len(kept), len(train))


def cmd_grpo(cfg: ExperimentConfig, out: str) -> None:
    data = read_dataset(_path(out, FILTERED_FILE, must_exist=True))
    if not data:
        raise ConfigError("grpo: the filtered dataset is empty; widen the filter band")
    init = load_policy(_path(out, SFT_POLICY, must_exist=True))
    g = cfg.grpo
    est = GRPOTrainer(
        group_size=g.group_size, clip_epsilon=g.clip_epsilon, kl_coef=g.kl_coef,
        learning_rate=g.learning_rate, iterations=g.iterations, batch_size=g.batch_size,
        seed=cfg.stage_seed("grpo"), optimizer=g.optimizer, inner_steps=g.inner_steps,
        weights=RewardWeights(g.lambda_acc, g.lambda_fmt),
    )
    est.fit(data, init=init, ref=init)
    save_policy(est.policy_, _path(out, GRPO_POLICY))
    est.log_.write_csv(_path(out, "trainlog.csv"))
    r = est.log_.column("mean_reward")
    logger.info("grpo: rollout reward %.4f -> %.4f", r[0], r[-1])


def cmd_eval(cfg: ExperimentConfig, out: str) -> None:
    samples = read_dataset(_path(out, EVAL_FILE, must_exist=True))
    policies = [(stem, name) for stem, name in (("sft", SFT_POLICY), ("grpo", GRPO_POLICY))
                if os.path.exists(_path(out, name))]
    if not policies:
        raise MissingInputError(f"no policy checkpoint in {out}")
    weights = RewardWeights(cfg.grpo.lambda_acc, cfg.grpo.lambda_fmt)
    for stem, name in policies:
        report = evaluate_policy(load_policy(_path(out, name)), samples, cfg.eval.decode,
                                 cfg.stage_seed("eval"), weights)
        report.write(out, f"metrics_{stem}")
        logger.info("eval %s:\n%s", stem, report.to_table())


STAGES = {"gen": cmd_gen, "sft": cmd_sft, "filter": cmd_filter, "grpo": cmd_grpo, "eval": cmd_eval}


def cmd_pipeline(cfg: ExperimentConfig, out: str) -> None:
    for name, fn in STAGES.items():
        fn(cfg, out)
        _write_config_snapshot(cfg, out, name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grpokit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["pipeline"]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI experiment config (defaults built in)")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--out", default="grpokit-out", help="directory for all stage artifacts")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("GRPOKIT_LOG_LEVEL", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.experiment.seed = args.seed
    except ConfigError as e:
        print(f"grpokit: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"grpokit: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.command == "pipeline":
            cmd_pipeline(cfg, args.out)
        else:
            STAGES[args.command](cfg, args.out)
            _write_config_snapshot(cfg, args.out, args.command)
    except ConfigError as e:
        print(f"grpokit: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"grpokit: {e}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except TrainingDivergedError as e:
        print(f"grpokit: training diverged: {e} (last record: {e.record})", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as e:
        print(f"grpokit: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
