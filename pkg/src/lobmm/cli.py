"""``lobmm`` command line: synth, snapshot, train, evaluate, report.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DataError, IncompatibleCheckpoint, LobmmError, MissingNormalizer

log = logging.getLogger("lobmm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def cmd_synth(args) -> int:
    from .pipeline import write_ticks
    from .synthetic import synthetic_day

    tf = synthetic_day(args.seconds, seed=args.seed, date=args.date)
    write_ticks(args.out, tf)
    print(f"wrote {len(tf)} events to {args.out}")
    return EXIT_OK


def cmd_snapshot(args) -> int:
    from .pipeline import parse_ticks, replay_to_snapshots, write_snapshots

    ticks = parse_ticks(args.inp)
    ds = replay_to_snapshots(ticks, backend=args.backend)
    write_snapshots(args.out, ds)
    print(f"{ds.instrument} {ds.date}: {len(ticks)} events, {ds.n_rejected} rejected, "
          f"{len(ds)} snapshots, {len(ds.trade_row)} prints -> {args.out}")
    return EXIT_OK


def _read_metrics(path: Path):
    header, rows = None, []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        if "config" in rec:
            header = rec
        else:
            rows.append(rec)
    return header, rows


def cmd_train(args) -> int:
    from .agents import load_checkpoint, train
    from .config import load_config
    from .env import MarketMakingEnv
    from .pipeline import load_dataset

    cfg = load_config(args.config)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats, day = load_dataset(cfg.fit_data or cfg.train_data, cfg.train_data)
    env_cfg = cfg.env_config()
    tcfg = cfg.train_config()
    resolved = cfg.to_dict()
    header = {"config": resolved, "seed": cfg.seed}

    metrics = out / "metrics.jsonl"
    ckpt = out / "checkpoint.pt"
    if args.resume:
        saved = load_checkpoint(args.resume)["step"]
        _, rows = _read_metrics(metrics) if metrics.exists() else (None, [])
        rows = [r for r in rows if r["step"] <= saved]
        metrics.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in [header] + rows))
    else:
        metrics.write_text(json.dumps(header, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")

    def factory(rank):
        return MarketMakingEnv(day, env_cfg, seed=cfg.seed * 1009 + rank)

    extra = {"run_config": resolved, "seed": cfg.seed, "normalizer": stats.to_dict(),
             "env_config": env_cfg.to_dict(), "instrument": day.dataset.instrument}
    _, rows = train(factory, tcfg, metrics_path=metrics, checkpoint_path=ckpt, resume_from=args.resume, extra=extra)
    last = rows[-1] if rows else {}
    print(f"trained {tcfg.algo} to step {last.get('step', 'n/a')}; checkpoint {ckpt}, metrics {metrics}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .agents import evaluate, load_checkpoint, network_from_checkpoint
    from .env import EnvConfig, MarketMakingEnv
    from .features import NormalizerStats
    from .pipeline import fit_day, normalize_day, read_snapshots

    state = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(state)
    extra = state.get("extra", {})
    ds = read_snapshots(args.data)
    if args.fit:
        stats = fit_day(read_snapshots(args.fit))
    elif "normalizer" in extra:
        stats = NormalizerStats.from_dict(extra["normalizer"])
    else:
        raise MissingNormalizer("checkpoint carries no normalizer; pass --fit")
    if stats.columns and tuple(stats.columns) != tuple(ds.columns):
        raise IncompatibleCheckpoint(f"{args.checkpoint} was trained on a different feature schema than {args.data}")
    day = normalize_day(ds, stats)
    env_cfg = EnvConfig(**extra.get("env_config", {}))
    env_cfg.reward = args.reward or env_cfg.reward
    env_cfg.episode_length, env_cfg.random_start = None, False
    agent = state["train_config"].get("algo", "")
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for repeat in args.action_repeat:
        env = MarketMakingEnv(day, env_cfg)
        if tuple(env.observation_shape) != net.obs_shape:
            raise IncompatibleCheckpoint(
                f"network expects observations {net.obs_shape}, data gives {tuple(env.observation_shape)}")
        rep = evaluate(net, env, repeat, greedy=args.greedy, seed=args.seed, agent=agent, reward=env_cfg.reward)
        rep.seed = args.seed
        rep.config = {"train": extra.get("run_config", {}), "env": env_cfg.to_dict(),
                      "evaluate": {"checkpoint": str(args.checkpoint), "data": str(args.data), "fit": args.fit,
                                   "action_repeat": repeat, "greedy": args.greedy, "seed": args.seed}}
        path = out_dir / f"report_{agent}_{env_cfg.reward}_{ds.instrument}_{ds.date}_ar{repeat}.json"
        rep.write(path)
        s = rep.summary()
        print(f"action_repeat={repeat}: daily return {s['daily_return_pct']:.4f}%, avg trade "
              f"{s['avg_trade_return_pct']:.4f}%, trades {s['trade_count']}, fees {s['fee_total']:.4f} -> {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    import csv

    from .report import format_table, read_report, report_table

    rows = report_table([read_report(p) for p in args.reports])
    print(format_table(rows))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lobmm", description="Limit order book market-making agents.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic tick file")
    s.add_argument("--out", required=True)
    s.add_argument("--seconds", type=int, default=3600)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--date", default="2019-11-01")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("snapshot", help="replay a tick file into 1-second snapshots")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--backend", choices=("python", "compiled"), default=None)
    s.set_defaults(func=cmd_snapshot)

    s = sub.add_parser("train", help="train an agent from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="run a trained agent over one day")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True, help="snapshot CSV of the evaluation day")
    s.add_argument("--action-repeat", type=int, nargs="+", default=[5])
    s.add_argument("--reward", choices=("positional", "trade_completion"), default=None)
    s.add_argument("--fit", default=None, help="snapshot CSV to fit the normalizer on (default: stored in checkpoint)")
    s.add_argument("--out-dir", default=None)
    s.add_argument("--greedy", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="tabulate evaluation reports")
    s.add_argument("reports", nargs="+")
    s.add_argument("--csv", default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LobmmError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
