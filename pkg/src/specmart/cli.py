"""Command-line entry point for the spectrum-market pipeline.

Subcommands: gen-traffic, forecast, train, eval, report. Options come from
built-in defaults, then a JSON config file (--config), then explicit flags,
in that order of precedence. Every run is reproducible from the config
echo in its summary JSON. Exit codes: 0 success, 1 validation error,
2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import forecast as forecast_mod
from . import report as report_mod
from . import sim as sim_mod
from . import traffic as traffic_mod
from .agent import DivergenceError, TradingAgent
from .market import MarketError
from .report import ReportError
from .sim import SimConfig, SimulationError
from .traffic import TrafficCsvError

_CONFIG_KEYS = {f.name for f in fields(SimConfig)}


class CliError(ValueError):
    """Validation failure surfaced with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are validation errors per the exit-code contract.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    with p.open() as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise CliError("config file must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace,
                   clamp_train_days: bool = False) -> SimConfig:
    """defaults < config file < explicit flags; unknown keys are rejected."""
    merged = SimConfig().to_dict()
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for key, value in vars(args).items():
        if key in _CONFIG_KEYS and value is not None:
            merged[key] = value
    if clamp_train_days:
        # data generation does not care about the train/eval split
        merged["train_days"] = max(1, min(merged["train_days"],
                                          merged["total_days"] - 1))
    return SimConfig.from_dict(merged)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flat keys)")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--out", help="output directory (default: out)")


def cmd_gen_traffic(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, clamp_train_days=True)
    out = _out_dir(args)
    target, counterparty = sim_mod.default_dataset(cfg)
    for series, name in ((target, "lte_traffic.csv"),
                         (counterparty, "nr_traffic.csv")):
        path = out / name
        traffic_mod.write_csv(series, path)
        vals = series.values
        print(f"{path}: {len(series)} rows, granularity {series.granularity}s, "
              f"mean {vals.mean():.3f}, min {vals.min():.3f}, max {vals.max():.3f}")
    return 0


def cmd_forecast(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    if not args.traffic:
        raise CliError("--traffic is required")
    series = traffic_mod.load_csv(args.traffic, granularity=args.csv_granularity)
    fc = forecast_mod.fit(cfg.forecaster_config(), series)
    start = args.start if args.start is not None else fc.window_size
    csv_path = out / "forecast.csv"
    results, metrics = forecast_mod.backtest(fc, series, start, csv_path=csv_path)
    metrics_path = out / "forecast_metrics.json"
    with metrics_path.open("w") as fh:
        json.dump({
            "metrics": {"mape": metrics.mape, "mae": metrics.mae,
                        "rows": len(results), "start": start},
            "config": cfg.to_dict(),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{csv_path}: {len(results)} rows")
    print(f"{metrics_path}: mape {metrics.mape:.4f}%, mae {metrics.mae:.4f}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if cfg.episodes < 1:
        raise CliError("episodes must be ≥ 1")
    out = _out_dir(args)
    outcome = sim_mod.train(cfg)
    trace_path = out / "reward_trace.csv"
    sim_mod.write_trace_csv(outcome.episode_rewards, trace_path)
    checkpoint = out / "agent"
    outcome.agent.save(checkpoint)
    summary = {
        "episodes": cfg.episodes,
        "final_episode_reward": outcome.episode_rewards[-1],
        "epsilon_steps": outcome.agent.epsilon_step,
    }
    sim_mod.write_summary_json(summary, cfg, out / "train_summary.json")
    print(f"{trace_path}: {len(outcome.episode_rewards)} episodes")
    print(f"{checkpoint}.json: checkpoint written")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    agent = None
    if args.policy == "agent":
        if not args.checkpoint:
            raise CliError("--checkpoint is required for --policy agent")
        agent = TradingAgent.load(args.checkpoint)
    outcome = sim_mod.evaluate(agent, cfg, granularity=args.eval_granularity,
                               policy=args.policy)
    results_path = out / f"results_{args.eval_granularity}.csv"
    sim_mod.write_results_csv(outcome.results, results_path)
    summary_path = out / f"summary_{args.eval_granularity}.json"
    sim_mod.write_summary_json(outcome.summary, cfg, summary_path)
    ledger_path = out / f"ledger_{args.eval_granularity}.csv"
    outcome.ledger.export_csv(ledger_path)
    print(f"{results_path}: {len(outcome.results)} rows")
    print(f"{summary_path}: profit ratio "
          f"{outcome.summary['normalized_profit_ratio']:.6f}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    artifacts = report_mod.build_report(args.results, out,
                                        trace_path=args.trace,
                                        figures=not args.no_figures)
    print(f"{artifacts['report_csv']}: merged table")
    print(f"{artifacts['summary_json']}: summary")
    for fig in artifacts.get("figures", []):
        print(f"{fig}: figure")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specmart",
                     description="Spectrum marketplace simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traffic", parents=[], help="write synthetic traffic CSVs")
    _add_common(p)
    p.add_argument("--days", type=int, dest="total_days", help="days to generate")
    p.add_argument("--granularity", type=int, help="seconds per step")
    p.add_argument("--mean", type=float, dest="demand_mean")
    p.add_argument("--amplitude", type=float, dest="demand_amplitude")
    p.add_argument("--noise", type=float, dest="demand_noise")
    p.add_argument("--trend", type=float, dest="demand_trend_per_day")
    p.add_argument("--cp-mean", type=float, dest="counterparty_mean")
    p.add_argument("--cp-amplitude", type=float, dest="counterparty_amplitude")
    p.add_argument("--cp-noise", type=float, dest="counterparty_noise")
    p.add_argument("--cp-trend", type=float, dest="counterparty_trend_per_day")
    p.set_defaults(func=cmd_gen_traffic)

    p = sub.add_parser("forecast", help="backtest a forecaster over a traffic CSV")
    _add_common(p)
    p.add_argument("--traffic", help="traffic CSV path")
    p.add_argument("--kind", dest="forecaster_kind",
                   choices=forecast_mod.FORECASTER_KINDS)
    p.add_argument("--lookback", type=int)
    p.add_argument("--season-period", type=int, dest="season_period")
    p.add_argument("--start", type=int, help="first forecast step")
    p.add_argument("--granularity", type=int, dest="csv_granularity",
                   help="seconds per step when the CSV has no metadata line")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("train", help="train the trading agent")
    _add_common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--traffic", dest="traffic_csv", help="target operator CSV")
    p.add_argument("--counterparty", dest="counterparty_csv",
                   help="counterparty operator CSV")
    p.add_argument("--threshold", type=float)
    p.add_argument("--discount", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy on the validation span")
    _add_common(p)
    p.add_argument("--checkpoint", help="agent checkpoint prefix or .json path")
    p.add_argument("--granularity", dest="eval_granularity",
                   choices=sorted(sim_mod.GRANULARITY_SECONDS), default="hour")
    p.add_argument("--policy", choices=["agent", "hold"], default="agent")
    p.add_argument("--traffic", dest="traffic_csv", help="target operator CSV")
    p.add_argument("--counterparty", dest="counterparty_csv",
                   help="counterparty operator CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge results and render figures")
    _add_common(p)
    p.add_argument("results", nargs="+", help="results CSV paths")
    p.add_argument("--trace", help="reward trace CSV")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except (CliError, SimulationError, TrafficCsvError, MarketError,
            ReportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
