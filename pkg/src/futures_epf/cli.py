"""Command-line entry point.

Options can come from a JSON file (``--config``) whose keys are the long
option names with dashes replaced by underscores; flags given on the command
line win. Exit codes: 0 success, 1 domain error, 2 input or schema error.
"""
from __future__ import annotations

import argparse
import datetime as dt
import itertools
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import synth
from .backtest import (
    MODEL_NAMES,
    BacktestConfig,
    BacktestError,
    MarketData,
    dm_table,
    errors_to_tensor,
    first_key_divergence,
    mmae,
    read_errors,
    run_backtest,
    write_dm,
    write_errors,
    write_failures,
    write_inclusion,
    write_metrics,
)
from .calendar_features import load_holidays
from .features import build_matrix, dump_features
from .lasso import LassoConfig
from .market_data import (
    DEFAULT_MAX_FILL_DAYS,
    InputError,
    coverage_report,
    forward_fill,
    load_futures,
    load_prices,
)
from .models import fit_ar24, fit_future_model
from .simulate import (
    DEFAULT_LEVELS,
    SAMPLING_MODES,
    SimulationConfig,
    simulate_paths,
    write_metadata,
    write_paths_binary,
    write_quantiles,
)

logger = logging.getLogger("futures_epf")

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT = 0, 1, 2
COVERAGE_SCREEN = 0.75
DAY = dt.timedelta(days=1)


class ConfigError(InputError):
    pass


# --------------------------------------------------------------------------
# argument handling


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _levels(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated numbers: {text!r}") from None


def _models(text: str) -> list[str]:
    names = [x.strip() for x in text.split(",") if x.strip()]
    unknown = [n for n in names if n not in MODEL_NAMES]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"models must be drawn from {','.join(MODEL_NAMES)}")
    return names


DEFAULTS: dict[str, Any] = {
    "out": ".",
    "jobs": os.cpu_count() or 1,
    "seed": 0,
    "max_fill_days": DEFAULT_MAX_FILL_DAYS,
    "window_length": 365,
    "windows": 30,
    "horizon": 28,
    "models": ["future", "ar24"],
    "model": "future",
    "paths": 1000,
    "levels": list(DEFAULT_LEVELS),
    "sampling": "day_block",
    "tol": LassoConfig.tol,
    "max_iter": LassoConfig.max_iter,
    "grid_size": LassoConfig.grid_size,
    "full_path": False,
    "dump_models": False,
    "dump_paths": False,
    "days": 730,
    "start": "2015-01-01",
    "signal": 0.9,
    "futures_noise": 1.0,
    "noise": 2.0,
    "hour": 1,
}


def _add_inputs(p: argparse.ArgumentParser, futures: bool = True) -> None:
    p.add_argument("--prices", type=Path, help="hourly prices CSV (date,hour,price)")
    if futures:
        p.add_argument("--futures", type=Path, help="futures CSV (trade_date,product,variant,maturity,price)")
    p.add_argument("--holidays", type=Path, help="holiday CSV with a 'date' column")
    p.add_argument("--max-fill-days", type=int, help="longest forward fill over non-trading days")


def _add_lasso(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, help="coordinate descent tolerance")
    p.add_argument("--max-iter", type=int, help="sweep limit per penalty")
    p.add_argument("--grid-size", type=int, help="number of penalties on the grid")
    p.add_argument("--full-path", action="store_true", default=None,
                   help="fit the whole penalty grid instead of stopping once BIC turns up")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with option values")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--seed", type=_u64, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="futures-epf", description="Futures-augmented day-ahead price forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check input files and report futures coverage")
    _add_inputs(p)

    p = sub.add_parser("backtest", parents=[common], help="rolling-window forecast study")
    _add_inputs(p)
    _add_lasso(p)
    p.add_argument("--models", type=_models, help=f"comma-separated subset of {','.join(MODEL_NAMES)}")
    p.add_argument("--windows", type=int, help="number of rolling windows N")
    p.add_argument("--window-length", type=int, help="training days per window")
    p.add_argument("--horizon", type=int, help="forecast days per window")
    p.add_argument("--first-forecast-day", type=_date, help="first day forecast by window 1")
    p.add_argument("--dump-models", action="store_true", default=None, help="write every fitted lasso model as JSON")

    p = sub.add_parser("dm", parents=[common], help="Diebold-Mariano test between two error files")
    p.add_argument("errors_a", type=Path)
    p.add_argument("errors_b", type=Path)
    p.add_argument("--model-a", help="model in the first file (needed when it holds several)")
    p.add_argument("--model-b", help="model in the second file")

    p = sub.add_parser("simulate", parents=[common], help="bootstrap paths and quantile fan")
    _add_inputs(p)
    _add_lasso(p)
    p.add_argument("--model", choices=("future", "ar24"))
    p.add_argument("--origin", type=_date, help="last observed day (default: last price date)")
    p.add_argument("--window-length", type=int, help="training days")
    p.add_argument("--horizon", type=int, help="simulated days")
    p.add_argument("--paths", type=int, help="number of paths")
    p.add_argument("--levels", type=_levels, help="comma-separated quantile levels in (0, 1)")
    p.add_argument("--sampling", choices=SAMPLING_MODES, help="residual resampling scheme")
    p.add_argument("--dump-paths", action="store_true", default=None, help="also write raw paths (paths.bin)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic data set")
    p.add_argument("--start", type=_date)
    p.add_argument("--days", type=int)
    p.add_argument("--signal", type=float, help="futures signal strength in [0, 1]")
    p.add_argument("--futures-noise", type=float, help="futures noise standard deviation")
    p.add_argument("--noise", type=float, help="hourly price noise standard deviation")

    p = sub.add_parser("dump-features", parents=[common], help="write one hour's design matrix as CSV")
    _add_inputs(p)
    p.add_argument("--hour", type=int)
    p.add_argument("--from", dest="first", type=_date)
    p.add_argument("--to", dest="last", type=_date)
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the JSON config, then explicit flags."""
    opts = dict(DEFAULTS)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in loaded.items()})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    for key in ("prices", "futures", "holidays", "out", "errors_a", "errors_b"):
        if opts.get(key) is not None:
            opts[key] = Path(opts[key])
    for key in ("start", "origin", "first_forecast_day", "first", "last"):
        if isinstance(opts.get(key), str):
            try:
                opts[key] = dt.date.fromisoformat(opts[key])
            except ValueError:
                raise ConfigError(f"option {key}: not an ISO date: {opts[key]!r}") from None
    if isinstance(opts.get("models"), str):
        opts["models"] = _models(opts["models"])
    if isinstance(opts.get("levels"), str):
        opts["levels"] = _levels(opts["levels"])
    return opts


def _require(opts: dict, *keys: str) -> None:
    for key in keys:
        path = opts.get(key)
        if path is None:
            raise ConfigError(f"--{key.replace('_', '-')} is required")
        if not Path(path).is_file():
            raise ConfigError(f"{key} file not found: {path}")


def _out_dir(opts: dict) -> Path:
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _lasso(opts: dict) -> LassoConfig:
    return LassoConfig(tol=float(opts["tol"]), max_iter=int(opts["max_iter"]),
                       grid_size=int(opts["grid_size"]), early_stop=not opts["full_path"])


def _holidays(opts: dict) -> frozenset[dt.date]:
    if opts.get("holidays") is None:
        return frozenset()
    _require(opts, "holidays")
    try:
        return load_holidays(opts["holidays"])
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load(opts: dict, futures: bool = True) -> MarketData:
    _require(opts, "prices")
    panel = load_prices(opts["prices"])
    holidays = _holidays(opts)
    book = None
    if futures:
        _require(opts, "futures")
        book = forward_fill(load_futures(opts["futures"]), holidays, int(opts["max_fill_days"]))
    return MarketData(panel, book, holidays)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


# --------------------------------------------------------------------------
# commands


def cmd_validate(opts: dict) -> int:
    _require(opts, "prices", "futures")
    panel = load_prices(opts["prices"])
    holidays = _holidays(opts)
    book = load_futures(opts["futures"])
    print(f"prices: {panel.start} .. {panel.end} ({len(panel)} days, {panel.values.size} hourly values)")
    dates = book.trade_dates()
    if dates:
        print(f"futures: {len(book)} quotes, trade dates {dates[0]} .. {dates[-1]}")
    else:
        print("futures: empty book")
    print(f"holidays: {len(holidays)}")
    print("product,variant,maturity,quoted_days,listing_days,ratio")
    low = 0
    for row in coverage_report(book, holidays):
        print(f"{row['product']},{row['variant']},{row['maturity']},{row['quoted_days']},"
              f"{row['listing_days']},{row['ratio']:.4f}")
        if row["ratio"] < COVERAGE_SCREEN:
            low += 1
            print(f"WARNING: {row['product']} {row['variant']} maturity {row['maturity']} quoted on "
                  f"{row['ratio']:.1%} of its listing days (screen {COVERAGE_SCREEN:.0%})")
    print(f"series below the {COVERAGE_SCREEN:.0%} screen: {low}")
    return EXIT_OK


def cmd_backtest(opts: dict) -> int:
    models = tuple(opts["models"])
    data = _load(opts, futures="future" in models)
    config = BacktestConfig(num_windows=int(opts["windows"]), window_length=int(opts["window_length"]),
                            horizon_days=int(opts["horizon"]),
                            first_forecast_day=opts.get("first_forecast_day"), models=models)
    out = _out_dir(opts)
    lasso = _lasso(opts)
    result = run_backtest(config, data, lasso=lasso, jobs=int(opts["jobs"]))
    write_errors(result, out / "errors.csv")
    write_metrics(result, out / "metrics.json")
    write_inclusion(result, out / "inclusion.csv")
    write_failures(result, out / "failures.csv")
    pairs = list(itertools.combinations(models, 2))
    if pairs:
        rows = [(a, b, r) for a, b in pairs for r in dm_table(result.errors[a], result.errors[b])]
        write_dm(rows, out / "dm.csv")
    if opts["dump_models"]:
        _dump_window_models(config, data, lasso, result.windows, out / "models")

    K = config.horizon_days * 24
    ks = sorted({min(24, K), min(168, K), K})
    print("model,windows," + ",".join(f"MMAE_{k}" for k in ks))
    for name in models:
        t = result.errors[name]
        n_eval = int(np.sum(~np.isnan(t[0, 0])))
        print(f"{name},{n_eval}," + ",".join(f"{mmae(t, k):.4f}" for k in ks))
    if result.failures:
        print(f"skipped (model, window) pairs: {len(result.failures)}; see failures.csv")
    return EXIT_OK


def _dump_window_models(config, data, lasso, windows, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for w in windows:
        for name in config.models:
            if name == "future":
                m = fit_future_model(data.panel, data.book, data.holidays, (w.train_first, w.origin),
                                     horizon_days=config.horizon_days, config=lasso)
            elif name == "ar24":
                m = fit_ar24(data.panel, data.holidays, (w.train_first, w.origin),
                             horizon_days=config.horizon_days, config=lasso)
            else:
                continue
            m.dump(out / f"{name}_window{w.n:04d}.json")


def _pick(errors: dict, name: str | None, path: Path) -> tuple[str, dict]:
    if name is None:
        if len(errors) != 1:
            raise ConfigError(f"{path} holds models {sorted(errors)}; choose one with --model-a/--model-b")
        name = next(iter(errors))
    if name not in errors:
        raise ConfigError(f"{path} has no model {name!r} (found {sorted(errors)})")
    return name, errors[name]


def cmd_dm(opts: dict) -> int:
    _require(opts, "errors_a", "errors_b")
    try:
        ea, eb = read_errors(opts["errors_a"]), read_errors(opts["errors_b"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    name_a, a = _pick(ea, opts.get("model_a"), opts["errors_a"])
    name_b, b = _pick(eb, opts.get("model_b"), opts["errors_b"])
    diverge = first_key_divergence(a, b)
    if diverge is not None:
        side = "first" if diverge in a else "second"
        raise InputError(
            f"error files do not match: (window {diverge[0]}, horizon_day {diverge[1]}, hour {diverge[2]}) "
            f"only in the {side} file"
        )
    ta, _ = errors_to_tensor(a)
    tb, _ = errors_to_tensor(b)
    if name_a == name_b:
        name_b = f"{name_b}_b"
    out = _out_dir(opts)
    rows = [(name_a, name_b, r) for r in dm_table(ta, tb)]
    write_dm(rows, out / "dm.csv")
    print("horizon_day,dm,p_two_sided,p_one_sided,degenerate")
    for _, _, r in rows:
        print(f"{r.horizon_day},{r.dm:.4f},{r.p_two_sided:.4g},{r.p_one_sided:.4g},{str(r.degenerate).lower()}")
    return EXIT_OK


def cmd_simulate(opts: dict) -> int:
    use_futures = opts["model"] == "future"
    data = _load(opts, futures=use_futures)
    origin = opts.get("origin") or data.panel.end
    L = int(opts["window_length"])
    H = int(opts["horizon"])
    train = (origin - (L - 1) * DAY, origin)
    lasso = _lasso(opts)
    if use_futures:
        model = fit_future_model(data.panel, data.book, data.holidays, train, horizon_days=H, config=lasso)
    else:
        model = fit_ar24(data.panel, data.holidays, train, horizon_days=H, config=lasso)
    config = SimulationConfig(num_paths=int(opts["paths"]), horizon_days=H, seed=int(opts["seed"]),
                              residual_sampling=opts["sampling"])
    pathset = simulate_paths(model, data.panel, data.book, data.holidays, config)
    out = _out_dir(opts)
    levels = opts["levels"]
    write_quantiles(pathset, levels, out / "quantiles.csv")
    write_metadata(pathset, levels, out / "quantiles.json")
    model.dump(out / "model.json")
    lines = ["date,hour,mean"]
    for d, row in zip(pathset.dates, pathset.mean_forecast):
        lines += [f"{d.isoformat()},{h + 1},{_fmt(v)}" for h, v in enumerate(row)]
    (out / "mean_forecast.csv").write_text("\n".join(lines) + "\n")
    if opts["dump_paths"]:
        write_paths_binary(pathset, out / "paths.bin")
    print(f"simulated {config.num_paths} paths over {H} days from origin {origin}; "
          f"{len(levels)} quantile levels written to {out / 'quantiles.csv'}")
    return EXIT_OK


def cmd_synth(opts: dict) -> int:
    cfg = synth.SynthConfig(start=opts["start"], num_days=int(opts["days"]), seed=int(opts["seed"]),
                            futures_signal_strength=float(opts["signal"]),
                            futures_noise_sd=float(opts["futures_noise"]), noise_sd=float(opts["noise"]))
    panel, book, holidays = synth.generate(cfg)
    out = _out_dir(opts)
    paths = synth.save(panel, book, holidays, out)
    (out / "synth.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(panel)} days of prices, {len(book)} futures quotes, {len(holidays)} holidays to {out}")
    for key, path in paths.items():
        print(f"{key}: {path}")
    return EXIT_OK


def cmd_dump_features(opts: dict) -> int:
    data = _load(opts)
    first = opts.get("first") or data.panel.start + 7 * DAY
    last = opts.get("last") or data.panel.end
    hour = int(opts["hour"])
    matrix = build_matrix(data.panel, data.book, data.holidays, hour,
                          [first + i * DAY for i in range((last - first).days + 1)])
    out = _out_dir(opts)
    path = out / f"features_h{hour:02d}.csv"
    dump_features(matrix, path)
    print(f"{len(matrix.dates)} rows x {matrix.X.shape[1]} columns written to {path}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "backtest": cmd_backtest,
    "dm": cmd_dm,
    "simulate": cmd_simulate,
    "synth": cmd_synth,
    "dump-features": cmd_dump_features,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (InputError, FileNotFoundError, UnicodeDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BacktestError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
