"""Command-line entry point: ``kgcast <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or validation
error, 3 numeric failure (divergence, non-finite values, failed gradcheck).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .errors import ConfigurationError, DataError, KgcastError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4
log = logging.getLogger("kgcast")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# ------------------------------------------------------------------ helpers


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _date(text):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _load_config(args):
    from .config import ForecastConfig

    text = ""
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    lines = [text]
    lines += list(getattr(args, "set", None) or [])
    for key in ("horizon", "target", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            lines.append(f"{key} = {value}")
    return ForecastConfig.from_text("\n".join(lines))


def _write_manifest(out_dir, command, config, inputs, seed, outputs):
    """Written before any output so a partial run still records its provenance."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config": None if config is None else dict(
            line.split(" = ", 1) for line in config.to_text().splitlines()
        ),
        # basenames keep the manifest independent of where a run was launched
        "inputs": {
            name: {"file": os.path.basename(path), "sha256": _sha256(path)} for name, path in inputs.items() if path
        },
        "outputs": sorted(outputs),
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _corpus(args, config):
    from .dataset import Corpus
    from .snapshots import read_snapshots, read_stats

    return Corpus(read_snapshots(args.snapshots), read_stats(args.stats), config)


def _default_cutoff(corpus, horizon):
    ends = [e for e in corpus.window_ends() if corpus.has_target(e + dt.timedelta(days=horizon))]
    if not ends:
        raise DataError("no window has a known target at this horizon")
    return ends[-1] + dt.timedelta(days=horizon)


# -------------------------------------------------------------- subcommands


def cmd_gen_synth(args):
    from .synth import SynthSpec, generate, write_corpus

    spec = SynthSpec(
        num_locations=args.locations, num_background=args.background, num_drivers=args.drivers,
        lag=args.lag, effect=args.effect, duration=args.duration, d_e=args.d_e, seed=args.seed,
        num_aliases=args.aliases,
    )
    synth = generate(spec, args.days, max_horizon=args.max_horizon)
    _write_manifest(args.out, "gen-synth", None, {}, args.seed,
                    ["snapshots.jsonl", "stats.csv", "manifest.csv"])
    write_corpus(synth, args.out)
    return EXIT_OK


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .training import build_task, train

    config = _load_config(args)
    corpus = _corpus(args, config)
    cutoff = args.cutoff or _default_cutoff(corpus, config.horizon)
    task = build_task(corpus, cutoff, config.horizon, config.validation_size)
    _write_manifest(args.out, "train", config, {"snapshots": args.snapshots, "stats": args.stats,
                    "config": args.config}, config.seed, ["model.ckpt", "trace.csv"])
    result = train(task, corpus, config)
    save_checkpoint(result.model, os.path.join(args.out, "model.ckpt"))
    with open(os.path.join(args.out, "trace.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_mse", "val_mae"])
        for row in result.trace:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["train_mse"]), repr(row["val_mae"])])
    print(f"trained to cutoff {cutoff.isoformat()}: best epoch {result.best_epoch}, "
          f"validation MAE {result.trace[result.best_epoch]['val_mae']:.4f}")
    return EXIT_OK


def _cutoff_range(corpus, args, horizon):
    ends = corpus.window_ends()
    start = args.start or ends[0]
    end = args.end or ends[-1]
    if start > end:
        raise ConfigurationError("--start is after --end")
    cutoffs = [e for e in ends if start <= e <= end]
    if not cutoffs:
        raise DataError(f"no complete window ends between {start.isoformat()} and {end.isoformat()}")
    return cutoffs


def cmd_predict(args):
    from .checkpoint import load_checkpoint
    from .evaluation import BASELINES, baseline_records, write_predictions
    from .training import predict_records, walk_forward

    config = _load_config(args)
    if args.refit_every is not None:
        config = config.replace(refit_every=args.refit_every)
        config.validate()
    model = None
    if args.checkpoint and args.model not in BASELINES:
        # the checkpoint's own config decides window and feature layout
        model = load_checkpoint(args.checkpoint)
        config = model.config
    corpus = _corpus(args, config)
    cutoffs = _cutoff_range(corpus, args, config.horizon)
    _write_manifest(args.out, "predict", config, {"snapshots": args.snapshots, "stats": args.stats,
                    "config": args.config, "checkpoint": args.checkpoint}, config.seed, ["predictions.csv"])
    if args.model in BASELINES:
        records = baseline_records(corpus.stats, corpus.locations, cutoffs, config.horizon, config.target, args.model)
    elif model is not None:
        if model.locations != corpus.locations:
            raise DataError("checkpoint locations differ from the snapshot locations")
        records = predict_records(model, corpus, cutoffs, config.horizon)
    else:
        records, _ = walk_forward(corpus, config, cutoffs, workers=args.workers)
    with open(os.path.join(args.out, "predictions.csv"), "w", encoding="utf-8", newline="") as fh:
        write_predictions(records, fh)
    print(f"wrote {len(records)} predictions for {len(cutoffs)} cutoffs")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluation import metric_report, read_predictions, write_curves, write_metrics

    with open(args.predictions, encoding="utf-8", newline="") as fh:
        records = read_predictions(fh)
    report = metric_report(records)
    _write_manifest(args.out, "evaluate", None, {"predictions": args.predictions}, None,
                    ["metrics.csv", "curves.csv"])
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        write_metrics(report, fh)
    with open(os.path.join(args.out, "curves.csv"), "w", encoding="utf-8", newline="") as fh:
        write_curves(records, fh)
    for h, metrics in report.items():
        print(f"horizon {h}: MAE {metrics['mae']:.4f}  sMAPE {metrics['smape']:.4f}")
    return EXIT_OK


def cmd_risk(args):
    from .checkpoint import load_checkpoint
    from .risk import risk_from_model, write_risk_report
    from .training import build_task, train

    config = _load_config(args)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if model is not None:
        config = model.config
    corpus = _corpus(args, config)
    _write_manifest(args.out, "risk", config, {"snapshots": args.snapshots, "stats": args.stats,
                    "config": args.config, "checkpoint": args.checkpoint}, config.seed, ["risk.csv"])
    if model is not None:
        if model.locations != corpus.locations:
            raise DataError("checkpoint locations differ from the snapshot locations")
    else:
        cutoff = _default_cutoff(corpus, config.horizon)
        model = train(build_task(corpus, cutoff, config.horizon, config.validation_size), corpus, config).model
    table = risk_from_model(model, corpus, model.config.horizon, fraction=args.fraction)
    with open(os.path.join(args.out, "risk.csv"), "w", encoding="utf-8", newline="") as fh:
        write_risk_report(table, args.k, fh, entity_type=args.entity_type)
    return EXIT_OK


def cmd_gradcheck(args):
    from .fixtures import end_to_end_gradcheck

    err = end_to_end_gradcheck(seed=args.seed)
    ok = err < GRADCHECK_TOLERANCE
    print(f"max relative gradient error: {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="kgcast", description="Event-aware spatio-temporal case forecasting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="generate a synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--days", type=int, default=180)
    g.add_argument("--locations", type=int, default=10)
    g.add_argument("--background", type=int, default=40)
    g.add_argument("--drivers", type=int, default=3)
    g.add_argument("--lag", type=int, default=10)
    g.add_argument("--effect", type=float, default=0.5)
    g.add_argument("--duration", type=int, default=7)
    g.add_argument("--d-e", dest="d_e", type=int, default=16)
    g.add_argument("--aliases", type=int, default=0)
    g.add_argument("--max-horizon", type=int, default=14)
    g.set_defaults(func=cmd_gen_synth)

    def data_args(sp, horizon_required=True):
        sp.add_argument("--snapshots", required=True)
        sp.add_argument("--stats", required=True)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        sp.add_argument("--horizon", type=int, required=horizon_required)
        sp.add_argument("--target", choices=("cases", "deaths"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one model at a cutoff")
    data_args(t)
    t.add_argument("--cutoff", type=_date, help="last date whose labels may be used (default: latest)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="walk-forward forecasts over a cutoff range")
    data_args(pr)
    pr.add_argument("--model", default="graph",
                    choices=("graph", "persistence", "seasonal_naive_7", "moving_average_7"))
    pr.add_argument("--checkpoint", help="use a trained model instead of walk-forward refits")
    pr.add_argument("--start", type=_date)
    pr.add_argument("--end", type=_date)
    pr.add_argument("--refit-every", type=int)
    pr.add_argument("--workers", type=int, default=1)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics and cumulative curves for a predictions file")
    e.add_argument("--predictions", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("risk", help="rank entities by attention on high-count dates")
    data_args(r)
    r.add_argument("--checkpoint")
    r.add_argument("--k", type=int, default=5)
    r.add_argument("--fraction", type=float, default=0.2)
    r.add_argument("--entity-type")
    r.set_defaults(func=cmd_risk)

    gc = sub.add_parser("gradcheck", help="finite-difference check on the built-in fixture")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KgcastError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
