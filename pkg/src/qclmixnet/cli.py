"""Command-line entry point: ``qclmix <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from typing import Optional

import numpy as np

from . import autodiff as ad
from .bench import plan, run_bench
from .config import ConfigError, parse_config_file, parse_overrides, render, resolve, train_config
from .data import DataError, fit_scaler, load_csv, read_manifest, stratified_split
from .gradcheck import run_suite
from .model import model_forward
from .stats import compare_models, f_sf, friedman_from_mean_ranks, global_friedman, iman_davenport_decision
from .training import VARIANTS, CheckpointError, checkpoint_scaler, evaluate, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("qclmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared")
    g.add_argument("--data", help="CSV dataset (header row, label in last column unless label_column is set)")
    g.add_argument("--manifest", help="CSV of name,path[,label_column] lines")
    g.add_argument("--config", help="flat 'key = value' config file")
    g.add_argument("--seed", type=int, help="training seed (default 42)")
    g.add_argument("--ablate", help=f"one of {', '.join(VARIANTS[1:])}")
    g.add_argument("--out", help="output directory (or file, for export-embeddings)")
    g.add_argument("--jobs", type=int, default=1, help="parallel worker processes for bench")
    g.add_argument("--val-fraction", type=float, help="carve a validation split from train for model selection")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = _Parser(prog="qclmix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("train", parents=[shared], help="train one model and save the best checkpoint")

    p = sub.add_parser("evaluate", parents=[shared], help="score a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")

    p = sub.add_parser("bench", parents=[shared], help="datasets x variants x seeds sweep")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated variant names")
    p.add_argument("--seeds", default="42", help="comma-separated seeds")

    p = sub.add_parser("stats", parents=[shared], help="Friedman / Iman-Davenport tests")
    p.add_argument("--results", help="long CSV with dataset,model,metric,value")
    p.add_argument("--mean-ranks", help="CSV: model column then one mean-rank column per measure")
    p.add_argument("--n-measures", type=int, help="N for a single mean-rank column")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--textbook", action="store_true", help="re-rank the per-metric mean ranks before the global test")

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient suite")
    p.add_argument("--op", help="run only checks whose name starts with this")
    p.add_argument("--instances", type=int, default=20)

    p = sub.add_parser("export-embeddings", parents=[shared], help="write 8-d embeddings with labels and predictions")
    p.add_argument("--checkpoint", required=True)
    return parser


def _resolve(args) -> dict:
    file_layer = parse_config_file(args.config) if args.config else {}
    cli_layer = parse_overrides(args.set)
    if args.seed is not None:
        cli_layer["seed"] = args.seed
    if args.val_fraction is not None:
        cli_layer["val_fraction"] = args.val_fraction
    resolved = resolve(file_layer, cli_layer)
    logger.info("effective configuration (command %s):\n%s", args.command, render(resolved))
    return resolved


def _variant(args) -> str:
    if args.ablate is None:
        return "full"
    if args.ablate not in VARIANTS[1:]:
        raise UsageError(f"unknown ablation {args.ablate!r}; valid: {', '.join(VARIANTS[1:])}")
    return args.ablate


def _write_csv(path: str, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def cmd_train(args) -> int:
    resolved = _resolve(args)
    variant = _variant(args)
    if not args.data:
        raise UsageError("train needs --data")
    label = resolved["label_column"] or None
    ds = load_csv(args.data, label)
    split = stratified_split(ds.y, resolved["test_ratio"], resolved["split_seed"])
    cfg = train_config(resolved).ablate(variant)
    out = args.out or os.path.join("runs", f"{ds.name}-{variant}-s{cfg.seed}")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"variant = {variant}\n{render(resolved)}\n")

    def progress(rec):
        logger.debug("epoch %d lr %.3g loss %.5f maF1 %.4f", rec.epoch, rec.lr, rec.losses.get("hybrid", 0.0), rec.metrics.maF1)

    start = time.perf_counter()
    result = train(ds, split, cfg, on_epoch=progress)
    wall = time.perf_counter() - start
    ckpt = os.path.join(out, "checkpoint.ckpt")
    save_checkpoint(result.params, ckpt)
    rows = result.history.rows()
    _write_csv(os.path.join(out, "history.csv"), list(rows[0]), rows)
    lam_rows = [
        {"step": i, "n": a.size, "min": a.min(), "mean": a.mean(), "max": a.max()}
        for i, a in enumerate(result.history.lambdas)
    ]
    _write_csv(os.path.join(out, "lambdas.csv"), ["step", "n", "min", "mean", "max"], lam_rows)
    record = {"dataset": ds.name, "variant": variant, "seed": cfg.seed}
    record.update(result.test_metrics.as_dict())
    record.update(wall_time=f"{wall:.3f}", checkpoint=ckpt, best_epoch=result.history.best_epoch, selection=result.selection)
    _write_csv(os.path.join(out, "run.csv"), list(record), [record])
    if result.test_metrics.zero_division:
        logger.warning("zero-division in metrics: %s", ", ".join(result.test_metrics.zero_division))
    print(",".join(record))
    print(",".join(_fmt(v) for v in record.values()))
    return EXIT_OK


def _checkpoint_data(args, resolved):
    if not args.data:
        raise UsageError(f"{args.command} needs --data")
    params = load_checkpoint(args.checkpoint)
    ds = load_csv(args.data, resolved["label_column"] or None)
    if ds.num_features != params.config.input_dim:
        raise CheckpointError(
            f"checkpoint expects {params.config.input_dim} features, {args.data} has {ds.num_features}"
        )
    if ds.num_classes > params.config.num_classes:
        raise CheckpointError(f"checkpoint has {params.config.num_classes} classes, data has {ds.num_classes}")
    return params, ds


def cmd_evaluate(args) -> int:
    resolved = _resolve(args)
    params, ds = _checkpoint_data(args, resolved)
    split = stratified_split(ds.y, resolved["test_ratio"], resolved["split_seed"])
    rows = {"test": split.test, "train": split.train, "all": np.arange(ds.y.size)}[args.split]
    scaler = checkpoint_scaler(params) or fit_scaler(ds.X[split.train])
    m = evaluate(params, scaler.transform(ds.X[rows]), ds.y[rows])
    record = {"dataset": ds.name, "split": args.split, "n": int(rows.size), **m.as_dict()}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "metrics.csv"), list(record), [record])
    print(",".join(record))
    print(",".join(_fmt(v) for v in record.values()))
    return EXIT_OK


def cmd_export(args) -> int:
    resolved = _resolve(args)
    params, ds = _checkpoint_data(args, resolved)
    if not args.out:
        raise UsageError("export-embeddings needs --out FILE")
    scaler = checkpoint_scaler(params)
    if scaler is None:
        split = stratified_split(ds.y, resolved["test_ratio"], resolved["split_seed"])
        scaler = fit_scaler(ds.X[split.train])
    out = model_forward(ad.Tensor(scaler.transform(ds.X)), params, mode="eval")
    emb = out.embedding.data
    pred = out.logits.data.argmax(axis=1)
    names = {i: lab for lab, i in ds.label_map.items()}
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"e{i}" for i in range(emb.shape[1])] + ["label", "pred"])
        for row, yt, yp in zip(emb, ds.y, pred):
            w.writerow(["%.17g" % v for v in row] + [names[int(yt)], names.get(int(yp), str(int(yp)))])
    logger.info("wrote %d embeddings to %s", emb.shape[0], args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    resolved = _resolve(args)
    if args.manifest:
        manifest = read_manifest(args.manifest)
    elif args.data:
        manifest = [(os.path.splitext(os.path.basename(args.data))[0], args.data, resolved["label_column"] or None)]
    else:
        raise UsageError("bench needs --manifest or --data")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if args.ablate:
        variants = [_variant(args)]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {', '.join(bad)}; valid: {', '.join(VARIANTS)}")
    out = args.out or "bench"
    new = run_bench(plan(manifest, variants, seeds, resolved, out), out, max(1, args.jobs))
    failed = [r for r in new if r["status"] != "ok"]
    print(f"ran {len(new)} run(s), {len(failed)} failed; results in {out}")
    for r in failed:
        print(f"  {r['dataset']}/{r['variant']}/{r['seed']}: {r['status']}")
    return EXIT_OK


STATS_FIELDS = ["metric", "n", "k", "chi2", "chi2_corrected", "c", "p", "p_corrected", "F_F", "df1", "df2", "critical", "decision"]


def _stats_row(scope, n, k, res, alpha) -> dict:
    decision, crit = iman_davenport_decision(res, alpha)
    return {
        "metric": scope, "n": n, "k": k, "chi2": res.chi2, "chi2_corrected": res.chi2_corrected, "c": res.c,
        "p": res.p_value, "p_corrected": res.p_value_corrected, "F_F": res.F_F, "df1": res.df1, "df2": res.df2,
        "critical": crit, "decision": decision,
    }  # fmt: skip


def _read_mean_ranks(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 3:
        raise DataError(f"{path}: need a header and at least two models")
    try:
        models = [r[0] for r in rows[1:]]
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if values.ndim != 2 or values.shape[1] < 1:
        raise DataError(f"{path}: expected model,rank[,rank...] rows")
    return models, values


def cmd_stats(args) -> int:
    _resolve(args)
    out_rows = []
    if args.mean_ranks:
        models, values = _read_mean_ranks(args.mean_ranks)
        if values.shape[1] == 1:
            if not args.n_measures:
                raise UsageError("a single mean-rank column needs --n-measures")
            if args.textbook:
                raise UsageError("--textbook needs one mean-rank column per measure")
            n = args.n_measures
            res = friedman_from_mean_ranks(values[:, 0], n)
        else:
            n = values.shape[1]
            res = global_friedman(values.T, args.textbook)
        out_rows.append(_stats_row("global", n, len(models), res, args.alpha))
    elif args.results:
        with open(args.results, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        missing = {"dataset", "model", "metric", "value"} - set(rows[0] if rows else {})
        if missing:
            raise DataError(f"{args.results}: missing column(s) {', '.join(sorted(missing))}")
        try:
            comparisons = compare_models(rows)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        for cmp_ in comparisons:
            out_rows.append(_stats_row(cmp_.metric, cmp_.ranks.n, cmp_.ranks.k, cmp_.result, args.alpha))
        if len(comparisons) >= 2 and len({tuple(c.models) for c in comparisons}) == 1:
            rank_rows = [c.result.mean_ranks for c in comparisons]
            res = global_friedman(rank_rows, args.textbook)
            out_rows.append(_stats_row("global", len(comparisons), len(rank_rows[0]), res, args.alpha))
        for cmp_ in comparisons:
            ranks = ", ".join(f"{m}={r:.3f}" for m, r in zip(cmp_.models, cmp_.result.mean_ranks))
            print(f"# mean ranks [{cmp_.metric}]: {ranks}")
    else:
        raise UsageError("stats needs --results or --mean-ranks")
    header = f"{'metric':10s} {'n':>3s} {'k':>3s} {'chi2':>10s} {'chi2_c':>10s} {'p':>10s} {'F_F':>8s} {'crit':>7s}  decision"
    print(header)
    for r in out_rows:
        print(
            f"{r['metric']:10s} {r['n']:3d} {r['k']:3d} {r['chi2']:10.4f} {r['chi2_corrected']:10.4f} "
            f"{r['p']:10.3e} {r['F_F']:8.4f} {r['critical']:7.4f}  {r['decision']}"
        )
        logger.debug("F p-value %s: %.4g", r["metric"], f_sf(r["F_F"], r["df1"], r["df2"]))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "stats.csv"), STATS_FIELDS, out_rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    _resolve(args)
    try:
        results = run_suite(args.op, args.instances)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.group:5s} {r.name:24s} max_rel_err={r.max_error:.3e} n={r.instances}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "stats": cmd_stats,
    "gradcheck": cmd_gradcheck,
    "export-embeddings": cmd_export,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"qclmix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericalError as exc:
        print(f"qclmix {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"qclmix {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
