"""Datasets x variants x seeds sweeps with resumable, lock-guarded CSV output."""

from __future__ import annotations

import csv
import fcntl
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

from .data import load_csv, stratified_split
from .metrics import METRIC_NAMES
from .training import VARIANTS, TrainConfig, save_checkpoint, train

logger = logging.getLogger(__name__)

RUN_FIELDS = ["dataset", "variant", "seed", *METRIC_NAMES, "wall_time", "checkpoint", "status"]
RESULT_FIELDS = ["dataset", "model", "metric", "value"]


@dataclass
class RunSpec:
    dataset: str
    path: str
    label_column: Optional[str]
    variant: str
    seed: int
    resolved: dict
    out_dir: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.dataset, self.variant, str(self.seed))


def append_rows(path: str, fields: list[str], rows: Iterable[dict]) -> None:
    """Append under an exclusive lock, writing the header if the file is new."""
    with open(path, "a+", newline="", encoding="utf-8") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.seek(0, os.SEEK_END)
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            if fh.tell() == 0:
                writer.writeheader()
            for row in rows:
                writer.writerow(row)
            fh.flush()
            os.fsync(fh.fileno())
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def completed_keys(path: str) -> set[tuple[str, str, str]]:
    if not os.path.exists(path):
        return set()
    with open(path, newline="", encoding="utf-8") as fh:
        return {(r["dataset"], r["variant"], r["seed"]) for r in csv.DictReader(fh)}


def run_one(spec: RunSpec) -> dict:
    """Train and evaluate one (dataset, variant, seed); failures become a row."""
    from .config import train_config

    start = time.perf_counter()
    row = {"dataset": spec.dataset, "variant": spec.variant, "seed": spec.seed}
    try:
        ds = load_csv(spec.path, spec.label_column, spec.dataset)
        split = stratified_split(ds.y, spec.resolved["test_ratio"], spec.resolved["split_seed"])
        cfg: TrainConfig = train_config({**spec.resolved, "seed": spec.seed}).ablate(spec.variant)
        result = train(ds, split, cfg)
        ckpt = os.path.join(spec.out_dir, "checkpoints", f"{spec.dataset}-{spec.variant}-{spec.seed}.ckpt")
        os.makedirs(os.path.dirname(ckpt), exist_ok=True)
        save_checkpoint(result.params, ckpt)
        row.update(result.test_metrics.as_dict())
        row.update(checkpoint=ckpt, status="ok")
    except Exception as exc:  # recorded, the sweep continues
        logger.debug(traceback.format_exc())
        row.update({m: "" for m in METRIC_NAMES})
        row.update(checkpoint="", status=f"error: {type(exc).__name__}: {exc}".replace("\n", " "))
    row["wall_time"] = f"{time.perf_counter() - start:.3f}"
    return row


def result_rows(row: dict) -> list[dict]:
    if row["status"] != "ok":
        return []
    return [{"dataset": row["dataset"], "model": row["variant"], "metric": m, "value": row[m]} for m in METRIC_NAMES]


def plan(
    manifest: list[tuple[str, str, Optional[str]]],
    variants: list[str],
    seeds: list[int],
    resolved: dict,
    out_dir: str,
) -> list[RunSpec]:
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    specs = []
    for name, path, label in manifest:
        for v in variants:
            for s in seeds:
                specs.append(RunSpec(name, path, label, v, s, resolved, out_dir))
    return specs


def run_bench(specs: list[RunSpec], out_dir: str, jobs: int = 1) -> list[dict]:
    """Run every spec whose key is not yet in ``runs.csv``; returns the new rows."""
    os.makedirs(out_dir, exist_ok=True)
    runs_path = os.path.join(out_dir, "runs.csv")
    results_path = os.path.join(out_dir, "results.csv")
    done = completed_keys(runs_path)
    todo = [s for s in specs if s.key not in done]
    logger.info("bench: %d planned, %d already done, %d to run", len(specs), len(specs) - len(todo), len(todo))

    def record(row: dict) -> None:
        append_rows(runs_path, RUN_FIELDS, [row])
        append_rows(results_path, RESULT_FIELDS, result_rows(row))
        logger.info("%s/%s/seed %s: %s maF1=%s", row["dataset"], row["variant"], row["seed"], row["status"], row.get("maF1"))

    new_rows = []
    if jobs <= 1:
        for spec in todo:
            row = run_one(spec)
            record(row)
            new_rows.append(row)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for row in pool.map(run_one, todo):
                record(row)
                new_rows.append(row)
    return new_rows
