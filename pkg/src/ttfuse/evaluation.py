"""Repeated-split evaluation and strategy benchmarking with CSV reports."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .fusion import BASELINES, TTTConfig, fuse_baselines, fuse_pipeline
from .phantom import split

TTT_METHOD = "tttfusion"
BASELINE_METHODS = tuple(f"sfnn_{s}" for s in BASELINES)
METRIC_NAMES = ("psnr", "ssim", "fmi", "fsim", "en")
TABLE_COLUMNS = ["dataset", "method"] + [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")]
BENCH_COLUMNS = TABLE_COLUMNS + ["sec_per_pair"]


def worker_count():
    env = os.environ.get("TTFUSE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"TTFUSE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def split_seed(base_seed, repeat):
    return base_seed + repeat


def quantize8(image):
    """What an 8-bit image file would hold."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def fuse_methods(net, pair, ttt, methods, timed=False):
    """Fuse one pair with every requested method -> {method: (image, seconds)}."""
    out = {}
    for method in methods:
        start = time.perf_counter()
        if method == TTT_METHOD:
            image = fuse_pipeline(net, pair.a, pair.b, ttt).image
        else:
            strategy = method.removeprefix("sfnn_")
            image = fuse_baselines(net, pair.a, pair.b, (strategy,))[strategy]
        out[method] = (image, time.perf_counter() - start if timed else 0.0)
    return out


def score_pair(net, pair, ttt, methods, timed=False):
    fused = fuse_methods(net, pair, ttt, methods, timed)
    return {m: (metrics.evaluate(quantize8(img), pair.a, pair.b), sec)
            for m, (img, sec) in fused.items()}


@dataclass
class RunResult:
    """Per-method means over one test split."""
    test_names: list
    means: dict                       # method -> {metric: value}
    seconds: dict = field(default_factory=dict)   # method -> mean seconds per pair


def run_split(net, pairs, ttt, methods, workers=None, timed=False):
    workers = workers or worker_count()
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(lambda p: score_pair(net, p, ttt, methods, timed), pairs))
    else:
        scored = [score_pair(net, p, ttt, methods, timed) for p in pairs]
    means, seconds = {}, {}
    for m in methods:
        rows = [s[m][0].as_dict() for s in scored]
        means[m] = {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}
        seconds[m] = float(np.mean([s[m][1] for s in scored]))
    return RunResult([p.name for p in pairs], means, seconds)


def run_protocol(net, dataset, test_count, repeats, seed, ttt=None, methods=None,
                 workers=None, timed=False, on_run=None):
    """``repeats`` independent seeded test splits; every method sees the same split."""
    ttt = ttt or TTTConfig()
    methods = sorted(methods or (TTT_METHOD,) + BASELINE_METHODS)
    runs = []
    for r in range(repeats):
        _, test = split(dataset.names, test_count, split_seed(seed, r))
        if not test:
            raise ValueError("empty test split")
        result = run_split(net, dataset.load_many(test), ttt, methods, workers, timed)
        runs.append(result)
        if on_run is not None:
            on_run(r, result)
    return runs


def aggregate(runs):
    """method -> {metric_mean, metric_std} across runs (sample std; 0 for one run)."""
    table = {}
    for method in sorted(runs[0].means):
        row = {}
        for k in METRIC_NAMES:
            vals = np.array([run.means[method][k] for run in runs])
            row[f"{k}_mean"] = float(vals.mean())
            row[f"{k}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        row["sec_per_pair"] = float(np.mean([run.seconds.get(method, 0.0) for run in runs]))
        table[method] = row
    return table


def _fmt(x):
    return f"{x:.6f}"


def write_table(path, dataset_name, table, timing=False):
    columns = BENCH_COLUMNS if timing else TABLE_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for method in sorted(table):
            row = table[method]
            writer.writerow([dataset_name, method] + [_fmt(row[c]) for c in columns[2:]])


def write_runs(path, runs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "method"] + list(METRIC_NAMES))
        for i, run in enumerate(runs):
            for method in sorted(run.means):
                writer.writerow([i, method] + [_fmt(run.means[method][k]) for k in METRIC_NAMES])


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
