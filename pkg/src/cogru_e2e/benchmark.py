"""Wall-clock comparison of Co-GRU and sliding-window Bi-GRU over one symbol stream.

Both models share the same weights and produce one output per position of an
``n_symbols`` stream. Co-GRU runs its two recurrences once per overlapping
circular block; the Bi-GRU re-runs both recurrences over a fresh 2L+1 window
for every position. Timings are medians after warm-up runs.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import replace

import numpy as np

from . import nn
from .nn import CoGruLayer

FIELDS = ("model", "window", "direction", "n_symbols", "median_s", "min_s", "repeats")


def _time(fn, warmup, repeats):
    for _ in range(warmup):
        fn()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), min(runs)


def _cogru_fns(layer, stream, block):
    blocks, n = nn.stream_blocks(stream, block, layer.edge_discard)
    y, cache = nn.cogru_forward(layer, blocks)
    g = np.ones_like(y)
    return (lambda: nn.cogru_forward(layer, blocks),
            lambda: nn.cogru_backward(layer, cache, g))


def _bigru_fns(layer, stream, half_window):
    open_layer = replace(layer, edge_discard=0)
    y, cache = nn.bigru_window_forward(open_layer, stream, half_window)
    g = np.ones_like(y)
    return (lambda: nn.bigru_window_forward(open_layer, stream, half_window),
            lambda: nn.bigru_window_backward(open_layer, cache, g))


def run_benchmark(cfg, seed=0):
    """Rows of :data:`FIELDS`, one per (model, window, direction).

    ``cfg`` is a :class:`~cogru_e2e.config.BenchmarkConfig`. The Co-GRU has no
    window; it is timed once per window value so its flat profile shows up in
    the same table. All Co-GRU rows are timed before any Bi-GRU row: the
    Bi-GRU's window caches churn enough memory to slow whatever runs next.
    """
    rng = np.random.default_rng(seed)
    layer = CoGruLayer.init(2, cfg.hidden, 2, rng, cfg.edge_discard)
    stream = rng.normal(0.0, np.sqrt(0.5), (cfg.n_symbols, 2))
    rows = []
    for model in ("cogru", "bigru"):
        for w in cfg.windows:
            w = int(w)
            if model == "cogru":
                fns = _cogru_fns(layer, stream, cfg.block)
            else:
                fns = _bigru_fns(layer, stream, w // 2)
            for direction, fn in zip(("forward", "backward"), fns):
                med, best = _time(fn, cfg.warmup, cfg.repeats)
                rows.append({"model": model, "window": w, "direction": direction,
                             "n_symbols": cfg.n_symbols, "median_s": med, "min_s": best,
                             "repeats": cfg.repeats})
    return rows


def speedups(rows):
    """{(window, direction): bigru_median / cogru_median}."""
    t = {(r["model"], r["window"], r["direction"]): r["median_s"] for r in rows}
    return {(w, d): t[("bigru", w, d)] / t[("cogru", w, d)]
            for (m, w, d) in t if m == "cogru"}
