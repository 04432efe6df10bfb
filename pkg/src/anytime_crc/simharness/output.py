"""Trace CSV, summary JSON and optional SVG output."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from .experiments import ExperimentResult, RunTrace

TRACE_COLUMNS = ("run", "n", "gamma", "lambda", "risk", "band_low", "violated")


def fmt_float(x: float) -> str:
    """Shortest round-trip text of a double; empty for NaN (undefined)."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def trace_rows(traces: Sequence[RunTrace]):
    for t in traces:
        for j in range(t.n.size):
            yield (str(t.run), str(int(t.n[j])), fmt_float(t.gamma[j]), fmt_float(t.lam[j]),
                   fmt_float(t.risk[j]), fmt_float(t.band_low[j]), "1" if t.violated_at[j] else "0")


def traces_to_csv(traces: Sequence[RunTrace]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(trace_rows(traces))
    return buf.getvalue()


def traces_to_json(traces: Sequence[RunTrace]) -> str:
    recs = [dict(zip(TRACE_COLUMNS, row)) for row in trace_rows(traces)]
    return dumps_json(recs)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_float(row[c]) if isinstance(row[c], float) else str(row[c])
                         for c in columns])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_experiment(result: ExperimentResult, out_dir: str | Path, fmt: str = "csv",
                     svg: bool = False) -> list[Path]:
    """Write ``trace.csv`` (or ``trace.json``), ``summary.json`` and optionally ``risk.svg``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = []
    if fmt == "csv":
        path = out / "trace.csv"
        _write(path, traces_to_csv(result.traces))
    elif fmt == "json":
        path = out / "trace.json"
        _write(path, traces_to_json(result.traces))
    else:
        raise ConfigurationError(f"format must be 'csv' or 'json', got {fmt!r}")
    written.append(path)
    path = out / "summary.json"
    _write(path, dumps_json(result.summary))
    written.append(path)
    if svg:
        path = out / "risk.svg"
        plot_risk_svg(result, path)
        written.append(path)
    return written


def plot_risk_svg(result: ExperimentResult, path: str | Path, panels: int = 6,
                  per_panel: int = 10) -> None:
    """Small multiples of per-run risk trajectories against the target level."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ConfigurationError("SVG output needs matplotlib (install the 'plot' extra)") from exc
    traces = result.traces
    alpha = result.config.alpha
    panels = max(1, min(panels, math.ceil(len(traces) / per_panel)))
    cols = min(3, panels)
    rows = math.ceil(panels / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False,
                             sharex=True, sharey=True)
    for p, ax in enumerate(axes.ravel()):
        if p >= panels:
            ax.axis("off")
            continue
        for t in traces[p * per_panel:(p + 1) * per_panel]:
            ax.plot(t.n, t.risk, lw=0.8, color="tab:red" if t.violated else "tab:green")
        ax.axhline(alpha, color="k", lw=0.8, ls="--")
        ax.set_xscale("log")
        ax.set_title(f"runs {p * per_panel}-{min(len(traces), (p + 1) * per_panel) - 1}", fontsize=8)
    fig.supxlabel("n")
    fig.supylabel("conditional risk")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
