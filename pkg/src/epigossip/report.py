"""Termination matrix across protocols, sizes and modes, as CSV and a figure."""

from __future__ import annotations

import csv
import os
from typing import Iterable

from .core import Mode
from .explorer import DEFAULT_MAX_STATES, Property, build_graph, check
from .protocol import builtin

FIELDS = ["protocol", "n", "mode", "termination", "fair_termination", "correctness",
          "states", "elapsed_ms"]


def termination_matrix(protocols: Iterable[str], sizes: Iterable[int],
                       max_states: int = DEFAULT_MAX_STATES) -> list[dict]:
    rows = []
    for name in protocols:
        for n in sizes:
            for mode in Mode:
                g = build_graph(builtin(name, n, mode), max_states=max_states)
                verdicts = {prop: check(g, prop) for prop in Property}
                rows.append({
                    "protocol": name.upper(),
                    "n": n,
                    "mode": mode.value,
                    "termination": verdicts[Property.TERMINATION].outcome.value,
                    "fair_termination": verdicts[Property.FAIR_TERMINATION].outcome.value,
                    "correctness": verdicts[Property.CORRECTNESS].outcome.value,
                    "states": len(g),
                    "elapsed_ms": round(g.elapsed_ms, 1),
                })
    return rows


def write_report(rows: list[dict], out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "termination_matrix.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS)
        w.writeheader()
        w.writerows(rows)
    png_path = os.path.join(out_dir, "termination_matrix.png")
    plot_matrix(rows, png_path)
    return csv_path, png_path


_SHADE = {"holds": 1.0, "fails": 0.0, "resource-limited": 0.5}
_MARK = {"holds": "yes", "fails": "no", "resource-limited": "?"}


def plot_matrix(rows: list[dict], path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = sorted({(r["protocol"], r["n"]) for r in rows},
                    key=lambda k: ([r["protocol"] for r in rows].index(k[0]), k[1]))
    columns = [(m.value, col) for m in Mode for col in ("termination", "fair_termination")]
    cell = {(r["protocol"], r["n"], r["mode"], col): r[col]
            for r in rows for col in ("termination", "fair_termination")}
    grid = [[_SHADE[cell[(p, n, m, col)]] for m, col in columns] for p, n in labels]

    fig, ax = plt.subplots(figsize=(1.2 * len(columns) + 2, 0.5 * len(labels) + 1.5))
    ax.imshow(grid, cmap="RdYlGn", vmin=0, vmax=1, aspect="auto")
    for i, (p, n) in enumerate(labels):
        for j, (m, col) in enumerate(columns):
            ax.text(j, i, _MARK[cell[(p, n, m, col)]], ha="center", va="center", fontsize=9)
    ax.set_xticks(range(len(columns)))
    ax.set_xticklabels([f"{'T' if col == 'termination' else 'FT'}\n{m}" for m, col in columns])
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels([f"{p} n={n}" for p, n in labels])
    ax.set_title("Termination (T) and fair termination (FT)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
