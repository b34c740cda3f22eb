"""CSV and metadata writers plus SVG plots drawn from the CSV tables."""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from importlib import metadata as importlib_metadata
from pathlib import Path

UNITS = {
    "re": "bit/s/Hz/W",
    "se": "bit/s/Hz",
    "ee": "bit/J",
    "power": "W",
    "dbm": "dBm",
    "count": "count",
    "none": "dimensionless",
    "label": "label",
}


@dataclass
class Table:
    """Column names with units, and rows in output order."""

    name: str
    columns: list[tuple[str, str]]
    rows: list[tuple] = field(default_factory=list)

    def header(self) -> list[str]:
        return [f"{c} [{UNITS[u]}]" for c, u in self.columns]

    def column(self, name: str) -> list:
        i = [c for c, _ in self.columns].index(name)
        return [r[i] for r in self.rows]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(table: Table, out_dir: str | Path) -> Path:
    """Write ``<name>.csv``; floats use their shortest round-trip repr so
    identical results give identical bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{table.name}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header())
        for r in table.rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return [h.split(" [")[0] for h in rows[0]], rows[1:]


def versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("starris", "numpy", "scipy", "clarabel", "cvxopt", "pydantic", "pyyaml", "matplotlib"):
        try:
            out[pkg] = importlib_metadata.version(pkg)
        except importlib_metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_metadata(out_dir: str | Path, name: str, payload: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.metadata.json"
    body = dict(payload)
    body["versions"] = versions()
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return path


# ---------------------------------------------------------------------------
# plots


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "starris"
    return plt


def _floats(values):
    return [float(v) for v in values]


def plot_convergence(csv_path: str | Path, out: str | Path) -> Path:
    names, rows = read_csv(csv_path)
    it, n, mean = names.index("iteration"), names.index("N"), names.index("mean_re")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for value in sorted({r[n] for r in rows}, key=int):
        sub = [r for r in rows if r[n] == value]
        ax.plot(_floats(r[it] for r in sub), _floats(r[mean] for r in sub), marker="o", ms=3, label=f"N = {value}")
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("RE (bit/s/Hz/W)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out)


def plot_re_vs_m(csv_path: str | Path, out: str | Path) -> Path:
    names, rows = read_csv(csv_path)
    sc, m, mean = names.index("scheme"), names.index("M"), names.index("mean_re")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for scheme in dict.fromkeys(r[sc] for r in rows):
        sub = sorted((r for r in rows if r[sc] == scheme), key=lambda r: int(r[m]))
        ax.plot([int(r[m]) for r in sub], _floats(r[mean] for r in sub), marker="o", ms=3, label=scheme)
    ax.set_xlabel("STAR-RIS elements M")
    ax.set_ylabel("mean RE (bit/s/Hz/W)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out)


def plot_se_ee(csv_path: str | Path, out: str | Path) -> Path:
    names, rows = read_csv(csv_path)
    pb, se, ee, par = (names.index(k) for k in ("p_bs_max_dbm", "mean_se", "mean_ee", "pareto"))
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for budget in dict.fromkeys(r[pb] for r in rows):
        sub = [r for r in rows if r[pb] == budget]
        pts = ax.scatter(_floats(r[se] for r in sub), _floats(r[ee] for r in sub), s=14, label=f"{budget} dBm")
        front = sorted((r for r in sub if r[par] == "true"), key=lambda r: float(r[se]))
        ax.plot(_floats(r[se] for r in front), _floats(r[ee] for r in front), color=pts.get_facecolor()[0], lw=1)
    ax.set_xlabel("SE (bit/s/Hz)")
    ax.set_ylabel("EE (bit/J)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(out)
