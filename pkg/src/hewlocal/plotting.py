"""SVG figures from run directories: curves against communication and horizon-grouped weight mass."""

from __future__ import annotations

import json
import logging
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

LABELS = {
    "hew": "HEW",
    "hew_fixed": "HEW-Fixed",
    "post_het": "PostLocal-Het",
    "post_hom": "PostLocal-Hom",
    "uniform_localsgd": "Uniform-LocalSGD",
    "fedavg": "FedAvg",
    "fednova": "FedNova",
    "scaffold": "SCAFFOLD",
    "fedprox": "FedProx",
    "mbsgd": "MB-SGD",
}

SERIES = {"accuracy": ("test_accuracy", "test accuracy"), "gap": ("train_gap", "training gap")}


def _style():
    plt.rcParams.update({"svg.hashsalt": "hewlocal", "svg.fonttype": "path", "figure.dpi": 100})


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_series(methods: dict, key: str, ylabel: str, path, title: str = "") -> Path:
    """Mean curve with a +-1 std band per method; ``methods`` maps name to an aggregate."""
    _style()
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    positive = True
    for name in sorted(methods):
        agg = methods[name]
        x = np.asarray(agg["comm"], dtype=float)
        mu = np.asarray(agg[key]["mean"])
        sd = np.asarray(agg[key]["std"])
        (line,) = ax.plot(x, mu, label=LABELS.get(name, name), lw=1.4)
        ax.fill_between(x, mu - sd, mu + sd, color=line.get_color(), alpha=0.2, lw=0)
        positive &= bool(np.all(mu - sd > 0))
    if key == "train_gap" and positive:
        ax.set_yscale("log")
    ax.set_xlabel("transmitted scalars")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, Path(path))


def plot_weight_mass(masses: dict, path, title: str = "") -> Path:
    """Grouped bars of final weight mass per horizon value, one group per method."""
    _style()
    names = sorted(masses)
    horizons = sorted({int(h) for m in masses.values() for h in m})
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    width = 0.8 / max(len(names), 1)
    xs = np.arange(len(horizons))
    for k, name in enumerate(names):
        vals = [masses[name].get(str(h), 0.0) for h in horizons]
        ax.bar(xs + (k - (len(names) - 1) / 2) * width, vals, width, label=LABELS.get(name, name))
    ax.set_xticks(xs, [f"H={h}" for h in horizons])
    ax.set_ylabel("final weight mass")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, Path(path))


def load_aggregates(run_dir) -> dict:
    """Aggregates per method from ``summary.json``, or rebuilt from the JSONL files."""
    from .experiment import aggregate, read_jsonl

    run_dir = Path(run_dir)
    summary = run_dir / "summary.json"
    if summary.exists():
        return json.loads(summary.read_text()).get("methods", {})
    runs: dict = {}
    for f in sorted(run_dir.glob("*.jsonl")):
        recs = [r for r in read_jsonl(f) if "error" not in r]
        if recs:
            runs.setdefault(recs[0]["method"], {})[recs[0]["seed"]] = recs
    return {m: aggregate(r) for m, r in runs.items()}


def emit_plots(run_dir, out_dir=None) -> list[Path]:
    """Write the accuracy, gap and (for several horizons) weight-mass SVGs."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    methods = load_aggregates(run_dir) if run_dir.exists() else {}
    methods = {m: a for m, a in methods.items() if a.get("comm")}
    if not methods:
        warnings.warn(f"no metrics under {run_dir}; nothing to plot", RuntimeWarning, stacklevel=2)
        return []
    out.mkdir(parents=True, exist_ok=True)
    title = run_dir.name
    paths = [plot_series(methods, key, label, out / f"{name}.svg", title) for name, (key, label) in SERIES.items()]
    hew_like = {m: a["final_weight_mass_by_H"] for m, a in methods.items() if m in ("hew", "hew_fixed") and "final_weight_mass_by_H" in a}
    if hew_like and len(next(iter(hew_like.values()))) > 1:
        paths.append(plot_weight_mass(hew_like, out / "weight_mass.svg", title))
    return paths
