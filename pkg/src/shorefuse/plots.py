"""PNG rendering for evaluation reports, ablation and robustness tables, and training logs."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import FormatError  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _table_png(rows: list[list[str]], header: list[str], path: Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(1.8 * len(header), 0.45 * (len(rows) + 2)))
    ax.axis("off")
    ax.set_title(title)
    table = ax.table(cellText=rows, colLabels=header, loc="center")
    table.scale(1, 1.3)
    return _save(fig, path)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.4f}" if isinstance(v, float) else str(v)


def plot_eval_report(raw: dict, out: Path) -> list[Path]:
    seqs = sorted(raw["per_sequence"])
    full = [raw["per_sequence"][s]["miou_full"] or 0.0 for s in seqs]
    sel = [raw["per_sequence"][s]["miou_selected"] or 0.0 for s in seqs]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(seqs)), 4))
    xs = range(len(seqs))
    ax.bar([x - 0.2 for x in xs], full, 0.4, label="full image")
    ax.bar([x + 0.2 for x in xs], sel, 0.4, label="selected zone")
    ax.set_xticks(list(xs), seqs, rotation=30, ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_ylabel("MIoU")
    ax.legend()
    bars = _save(fig, out / "miou_per_sequence.png")
    agg = raw["aggregate"]
    table = _table_png(
        [[k, _fmt(v)] for k, v in sorted(agg.items())], ["metric", "mean"], out / "aggregate.png", "aggregate"
    )
    return [bars, table]


def plot_ablation(raw: dict, out: Path) -> list[Path]:
    rows = raw["rows"]
    body = [[r["config"], _fmt(r["miou_selected"]), _fmt(r["miou_full"]), str(r["parameter_count"])] for r in rows]
    return [_table_png(body, ["config", "MIoU selected", "MIoU full", "parameters"], out / "ablation.png", "ablation")]


def plot_robustness(raw: dict, out: Path) -> list[Path]:
    conds = list(raw["conditions"])
    body = [
        [c, _fmt(raw["conditions"][c]["aggregate"]["miou_selected"]), _fmt(raw["conditions"][c]["aggregate"]["miou_full"])]
        for c in conds
    ]
    return [_table_png(body, ["condition", "MIoU selected", "MIoU full"], out / "robustness.png", "robustness")]


def plot_log(entries: list[dict], out: Path) -> list[Path]:
    fig, ax = plt.subplots(figsize=(6, 4))
    its = [e["iteration"] for e in entries]
    for key in ("total", "l_ce", "l_dice", "l_con"):
        ax.plot(its, [e[key] for e in entries], label=key, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    return [_save(fig, out / "loss_curve.png")]


def plot_any(path: str | Path, out_dir: str | Path) -> list[Path]:
    """Detect the file kind and render the matching figures into ``out_dir``."""
    path, out = Path(path), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = path.read_text()
    if path.suffix == ".jsonl":
        return plot_log([json.loads(line) for line in text.splitlines() if line.strip()], out)
    raw = json.loads(text)
    if "per_sequence" in raw:
        return plot_eval_report(raw, out)
    if "rows" in raw and "conditions" in raw:
        return plot_robustness(raw, out)
    if "rows" in raw:
        return plot_ablation(raw, out)
    raise FormatError(f"{path}: not a report, ablation, robustness or training log file")
