"""Figures and tab-separated tables for training runs and Stage-2 ablations."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_tsv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (f"{v:.6g}" if isinstance(v, float) else v) for v in row])
    return path


def read_tsv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return rows[0], rows[1:]


def training_report(log: Sequence[dict], out_dir, stem: str = "training") -> tuple[Path, Path]:
    """Loss curves (left) and held-out PER (right) plus the same numbers as TSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = ("epoch", "hybrid_loss", "ctc_loss", "ce_loss", "per")
    tsv = write_tsv(out_dir / f"{stem}.tsv", cols, ([r.get(c) for c in cols] for r in log))
    epochs = [r["epoch"] for r in log]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key, label in (("hybrid_loss", "hybrid"), ("ctc_loss", "CTC"), ("ce_loss", "CE")):
        ax1.plot(epochs, [r[key] for r in log], marker="o", ms=3, label=label)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.legend()
    pers = [(e, r["per"]) for e, r in zip(epochs, log) if r.get("per") is not None]
    if pers:
        ax2.plot(*zip(*pers), marker="o", ms=3, color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("held-out PER")
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return png, tsv


def ablation_report(rows: Sequence[tuple[float, float, float]], out_dir,
                    stem: str = "stage2_ablation") -> tuple[Path, Path]:
    """WER against introduced phoneme error for greedy and beam reconstruction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tsv = write_tsv(out_dir / f"{stem}.tsv", ("error_rate", "greedy_wer", "beam_wer"), rows)
    rates = [100 * r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(rates, [100 * r[1] for r in rows], marker="s", label="greedy (width 1)")
    ax.plot(rates, [100 * r[2] for r in rows], marker="o", label="beam")
    ax.set_xlabel("introduced error [%]")
    ax.set_ylabel("WER [%]")
    ax.legend()
    fig.tight_layout()
    png = out_dir / f"{stem}.png"
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return png, tsv
