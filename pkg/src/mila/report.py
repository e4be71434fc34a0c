"""Run reports: training curves and summary figures plus delimited metrics.

Figures are rendered headlessly to PNG files; the numbers behind them go to
metrics.csv next to the images so downstream tooling never has to scrape a
plot.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .fedsim import SessionLog


def write_metrics_csv(logs: dict[str, SessionLog], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["model_id", "experiment_id", "round", "global_loss", "accuracy", "macro_f1"]
        )
        for model_id in sorted(logs):
            log = logs[model_id]
            for entry in log.rounds:
                writer.writerow(
                    [
                        model_id,
                        log.experiment_id,
                        entry.round,
                        repr(entry.global_loss),
                        repr(entry.global_metrics["accuracy"]),
                        repr(entry.global_metrics["macro_f1"]),
                    ]
                )


def _training_figure(log: SessionLog, path: Path) -> None:
    rounds = [entry.round for entry in log.rounds]
    losses = [entry.global_loss for entry in log.rounds]
    accuracy = [entry.global_metrics["accuracy"] for entry in log.rounds]
    macro_f1 = [entry.global_metrics["macro_f1"] for entry in log.rounds]

    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(rounds, losses, marker="o", color="tab:red")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("weighted loss")
    ax_loss.set_title("training loss")
    ax_metric.plot(rounds, accuracy, marker="o", label="accuracy")
    ax_metric.plot(rounds, macro_f1, marker="s", label="macro F1")
    ax_metric.set_xlabel("round")
    ax_metric.set_ylim(-0.05, 1.05)
    ax_metric.set_title("pooled evaluation")
    ax_metric.legend(loc="lower right")
    fig.suptitle(log.model_id)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _summary_figure(logs: dict[str, SessionLog], path: Path) -> None:
    model_ids = sorted(logs)
    accuracy = [logs[m].rounds[-1].global_metrics["accuracy"] for m in model_ids]
    macro_f1 = [logs[m].rounds[-1].global_metrics["macro_f1"] for m in model_ids]
    positions = range(len(model_ids))

    fig, ax = plt.subplots(figsize=(1.8 * max(len(model_ids), 2) + 2, 3.5))
    width = 0.38
    ax.bar([p - width / 2 for p in positions], accuracy, width, label="accuracy")
    ax.bar([p + width / 2 for p in positions], macro_f1, width, label="macro F1")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(model_ids, rotation=15, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("final round, pooled over sites")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report(logs: dict[str, SessionLog], out_dir: Path) -> list[Path]:
    """Write per-model curve figures, a cross-model summary, and metrics.csv.
    Returns the written paths in a fixed order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for model_id in sorted(logs):
        figure_path = out_dir / f"{model_id}_training.png"
        _training_figure(logs[model_id], figure_path)
        written.append(figure_path)
    if logs:
        summary_path = out_dir / "summary.png"
        _summary_figure(logs, summary_path)
        written.append(summary_path)
    metrics_path = out_dir / "metrics.csv"
    write_metrics_csv(logs, metrics_path)
    written.append(metrics_path)
    return written
