"""Figure rendering for training runs: loss curves written next to the CSV log."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .training import TrainingLog


def plot_training_curves(log: TrainingLog, path, title: str = "training losses") -> None:
    """Render generator/discriminator loss curves to an image file."""
    steps = [r.step for r in log.records]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(steps, [r.generator_loss for r in log.records], label="generator", lw=1)
    ax.plot(steps, [r.discriminator_loss for r in log.records], label="discriminator", lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(Path(path)), dpi=120)
    plt.close(fig)
