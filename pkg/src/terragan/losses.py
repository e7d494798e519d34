"""Adversarial and reconstruction objectives for both GAN stages.

Two selectable adversarial variants share one code path: least-squares
(linear discriminator outputs, squared error against the 0/1 label) and
binary cross-entropy on pre-sigmoid logits. All reductions are means, so the
reconstruction weight is resolution- and batch-size-independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

VARIANTS = ("least_squares", "cross_entropy")
DISTANCES = ("l1", "l2")


@dataclass(frozen=True)
class LossConfig:
    variant: str = "least_squares"
    reconstruction_weight: float = 100.0
    distance: str = "l1"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}; expected one of {DISTANCES}")
        if not (self.reconstruction_weight >= 0 and self.reconstruction_weight < float("inf")):
            raise ValueError("reconstruction_weight must be finite and >= 0")


def _as_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=torch.float32) if not torch.is_tensor(x) else x
    if not torch.isfinite(t).all():
        raise ValueError("non-finite values in loss input")
    return t


def adversarial_loss(scores, target_label: int, variant: str = "least_squares") -> torch.Tensor:
    """Mean adversarial loss of a batch of scalar scores against a 0/1 label.

    least_squares treats scores as raw outputs; cross_entropy treats them as
    pre-sigmoid logits.
    """
    if target_label not in (0, 1):
        raise ValueError("target_label must be 0 or 1")
    scores = _as_tensor(scores)
    if variant == "least_squares":
        return ((scores - float(target_label)) ** 2).mean()
    if variant == "cross_entropy":
        target = torch.full_like(scores, float(target_label))
        return F.binary_cross_entropy_with_logits(scores, target)
    raise ValueError(f"unknown variant {variant!r}")


def reconstruction_loss(y, y_hat, distance: str = "l1") -> torch.Tensor:
    """Mean pixel-wise distance between target and prediction."""
    y = _as_tensor(y)
    y_hat = _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    if distance == "l1":
        return (y - y_hat).abs().mean()
    if distance == "l2":
        return ((y - y_hat) ** 2).mean()
    raise ValueError(f"unknown distance {distance!r}")


def heightmap_generator_objective(fake_scores, config: LossConfig) -> torch.Tensor:
    return adversarial_loss(fake_scores, 1, config.variant)


def heightmap_discriminator_objective(real_scores, fake_scores, config: LossConfig) -> torch.Tensor:
    return adversarial_loss(real_scores, 1, config.variant) + adversarial_loss(
        fake_scores, 0, config.variant
    )


def texture_generator_objective(fake_scores, y, y_hat, config: LossConfig) -> torch.Tensor:
    return adversarial_loss(fake_scores, 1, config.variant) + (
        config.reconstruction_weight * reconstruction_loss(y, y_hat, config.distance)
    )


def texture_discriminator_objective(real_pair_scores, fake_pair_scores, config: LossConfig) -> torch.Tensor:
    return adversarial_loss(real_pair_scores, 1, config.variant) + adversarial_loss(
        fake_pair_scores, 0, config.variant
    )
