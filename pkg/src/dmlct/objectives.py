"""Least-squares GAN, identity and total generator losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_idt: float = 5.0
    lambda_m: float = 0.1
    tau: float = 0.15

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        # zero is allowed so single terms can be switched off in ablations
        if self.lambda_idt < 0 or self.lambda_m < 0:
            raise ValueError("loss weights must be >= 0")


def _nonempty(t: Tensor, name: str) -> None:
    if t.numel() == 0:
        raise ValueError(f"{name} score map is empty")


def gan_loss_generator(d_fake: Tensor) -> Tensor:
    _nonempty(d_fake, "fake")
    return ((d_fake - 1.0) ** 2).mean()


def gan_loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    _nonempty(d_real, "real")
    _nonempty(d_fake, "fake")
    return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()


def identity_loss(g_of_y: Tensor, y: Tensor) -> Tensor:
    if g_of_y.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(g_of_y.shape)} vs {tuple(y.shape)}")
    return (g_of_y - y).abs().mean()


def total_generator_loss(gan, idt, m1, m2, w: LossWeights = LossWeights()):
    for name, v in (("gan", gan), ("idt", idt), ("m1", m1), ("m2", m2)):
        val = float(v.detach()) if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise NonFiniteLossError(f"non-finite {name} loss component: {val}")
    return gan + w.lambda_idt * idt + w.lambda_m * (m1 + m2)
