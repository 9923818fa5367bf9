"""Segmentation and adversarial losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor

LOG_EPS = 1e-12


@dataclass
class LossConfig:
    beta: float = 5e-6  # L1 weight
    lam: float = 5e-3  # adversarial weight
    use_l1: bool = False
    use_gan: bool = False
    saturating_generator: bool = False  # literal log(1 - D(G(x))) instead of -log D(G(x))

    def __post_init__(self):
        if self.beta < 0 or self.lam < 0:
            raise ValueError(f"loss weights must be non-negative (beta={self.beta}, lambda={self.lam})")


def _same_shape(x: Tensor, y: Tensor, name: str) -> None:
    if x.shape != y.shape:
        raise ValueError(f"{name}: prediction shape {x.shape} differs from target shape {y.shape}")


def l1_loss(x: Tensor, y: Tensor, beta: float = 5e-6) -> Tensor:
    """(beta / n) * sum |x - y|"""
    _same_shape(x, y, "l1_loss")
    return F.scale(F.mean(F.abs(F.sub(x, y))), beta)


def mse_loss(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "mse_loss")
    return F.mean(F.square(F.sub(x, y)))


def _check_probs(p: Tensor, name: str) -> None:
    if (p.data < 0).any() or (p.data > 1).any():
        raise ValueError(f"{name}: discriminator outputs must lie in [0, 1]")


def _safe_log(p: Tensor) -> Tensor:
    return F.log(F.clip(p, LOG_EPS, 1.0))


def gan_loss_discriminator(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean(log D(real)) - mean(log(1 - D(fake)))"""
    _check_probs(d_real, "gan_loss_discriminator")
    _check_probs(d_fake, "gan_loss_discriminator")
    real = F.mean(_safe_log(d_real))
    fake = F.mean(_safe_log(F.sub(1.0, d_fake)))
    return F.scale(F.add(real, fake), -1.0)


def gan_loss_generator(d_fake: Tensor, saturating: bool = False) -> Tensor:
    """Non-saturating -mean(log D(G(x))); ``saturating`` gives mean(log(1 - D(G(x))))."""
    _check_probs(d_fake, "gan_loss_generator")
    if saturating:
        return F.mean(_safe_log(F.sub(1.0, d_fake)))
    return F.scale(F.mean(_safe_log(d_fake)), -1.0)


def total_loss(mse: Tensor, gan_g: Tensor, l1: Tensor, cfg: LossConfig) -> Tensor:
    """MSE + lambda * GAN + L1, dropping disabled terms. L1 already carries beta."""
    out = mse
    if cfg.use_gan:
        out = F.add(out, F.scale(gan_g, cfg.lam))
    if cfg.use_l1:
        out = F.add(out, l1)
    return out


def as_float(x: Tensor) -> float:
    return float(np.asarray(x.data).item())
