"""Reconstruction, WGAN-GP adversarial and attribute classification losses.

Every function returns a scalar to be minimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor


@dataclass
class LossWeights:
    lambda_rec: float = 100.0
    lambda_cls: float = 10.0
    lambda_gp: float = 10.0
    lambda_adv: float = 1.0
    # local-to-global consistency; used by the patch stage only
    lambda_cons: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


def _critic(dsc, x: Tensor) -> Tensor:
    out = dsc(x)
    return out[0] if isinstance(out, tuple) else out


def _classify(dsc, x: Tensor) -> Tensor:
    out = dsc(x)
    return out[1] if isinstance(out, tuple) else out


def rec_loss(x: Tensor, g, target: Tensor | None = None, n_attributes: int | None = None) -> Tensor:
    """Mean absolute error between the target and ``g(x, 0)``.

    ``target`` defaults to ``x`` (its first three channels for 6-channel
    patch inputs).
    """
    if target is None:
        target = x[:, :3]
    if n_attributes is None:
        n_attributes = g.spec.n_attributes
    zero = torch.zeros(x.shape[0], n_attributes, dtype=x.dtype, device=x.device)
    return (target - g(x, zero)).abs().mean()


def interpolate(real: Tensor, fake: Tensor, eps: Tensor | None = None,
                generator: torch.Generator | None = None) -> Tensor:
    if eps is None:
        eps = torch.rand(real.shape[0], generator=generator, dtype=real.dtype, device=real.device)
    eps = eps.reshape(-1, *([1] * (real.dim() - 1)))
    return eps * real + (1 - eps) * fake


def gradient_penalty(dsc, real: Tensor, fake: Tensor, eps: Tensor | None = None,
                     generator: torch.Generator | None = None) -> Tensor:
    """E[(||grad_x D(x_hat)||_2 - 1)^2] along real/fake interpolates."""
    x_hat = interpolate(real.detach(), fake.detach(), eps, generator).requires_grad_(True)
    score = _critic(dsc, x_hat)
    if score.requires_grad:
        (grad,) = torch.autograd.grad(score.sum(), x_hat, create_graph=True, allow_unused=True)
    else:
        grad = None
    if grad is None:
        grad = torch.zeros_like(x_hat)
    norm = grad.flatten(1).norm(2, dim=1)
    return ((norm - 1) ** 2).mean()


def d_adv_loss(dsc, real: Tensor, fake: Tensor, lambda_gp: float = 10.0,
               eps: Tensor | None = None, generator: torch.Generator | None = None) -> Tensor:
    """E[D(fake)] - E[D(real)] + lambda_gp * gradient penalty."""
    wasserstein = _critic(dsc, fake).mean() - _critic(dsc, real).mean()
    if lambda_gp == 0:
        return wasserstein
    return wasserstein + lambda_gp * gradient_penalty(dsc, real, fake, eps, generator)


def g_adv_loss(dsc, fake: Tensor) -> Tensor:
    return -_critic(dsc, fake).mean()


def attr_cls_loss(logits: Tensor, targets: Tensor) -> Tensor:
    """Per-attribute binary cross-entropy, summed over attributes, averaged over the batch."""
    if logits.shape != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} differ")
    bce = F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="none")
    return bce.sum(dim=1).mean()


def combine(components: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    total = None
    for name, value in components.items():
        term = weights.get(name, 0.0) * value
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no loss components given")
    return total


def total_d_loss(dsc, real: Tensor, fake: Tensor, source: Tensor, w: LossWeights,
                 eps: Tensor | None = None, generator: torch.Generator | None = None):
    """Critic objective: adversarial + penalty, plus classification of REAL images against SOURCE labels.

    Returns ``(total, components)``.
    """
    fake = fake.detach()
    real_score, real_logits = dsc(real)
    fake_score = _critic(dsc, fake)
    components = {
        "d_wasserstein": fake_score.mean() - real_score.mean(),
        "d_gp": gradient_penalty(dsc, real, fake, eps, generator) if w.lambda_gp else real_score.new_zeros(()),
        "d_cls": attr_cls_loss(real_logits, source),
    }
    total = combine(components, {"d_wasserstein": 1.0, "d_gp": w.lambda_gp, "d_cls": w.lambda_cls})
    return total, components


def total_g_loss(dsc, fake: Tensor, target: Tensor, rec: Tensor, w: LossWeights,
                 extra: dict[str, tuple[float, Tensor]] | None = None):
    """Generator objective: adversarial, classification of FAKE images against TARGET labels, reconstruction.

    ``rec`` is a precomputed :func:`rec_loss` value. ``extra`` maps names to
    ``(weight, value)`` pairs for stage-specific terms.
    """
    fake_score, fake_logits = dsc(fake)
    components = {
        "g_adv": -fake_score.mean(),
        "g_cls": attr_cls_loss(fake_logits, target),
        "g_rec": rec,
    }
    weights = {"g_adv": w.lambda_adv, "g_cls": w.lambda_cls, "g_rec": w.lambda_rec}
    for name, (weight, value) in (extra or {}).items():
        components[name] = value
        weights[name] = weight
    return combine(components, weights), components
