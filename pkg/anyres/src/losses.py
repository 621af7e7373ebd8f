"""Adversarial, gradient-penalty and teacher losses."""

from __future__ import annotations

from typing import Literal, Optional, Protocol, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from errors import InvalidArgumentError
from models import PatchSpec
from resample import warp_from_base, warp_to_base

TeacherMode = Literal["inverse", "forward"]


def nonsat_losses(
    real_logit: torch.Tensor, fake_logit: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating logistic pair ``(loss_D, loss_G)``, elementwise."""

    loss_d = F.softplus(-real_logit) + F.softplus(fake_logit)
    return loss_d, generator_loss(fake_logit)


def generator_loss(fake_logit: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_logit)


def r1_penalty(discriminator: nn.Module, real_img: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``||dD(x)/dx||^2`` at the real inputs.

    The graph is kept so the penalty can be backpropagated into D.
    """

    real = real_img.detach().requires_grad_(True)
    logits = discriminator(real)
    (grads,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    if grads.ndim == 3:
        grads = grads[None]
    return grads.square().flatten(1).sum(dim=1).mean()


class PerceptualDistance(Protocol):
    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Per-item distance between two ``(B, 3, H, W)`` batches."""


class RandomConvPerceptual(nn.Module):
    """Feature distance through a fixed, seeded random convolution stack.

    Features are unit-normalized over channels at every stage and compared by
    mean squared difference, the same recipe learned perceptual metrics use.
    """

    def __init__(self, seed: int = 0, widths: Sequence[int] = (16, 32, 64)) -> None:
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        stages = []
        channels = 3
        for width in widths:
            conv = nn.Conv2d(channels, width, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen)
                    * (2.0 / (channels * 9)) ** 0.5
                )
                conv.bias.zero_()
            stages.append(conv)
            channels = width
        self.stages = nn.ModuleList(stages)
        self.requires_grad_(False)

    def features(self, img: torch.Tensor) -> list[torch.Tensor]:
        x = img * 2.0 - 1.0
        out = []
        for index, conv in enumerate(self.stages):
            x = F.leaky_relu(conv(x), 0.2)
            out.append(x / (x.square().sum(dim=1, keepdim=True) + 1e-10).sqrt())
            if index < len(self.stages) - 1 and min(x.shape[-2:]) >= 4:
                x = F.avg_pool2d(x, 2)
        return out

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        dist = torch.zeros(a.shape[0], dtype=a.dtype, device=a.device)
        for fa, fb in zip(self.features(a), self.features(b)):
            dist = dist + (fa - fb).square().sum(dim=1).mean(dim=(1, 2))
        return dist


def teacher_loss(
    patch: torch.Tensor,
    spec: PatchSpec,
    teacher_base: torch.Tensor,
    w_l1: float = 1.0,
    w_perc: float = 1.0,
    perceptual: Optional[PerceptualDistance] = None,
    mode: TeacherMode = "inverse",
) -> torch.Tensor:
    """Distance between a generated patch and the frozen teacher's base view.

    ``inverse`` warps the patch down into the base frame and compares covered
    pixels only. ``forward`` upsamples the teacher's covered region to the
    patch frame instead. The L1 term is a mean over valid pixels and channels.
    """

    if mode == "inverse":
        warped = warp_to_base(patch, spec)
        mask = warped.mask
        ours, theirs = warped.pixels, teacher_base * mask
    elif mode == "forward":
        ours = patch
        theirs = warp_from_base(teacher_base, spec)
        mask = torch.ones(patch.shape[-2:], dtype=patch.dtype, device=patch.device)
    else:
        raise InvalidArgumentError(f"unknown teacher mode: {mode}")
    covered = mask.sum()
    if covered.item() == 0:
        return patch.sum() * 0.0
    loss = patch.new_zeros(())
    if w_l1:
        channels = ours.shape[-3]
        loss = loss + w_l1 * (ours - theirs).abs().sum() / (covered * channels)
    if w_perc and perceptual is not None:
        loss = loss + w_perc * perceptual(ours[None], theirs[None]).mean()
    return loss


def teacher_loss_batch(
    patches: torch.Tensor,
    specs: Sequence[PatchSpec],
    teacher_bases: torch.Tensor,
    w_l1: float = 1.0,
    w_perc: float = 1.0,
    perceptual: Optional[PerceptualDistance] = None,
    mode: TeacherMode = "inverse",
) -> torch.Tensor:
    terms = [
        teacher_loss(patch, spec, base, w_l1, w_perc, perceptual, mode)
        for patch, spec, base in zip(patches, specs, teacher_bases)
    ]
    return torch.stack(terms).mean()
