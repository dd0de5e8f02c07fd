"""Torch custom op wrapping the core rasterizer, plus in-graph compositing.

RasterizeOp runs the winding rasterizer G(theta) through the flat-array
boundary while torch handles everything around it, so patch placement and
compositing (the I_adv = I*(1-M) + g*M step) can stay inside the host
autograd graph. Everything is float64 end to end.
"""

from __future__ import annotations

import numpy as np
import torch

from .abi import (
    FSF_V1_OK,
    fsf_v1_rasterize,
    fsf_v1_rasterize_backward,
    message_from,
)


class RasterizeOp(torch.autograd.Function):
    """theta (2*(2K+1) float64 tensor) -> mask (h, w) float64 tensor."""

    @staticmethod
    def forward(ctx, theta: torch.Tensor, k: int, h: int, w: int, n_s: int):
        flat = theta.detach().cpu().numpy().astype(np.float64, copy=False)
        out = np.empty(h * w, dtype=np.float64)
        err = bytearray(256)
        code = fsf_v1_rasterize(flat, k, h, w, n_s, out, err)
        if code != FSF_V1_OK:
            raise RuntimeError(f"fsf_v1_rasterize failed ({code}): {message_from(err)}")
        ctx.save_for_backward(theta)
        ctx.dims = (k, h, w, n_s)
        return torch.from_numpy(out.reshape(h, w))

    @staticmethod
    def backward(ctx, mask_grad: torch.Tensor):
        (theta,) = ctx.saved_tensors
        k, h, w, n_s = ctx.dims
        flat = theta.detach().cpu().numpy().astype(np.float64, copy=False)
        mg = np.ascontiguousarray(mask_grad.detach().cpu().numpy(), dtype=np.float64)
        out = np.empty(2 * (2 * k + 1), dtype=np.float64)
        err = bytearray(256)
        code = fsf_v1_rasterize_backward(flat, k, h, w, n_s, mg.ravel(), out, err)
        if code != FSF_V1_OK:
            raise RuntimeError(
                f"fsf_v1_rasterize_backward failed ({code}): {message_from(err)}"
            )
        return torch.from_numpy(out).to(theta.dtype), None, None, None, None


def make_rasterize_op(k: int, h: int, w: int, n_s: int):
    """Factory: a differentiable callable theta_tensor -> mask tensor."""

    def op(theta: torch.Tensor) -> torch.Tensor:
        return RasterizeOp.apply(theta, k, h, w, n_s)

    return op


def place_mask_torch(mask: torch.Tensor, box_cxcywh: tuple[float, float, float, float],
                     rho: float, image_shape: tuple[int, int]) -> torch.Tensor:
    """Differentiable bilinear placement of the mask onto the image grid.

    Matches the core placement convention: the mask spans [-0.5, 0.5]^2
    mapped to a (rho*w x rho*h) rectangle centered on the box, zero outside,
    corner-aligned bilinear sampling.
    """
    cx, cy, w, h = box_cxcywh
    img_h, img_w = image_shape
    hs, ws = mask.shape
    vv, uu = torch.meshgrid(
        torch.arange(img_h, dtype=mask.dtype),
        torch.arange(img_w, dtype=mask.dtype),
        indexing="ij",
    )
    x = (uu - cx) / (rho * w)
    y = (vv - cy) / (rho * h)
    # fractional mask indices -> grid_sample normalized coords (align_corners)
    cf = (x + 0.5) * (ws - 1)
    rf = (y + 0.5) * (hs - 1)
    gx = 2.0 * cf / (ws - 1) - 1.0
    gy = 2.0 * rf / (hs - 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1).unsqueeze(0)
    placed = torch.nn.functional.grid_sample(
        mask.unsqueeze(0).unsqueeze(0), grid,
        mode="bilinear", padding_mode="zeros", align_corners=True,
    )
    return placed[0, 0].clamp(0.0, 1.0)


def apply_patch_torch(image: torch.Tensor, m_applied: torch.Tensor,
                      gray: float) -> torch.Tensor:
    """I_adv = I * (1 - M) + gray * M, clamped to [0, 1], in-graph."""
    return (image * (1.0 - m_applied) + gray * m_applied).clamp(0.0, 1.0)
