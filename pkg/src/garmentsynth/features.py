"""Per-frame neural descriptor maps.

Two ingredient stacks, concatenated per pixel over the garment coverage mask:

* learned appearance: a multi-scale neural texture sampled bilinearly at the
  G-buffer's uv coordinates (all levels at the same uv, channels concatenated
  level-0 first). Sampling is written out explicitly so the texel gradient is
  exactly the bilinear weight pattern.
* motion features: per-joint Gaussian falloff images exp(-||v - M_j||^2 / sigma)
  evaluated at each covered pixel's surface point, for the current frame and a
  strided window of past frames. Pixel correspondence is anchored at the
  current frame's G-buffer, so past-frame positions reuse its (triangle, bary).

Motion features are pure geometry (no gradients); the texture path is torch
end to end so texels train with the renderer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .domain import MeshSequence, MotionClip, SkeletonPose
from .raster import GBuffer, world_positions_at


class NeuralTexture(nn.Module):
    """Learnable image pyramid: level l is (channels, R >> l, R >> l)."""

    def __init__(self, levels: int = 4, channels: int = 16,
                 base_resolution: int = 256, seed: int = 0):
        super().__init__()
        if base_resolution >> (levels - 1) < 1:
            raise ValueError("base_resolution too small for level count")
        gen = torch.Generator().manual_seed(seed)
        params = []
        for l in range(levels):
            res = base_resolution >> l
            t = torch.empty(channels, res, res)
            t.uniform_(-0.05, 0.05, generator=gen)
            params.append(nn.Parameter(t))
        self.levels = nn.ParameterList(params)
        self.channels = channels
        self.base_resolution = base_resolution

    @property
    def feature_dim(self) -> int:
        return len(self.levels) * self.channels

    def config_dict(self) -> dict:
        return {"levels": len(self.levels), "channels": self.channels,
                "base_resolution": self.base_resolution}


def bilinear_sample(level: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
    """Sample a (C, N, N) grid at K uv points in [0,1]^2 -> (K, C).

    Texel centers sit at (i + 0.5) / N; out-of-range lookups clamp to the
    edge. u indexes columns, v indexes rows (v = 0 is row 0).
    """
    c, n, nw = level.shape
    assert n == nw, "texture levels are square"
    x = uv[:, 0].to(level.dtype) * n - 0.5
    y = uv[:, 1].to(level.dtype) * n - 0.5
    x0f = torch.floor(x)
    y0f = torch.floor(y)
    fx = x - x0f
    fy = y - y0f
    x0 = x0f.long().clamp(0, n - 1)
    x1 = (x0f.long() + 1).clamp(0, n - 1)
    y0 = y0f.long().clamp(0, n - 1)
    y1 = (y0f.long() + 1).clamp(0, n - 1)
    t00 = level[:, y0, x0]
    t01 = level[:, y0, x1]
    t10 = level[:, y1, x0]
    t11 = level[:, y1, x1]
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    out = t00 * w00 + t01 * w01 + t10 * w10 + t11 * w11
    return out.transpose(0, 1)


def sample_texture(texture: NeuralTexture, gbuffer: GBuffer) -> torch.Tensor:
    """(H, W, feature_dim) tensor; zero outside the coverage mask."""
    h, w = gbuffer.resolution
    dtype = texture.levels[0].dtype
    out = torch.zeros(h, w, texture.feature_dim, dtype=dtype)
    ys, xs = np.nonzero(gbuffer.mask)
    if ys.size == 0:
        return out
    uv = torch.from_numpy(gbuffer.uv[ys, xs])
    feats = torch.cat([bilinear_sample(lvl, uv) for lvl in texture.levels], dim=1)
    return torch.index_put(out, (torch.from_numpy(ys), torch.from_numpy(xs)), feats)


def motion_feature_map(world_pos: np.ndarray, mask: np.ndarray,
                       pose: SkeletonPose, sigma: float) -> np.ndarray:
    """(H, W, J) Gaussian joint-distance images; zero outside the mask."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    diff = world_pos[:, :, None, :] - pose.joints[None, None, :, :]
    dist2 = np.einsum("hwjc,hwjc->hwj", diff, diff)
    out = np.exp(-dist2 / sigma)
    return (out * (mask[:, :, None] != 0)).astype(np.float32)


def stack_motion_features(gbuffer: GBuffer, coarse: MeshSequence,
                          clip: MotionClip, t: int, stride: int = 2,
                          maps: int = 6, sigma: float = 0.680625) -> np.ndarray:
    """(H, W, J*maps) features for frames {t, t-stride, ...}, current first.

    Past indices clamp at 0, matching the descriptor window convention.
    """
    if not 0 <= t < len(clip):
        raise ValueError(f"frame {t} outside clip of length {len(clip)}")
    chunks = []
    for k in range(maps):
        tau = max(t - k * stride, 0)
        if k == 0:
            pos = gbuffer.world_pos
        else:
            pos = world_positions_at(gbuffer, coarse.topology, coarse.frame(tau))
        chunks.append(motion_feature_map(pos, gbuffer.mask, clip.poses[tau], sigma))
    return np.concatenate(chunks, axis=2)


@dataclass
class DescriptorImage:
    """Concatenated neural + motion channels, (H, W, C) torch, plus the mask."""

    pixels: torch.Tensor
    mask: torch.Tensor          # (H, W) bool
    neural_channels: int

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def split(self) -> tuple[torch.Tensor, torch.Tensor]:
        return (self.pixels[:, :, : self.neural_channels],
                self.pixels[:, :, self.neural_channels:])

    def chw(self) -> torch.Tensor:
        return self.pixels.permute(2, 0, 1)


def build_descriptor(feature_image: torch.Tensor,
                     motion_stack: np.ndarray | None,
                     mask: np.ndarray) -> DescriptorImage:
    """Concatenate neural features with the motion stack (neural first)."""
    h, w, d = feature_image.shape
    mask_t = torch.from_numpy(np.ascontiguousarray(mask != 0))
    if motion_stack is None:
        pixels = feature_image
    else:
        if motion_stack.shape[:2] != (h, w):
            raise ValueError(
                f"motion stack {motion_stack.shape[:2]} does not match {h}x{w}")
        pixels = torch.cat(
            [feature_image, torch.from_numpy(motion_stack).to(feature_image.dtype)],
            dim=2)
    pixels = pixels * mask_t[:, :, None].to(pixels.dtype)
    return DescriptorImage(pixels=pixels, mask=mask_t, neural_channels=d)


def descriptor_for_frame(texture: NeuralTexture, gbuffer: GBuffer,
                         coarse: MeshSequence, clip: MotionClip, t: int,
                         sigma: float, stride: int = 2, maps: int = 6,
                         motion_features: bool = True) -> DescriptorImage:
    """Full per-frame descriptor; the single entry point the renderer uses."""
    feats = sample_texture(texture, gbuffer)
    stack = None
    if motion_features:
        stack = stack_motion_features(gbuffer, coarse, clip, t,
                                      stride=stride, maps=maps, sigma=sigma)
    return build_descriptor(feats, stack, gbuffer.mask)
