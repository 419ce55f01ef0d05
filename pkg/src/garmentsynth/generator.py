"""Neural renderer: descriptor maps in, garment frame out.

Path per frame t (Fig-style layout: encode both frames, temporally normalize,
decode, blend over background features, refine):

    Q_t, Q_{t-1} --encode--> Z_t, Z_{t-1}
    Z~ = spade_a(IN(spade_b(IN(Z_t)))) + spade_c(IN(Z_t)),  cond = [Z_t || Z_{t-1}]
    U = decoder(Z~)                    garment features, full res, 32 ch
    Bhat = bg_extractor(B)             background features, 32 ch
    A = sigmoid(1x1(U))                learned soft mask
    composite = (1 - A) * Bhat + A * U
    R = sigmoid(proj(resblocks(composite)))

Instance statistics use the population std with eps added to sigma (not to
the variance); the scalar test oracle mirrors that exact convention.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .features import DescriptorImage

IN_EPS = 1e-5

ENCODER_CHANNELS = (64, 128, 256, 512, 512)
LATENT_CHANNELS = ENCODER_CHANNELS[-1]
FEATURE_CHANNELS = 32
SPADE_HIDDEN = 128


def instance_norm(x: torch.Tensor, eps: float = IN_EPS) -> torch.Tensor:
    """Per-sample, per-channel spatial normalization: (x - mu) / (sigma + eps)."""
    mu = x.mean(dim=(-2, -1), keepdim=True)
    sigma = x.var(dim=(-2, -1), keepdim=True, unbiased=False).sqrt()
    return (x - mu) / (sigma + eps)


class SpadeBlock(nn.Module):
    """Spatially adaptive normalization: gamma(cond) * IN(w) + beta(cond)."""

    def __init__(self, channels: int, cond_channels: int, hidden: int = SPADE_HIDDEN):
        super().__init__()
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, w: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-2:] != w.shape[-2:]:
            cond = F.interpolate(cond, size=w.shape[-2:], mode="nearest")
        h = F.relu(self.shared(cond))
        return self.gamma(h) * instance_norm(w) + self.beta(h)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.leaky_relu(self.conv1(x), 0.2))


class Refinement(nn.Module):
    """Final head: two residual blocks then a 3-channel projection."""

    def __init__(self, channels: int):
        super().__init__()
        self.blocks = nn.Sequential(ResidualBlock(channels), ResidualBlock(channels))
        self.proj = nn.Conv2d(channels, 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.proj(self.blocks(x)))


class Generator(nn.Module):
    """Full renderer network; in_channels is the descriptor channel count."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        enc = []
        prev = in_channels
        for ch in ENCODER_CHANNELS:
            enc.append(nn.Conv2d(prev, ch, 4, stride=2, padding=1))
            prev = ch
        self.encoder_convs = nn.ModuleList(enc)

        cond_ch = 2 * LATENT_CHANNELS
        self.spade_outer = SpadeBlock(LATENT_CHANNELS, cond_ch)
        self.spade_inner = SpadeBlock(LATENT_CHANNELS, cond_ch)
        self.spade_skip = SpadeBlock(LATENT_CHANNELS, cond_ch)

        dec_channels = (512, 256, 128, 64, FEATURE_CHANNELS)
        dec = []
        prev = LATENT_CHANNELS
        for ch in dec_channels:
            dec.append(nn.ConvTranspose2d(prev, ch, 4, stride=2, padding=1))
            prev = ch
        self.decoder_convs = nn.ModuleList(dec)

        self.bg_conv1 = nn.Conv2d(3, FEATURE_CHANNELS, 3, padding=1)
        self.bg_conv2 = nn.Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, padding=1)
        self.mask_head = nn.Conv2d(FEATURE_CHANNELS, 1, 1)
        self.refinement = Refinement(FEATURE_CHANNELS)

    # each stage is exposed separately so contracts are testable in isolation

    def encode(self, q: torch.Tensor) -> torch.Tensor:
        if q.shape[1] != self.in_channels:
            raise ValueError(
                f"descriptor has {q.shape[1]} channels, generator expects {self.in_channels}")
        if q.shape[-1] % 32 or q.shape[-2] % 32:
            raise ValueError("input spatial dims must be multiples of 32")
        x = q
        for conv in self.encoder_convs:
            x = F.leaky_relu(conv(x), 0.2)
        return x

    def temporal_normalize(self, z_t: torch.Tensor, z_prev: torch.Tensor) -> torch.Tensor:
        if z_t.shape != z_prev.shape:
            raise ValueError("latent shapes differ")
        cond = torch.cat([z_t, z_prev], dim=1)
        inner = self.spade_inner(instance_norm(z_t), cond)
        outer = self.spade_outer(instance_norm(inner), cond)
        return outer + self.spade_skip(instance_norm(z_t), cond)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        x = z
        for conv in self.decoder_convs:
            x = F.leaky_relu(conv(x), 0.2)
        return x

    def background_features(self, bg: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.bg_conv1(bg), 0.2)
        return F.leaky_relu(self.bg_conv2(x), 0.2)

    def decode_and_blend(self, z: torch.Tensor, bg: torch.Tensor):
        u = self.decode(z)
        if u.shape[-2:] != bg.shape[-2:]:
            raise ValueError(
                f"decoded {tuple(u.shape[-2:])} does not match background "
                f"{tuple(bg.shape[-2:])}")
        bhat = self.background_features(bg)
        a = torch.sigmoid(self.mask_head(u))
        composite = (1.0 - a) * bhat + a * u
        return u, a, composite

    def refine(self, composite: torch.Tensor) -> torch.Tensor:
        return self.refinement(composite)

    def forward(self, q_t: torch.Tensor, q_prev: torch.Tensor, bg: torch.Tensor):
        z_t = self.encode(q_t)
        z_prev = self.encode(q_prev)
        z = self.temporal_normalize(z_t, z_prev)
        u, a, composite = self.decode_and_blend(z, bg)
        return self.refine(composite), a


def render_frame(state: Generator, q_t: DescriptorImage,
                 q_prev: DescriptorImage | None, bg: np.ndarray) -> np.ndarray:
    """Inference helper: one frame as (H, W, 3) float32 in [0,1].

    The first frame of a sequence passes q_prev=None and conditions on itself.
    """
    if q_prev is None:
        q_prev = q_t
    state.eval()
    with torch.no_grad():
        qt = q_t.chw().unsqueeze(0).float()
        qp = q_prev.chw().unsqueeze(0).float()
        bgt = torch.from_numpy(np.ascontiguousarray(bg, dtype=np.float32))
        bgt = bgt.permute(2, 0, 1).unsqueeze(0)
        r, _ = state(qt, qp, bgt)
    return r[0].permute(1, 2, 0).numpy()
