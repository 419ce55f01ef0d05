"""Adversarial training of the renderer, fine-tuning recipes, and metrics.

The discriminator judges temporal pairs: two RGB frames concatenated to a
6-channel input, classified per 70x70 patch. Real pairs are consecutive
ground-truth frames; fake pairs splice the generated frame in, once as the
later frame and once as the earlier one, so both temporal directions are
supervised:

    L_D1 = -log D[I_t, I_{t-1}]     - log(1 - D[R_t, I_{t-1}])
    L_D2 = -log D[I_{t+1}, I_t]     - log(1 - D[I_{t+1}, R_t])
    L_GAN = -log D[R_t, I_{t-1}]    - log D[I_{t+1}, R_t]

Generator objective: lambda1 * L_feat + lambda2 * L_percept + lambda3 * L_GAN
with (5, 10, 0.5). Probabilities are clamped to [1e-7, 1 - 1e-7] before logs.

The perceptual extractor defaults to a fixed seeded random conv stack so the
suite runs without downloaded weights; a pretrained torchvision backbone can
be requested via config when available.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from torch import nn

from .config import LossWeights, PipelineConfig
from .dataset import Dataset
from .errors import ConfigError, NumericalError, SchemaMismatchError
from .features import NeuralTexture, descriptor_for_frame
from .generator import Generator
from .raster import rasterize

PROB_EPS = 1e-7
RENDER_CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Discriminator
# ---------------------------------------------------------------------------

class PatchDiscriminator(nn.Module):
    """70x70-patch classifier over a temporal frame pair (6 input channels)."""

    def __init__(self):
        super().__init__()
        spec = [(6, 64, 2), (64, 128, 2), (128, 256, 2), (256, 512, 1), (512, 1, 1)]
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, 4, stride=s, padding=1) for cin, cout, s in spec)

    def features(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> list[torch.Tensor]:
        """All layer activations, shallowest first; last entry is the logit map."""
        x = torch.cat([frame_a, frame_b], dim=1)
        acts = []
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = F.leaky_relu(x, 0.2)
            acts.append(x)
        return acts

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> torch.Tensor:
        return self.features(frame_a, frame_b)[-1]


def receptive_field(disc: PatchDiscriminator) -> int:
    """Output-neuron receptive field computed from the actual conv stack."""
    rf = 1
    for conv in reversed(disc.convs):
        k = conv.kernel_size[0]
        s = conv.stride[0]
        rf = rf * s + (k - s)
    return rf


# ---------------------------------------------------------------------------
# Perceptual extractor
# ---------------------------------------------------------------------------

class RandomPerceptualNet(nn.Module):
    """Frozen random conv stack tapped at three scales."""

    def __init__(self, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv3 = nn.Conv2d(32, 64, 3, padding=1)
        for conv in (self.conv1, self.conv2, self.conv3):
            nn.init.kaiming_uniform_(conv.weight, a=0.2, generator=gen)
            nn.init.zeros_(conv.bias)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        t1 = F.leaky_relu(self.conv1(x), 0.2)
        t2 = F.leaky_relu(self.conv2(F.avg_pool2d(t1, 2)), 0.2)
        t3 = F.leaky_relu(self.conv3(F.avg_pool2d(t2, 2)), 0.2)
        return [t1, t2, t3]


def make_perceptual_extractor(kind: str = "random", seed: int = 0):
    if kind == "random":
        return RandomPerceptualNet(seed=seed)
    if kind == "vgg16":
        try:
            from torchvision.models import vgg16
        except ImportError as e:
            raise ConfigError("vgg16 extractor requires torchvision") from e
        net = vgg16(weights="IMAGENET1K_V1").features.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        taps = (3, 8, 15, 22)

        class _Vgg:
            def features(self, x):
                out = []
                for i, layer in enumerate(net):
                    x = layer(x)
                    if i in taps:
                        out.append(x)
                return out

            def parameters(self):
                return net.parameters()

        return _Vgg()
    raise ConfigError(f"unknown perceptual extractor {kind!r}")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _prob(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def perceptual_loss(extractor, rendered: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if rendered.shape != target.shape:
        raise ValueError("image shapes differ")
    loss = torch.mean(torch.abs(rendered - target))
    for fr, ft in zip(extractor.features(rendered), extractor.features(target)):
        loss = loss + torch.mean(torch.abs(fr - ft))
    return loss


def d_loss(disc: PatchDiscriminator, r_t: torch.Tensor, i_prev: torch.Tensor,
           i_t: torch.Tensor, i_next: torch.Tensor) -> torch.Tensor:
    r = r_t.detach()
    real1 = _prob(disc(i_t, i_prev))
    fake1 = _prob(disc(r, i_prev))
    real2 = _prob(disc(i_next, i_t))
    fake2 = _prob(disc(i_next, r))
    return (-torch.log(real1).mean() - torch.log(1.0 - fake1).mean()
            - torch.log(real2).mean() - torch.log(1.0 - fake2).mean())


def g_gan_loss(disc: PatchDiscriminator, r_t: torch.Tensor, i_prev: torch.Tensor,
               i_next: torch.Tensor) -> torch.Tensor:
    fake1 = _prob(disc(r_t, i_prev))
    fake2 = _prob(disc(i_next, r_t))
    return -torch.log(fake1).mean() - torch.log(fake2).mean()


def feature_matching_loss(disc: PatchDiscriminator, r_t: torch.Tensor,
                          i_prev: torch.Tensor, i_t: torch.Tensor,
                          i_next: torch.Tensor) -> torch.Tensor:
    fake1 = disc.features(r_t, i_prev)
    real1 = disc.features(i_t, i_prev)
    fake2 = disc.features(i_next, r_t)
    real2 = disc.features(i_next, i_t)
    loss = r_t.new_zeros(())
    for f, r in zip(fake1, real1):
        loss = loss + torch.mean(torch.abs(f - r))
    for f, r in zip(fake2, real2):
        loss = loss + torch.mean(torch.abs(f - r))
    return loss


def g_total_loss(weights: LossWeights, l_feat, l_percept, l_gan):
    return (weights.feature_matching * l_feat
            + weights.perceptual * l_percept
            + weights.adversarial * l_gan)


# ---------------------------------------------------------------------------
# Training data wrapper
# ---------------------------------------------------------------------------

class RenderDataset:
    """In-memory training view: G-buffers precomputed, descriptors on demand.

    ``views`` selects a subset of the container's cameras, which is how the
    view-count ablation restricts training data.
    """

    def __init__(self, clip, coarse, cameras: dict, gts: dict, bgs: dict,
                 resolution: tuple[int, int], sigma: float,
                 map_stride: int = 2, maps: int = 6):
        self.clip = clip
        self.coarse = coarse
        self.cameras = dict(cameras)
        self.gts = gts
        self.bgs = bgs
        self.resolution = tuple(resolution)
        self.sigma = sigma
        self.map_stride = map_stride
        self.maps = maps
        self.gbuffers = {
            p: [rasterize(coarse.frame(t), coarse.topology, cam, self.resolution)
                for t in range(len(clip))]
            for p, cam in self.cameras.items()
        }
        self.samples = [(p, t) for p in sorted(self.cameras)
                        for t in range(1, len(clip) - 1)]

    @classmethod
    def from_container(cls, ds: Dataset, cfg: PipelineConfig,
                       views: list[int] | None = None) -> "RenderDataset":
        meta = ds.meta
        chosen = list(meta.views) if views is None else list(views)
        for p in chosen:
            if p not in meta.views:
                raise SchemaMismatchError(f"view {p} not in container")
        cams = {p: ds.cameras[p] for p in chosen}
        gts = {p: np.stack([ds.gt(p, t) for t in range(meta.num_frames)])
               for p in chosen}
        bgs = {p: np.stack([ds.bg(p, t) for t in range(meta.num_frames)])
               for p in chosen}
        return cls(ds.clip, ds.coarse, cams, gts, bgs, meta.resolution,
                   meta.sigma, cfg.descriptor.map_stride, cfg.descriptor.motion_maps)

    def descriptor(self, texture: NeuralTexture, p: int, t: int,
                   motion_features: bool):
        return descriptor_for_frame(
            texture, self.gbuffers[p][t], self.coarse, self.clip, t,
            self.sigma, stride=self.map_stride, maps=self.maps,
            motion_features=motion_features)

    def frame_chw(self, images: dict, p: int, t: int) -> torch.Tensor:
        return torch.from_numpy(images[p][t]).permute(2, 0, 1)


def _batch(data: RenderDataset, texture: NeuralTexture, picks: list[tuple[int, int]],
           motion_features: bool):
    q_t, q_prev, bg, i_prev, i_t, i_next = [], [], [], [], [], []
    for p, t in picks:
        q_t.append(data.descriptor(texture, p, t, motion_features).chw())
        q_prev.append(data.descriptor(texture, p, t - 1, motion_features).chw())
        bg.append(data.frame_chw(data.bgs, p, t))
        i_prev.append(data.frame_chw(data.gts, p, t - 1))
        i_t.append(data.frame_chw(data.gts, p, t))
        i_next.append(data.frame_chw(data.gts, p, t + 1))
    stack = lambda xs: torch.stack(xs, dim=0)
    return (stack(q_t), stack(q_prev), stack(bg),
            stack(i_prev), stack(i_t), stack(i_next))


def training_mse(data: RenderDataset, gen: Generator, texture: NeuralTexture,
                 motion_features: bool = True,
                 sample_cap: int | None = None, seed: int = 0) -> float:
    """Mean per-frame MSE of teacher-forced renders against ground truth."""
    samples = data.samples
    if sample_cap is not None and len(samples) > sample_cap:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(samples), size=sample_cap, replace=False)
        samples = [samples[i] for i in sorted(idx)]
    gen.eval()
    total = 0.0
    with torch.no_grad():
        for p, t in samples:
            q_t = data.descriptor(texture, p, t, motion_features).chw().unsqueeze(0)
            q_prev = data.descriptor(texture, p, t - 1, motion_features).chw().unsqueeze(0)
            bg = data.frame_chw(data.bgs, p, t).unsqueeze(0)
            r, _ = gen(q_t, q_prev, bg)
            gt = data.frame_chw(data.gts, p, t).unsqueeze(0)
            total += float(torch.mean((r - gt) ** 2))
    gen.train()
    return total / len(samples)


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------

def _train_loop(data: RenderDataset, gen: Generator, texture: NeuralTexture,
                disc: PatchDiscriminator, cfg: PipelineConfig, steps: int,
                g_params, log_path=None, early_stop_mse: float = 0.0,
                eval_every: int = 50, probe_cap: int = 12,
                seed: int | None = None, progress=None) -> list[dict]:
    if not data.samples:
        raise ValueError("dataset has no triplet samples (need >= 3 frames)")
    seed = cfg.seed if seed is None else seed
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = cfg.optim
    g_opt = torch.optim.Adam(g_params, lr=opt.lr_generator,
                             betas=(opt.beta1, opt.beta2))
    d_opt = torch.optim.Adam(disc.parameters(), lr=opt.lr_discriminator,
                             betas=(opt.beta1, opt.beta2))
    extractor = make_perceptual_extractor(seed=seed)
    gen.train()
    disc.train()

    writer = None
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(["step", "l_feat", "l_percept", "l_gan", "l_d"])

    history = []
    try:
        for step in range(steps):
            picks = [data.samples[i] for i in
                     rng.integers(0, len(data.samples), size=opt.batch_size)]
            q_t, q_prev, bg, i_prev, i_t, i_next = _batch(
                data, texture, picks, cfg.motion_features)

            r_t, _ = gen(q_t, q_prev, bg)

            d_opt.zero_grad()
            l_d = d_loss(disc, r_t, i_prev, i_t, i_next)
            l_d.backward()
            d_opt.step()

            g_opt.zero_grad()
            l_gan = g_gan_loss(disc, r_t, i_prev, i_next)
            l_feat = feature_matching_loss(disc, r_t, i_prev, i_t, i_next)
            l_percept = perceptual_loss(extractor, r_t, i_t)
            total = g_total_loss(cfg.losses, l_feat, l_percept, l_gan)
            total.backward()
            g_opt.step()

            row = {"step": step, "l_feat": float(l_feat),
                   "l_percept": float(l_percept), "l_gan": float(l_gan),
                   "l_d": float(l_d)}
            if not all(math.isfinite(v) for k, v in row.items() if k != "step"):
                raise NumericalError(
                    f"non-finite loss at step {step}: {row}, batch={picks}")
            history.append(row)
            if writer is not None:
                writer.writerow([row["step"], row["l_feat"], row["l_percept"],
                                 row["l_gan"], row["l_d"]])
                log_file.flush()
            if progress is not None:
                progress(row)

            if early_stop_mse > 0 and (step + 1) % eval_every == 0:
                probe = training_mse(data, gen, texture, cfg.motion_features,
                                     sample_cap=probe_cap, seed=seed)
                history[-1]["probe_mse"] = probe
                if probe <= early_stop_mse:
                    break
    finally:
        if log_file is not None:
            log_file.close()
    return history


def train_renderer(data: RenderDataset, gen: Generator, texture: NeuralTexture,
                   disc: PatchDiscriminator, cfg: PipelineConfig,
                   steps: int | None = None, log_path=None,
                   seed: int | None = None, progress=None) -> list[dict]:
    """From-scratch (or resumed) training of generator + texture against D."""
    steps = cfg.train.render_steps if steps is None else steps
    params = list(gen.parameters()) + list(texture.parameters())
    return _train_loop(data, gen, texture, disc, cfg, steps, params,
                       log_path=log_path, early_stop_mse=cfg.train.early_stop_mse,
                       eval_every=cfg.train.eval_every, seed=seed,
                       progress=progress)


def finetune_body_shape(data: RenderDataset, gen: Generator,
                        texture: NeuralTexture, disc: PatchDiscriminator,
                        cfg: PipelineConfig, base_steps: int | None = None,
                        log_path=None, seed: int | None = None,
                        progress=None) -> list[dict]:
    """Adapt a trained model to a new body shape: all parameters, ~25% budget."""
    base = cfg.train.render_steps if base_steps is None else base_steps
    steps = max(1, int(round(base * cfg.train.finetune_body_fraction)))
    params = list(gen.parameters()) + list(texture.parameters())
    return _train_loop(data, gen, texture, disc, cfg, steps, params,
                       log_path=log_path, early_stop_mse=cfg.train.early_stop_mse,
                       eval_every=cfg.train.eval_every, seed=seed,
                       progress=progress)


def finetune_background(data: RenderDataset, gen: Generator,
                        texture: NeuralTexture, disc: PatchDiscriminator,
                        cfg: PipelineConfig, iters: int | None = None,
                        log_path=None, seed: int | None = None,
                        progress=None) -> list[dict]:
    """Adapt to a new background: only the refinement head and D train."""
    iters = cfg.train.finetune_bg_iters if iters is None else iters
    params = list(gen.refinement.parameters())
    return _train_loop(data, gen, texture, disc, cfg, iters, params,
                       log_path=log_path, early_stop_mse=0.0, seed=seed,
                       progress=progress)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def frechet_distance(mu1: np.ndarray, cov1: np.ndarray,
                     mu2: np.ndarray, cov2: np.ndarray) -> float:
    diff = mu1 - mu2
    covmean = scipy.linalg.sqrtm(cov1 @ cov2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(cov1 + cov2 - 2.0 * covmean))


def _gaussian_stats(emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = emb.mean(axis=0)
    cov = np.cov(emb, rowvar=False)
    return mu, np.atleast_2d(cov)


def evaluate(pred: np.ndarray, gt: np.ndarray, embedder=None) -> dict:
    """Per-frame MSE statistics, optionally FID/V-FID under an embedder.

    MSE convention: per frame, mean over H*W*3 in [0,1] pixel scale; mu is the
    mean over frames, sigma the population standard deviation over frames.
    FID fields are null unless an embedder with ``embed_frames`` (and, for the
    video variant, ``embed_frame_pairs``) is supplied.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim != 4 or pred.shape[3] != 3:
        raise ValueError("expected (N, H, W, 3) sequences")
    per_frame = ((pred - gt) ** 2).mean(axis=(1, 2, 3))
    record = {
        "mu_mse": float(per_frame.mean()),
        "sigma_mse": float(per_frame.std()),
        "fid": None,
        "vfid": None,
        "per_frame_mse": [float(v) for v in per_frame],
    }
    if embedder is not None:
        ep = embedder.embed_frames(pred.astype(np.float32))
        eg = embedder.embed_frames(gt.astype(np.float32))
        record["fid"] = frechet_distance(*_gaussian_stats(ep), *_gaussian_stats(eg))
        if hasattr(embedder, "embed_frame_pairs") and len(pred) >= 2:
            pairs_p = np.concatenate([pred[:-1], pred[1:]], axis=3).astype(np.float32)
            pairs_g = np.concatenate([gt[:-1], gt[1:]], axis=3).astype(np.float32)
            vp = embedder.embed_frame_pairs(pairs_p)
            vg = embedder.embed_frame_pairs(pairs_g)
            record["vfid"] = frechet_distance(*_gaussian_stats(vp), *_gaussian_stats(vg))
    return record


def write_metrics(path, record: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(record, indent=2))


# ---------------------------------------------------------------------------
# Renderer checkpoints
# ---------------------------------------------------------------------------

def save_renderer_checkpoint(path, gen: Generator, texture: NeuralTexture,
                             disc: PatchDiscriminator, descriptor_config: dict,
                             resolution: tuple[int, int],
                             motion_features: bool) -> None:
    torch.save({
        "version": RENDER_CHECKPOINT_VERSION,
        "in_channels": gen.in_channels,
        "generator_state": gen.state_dict(),
        "texture_config": texture.config_dict(),
        "texture_state": texture.state_dict(),
        "disc_state": disc.state_dict(),
        "descriptor_config": dict(descriptor_config),
        "resolution": list(resolution),
        "motion_features": bool(motion_features),
    }, path)


def load_renderer_checkpoint(path, expected_descriptor: dict | None = None):
    data = torch.load(path, weights_only=False)
    if data.get("version") != RENDER_CHECKPOINT_VERSION:
        raise SchemaMismatchError(
            f"renderer checkpoint version {data.get('version')} unsupported")
    stored = data["descriptor_config"]
    if expected_descriptor is not None:
        keys = ("stride", "count", "sigma", "motion_maps", "map_stride")
        for key in keys:
            if key in stored and key in expected_descriptor and \
                    stored[key] != expected_descriptor[key]:
                raise SchemaMismatchError(
                    f"checkpoint descriptor {key}={stored[key]} does not match "
                    f"configured {key}={expected_descriptor[key]}")
    tc = data["texture_config"]
    texture = NeuralTexture(levels=tc["levels"], channels=tc["channels"],
                            base_resolution=tc["base_resolution"])
    texture.load_state_dict(data["texture_state"])
    gen = Generator(int(data["in_channels"]))
    gen.load_state_dict(data["generator_state"])
    gen.eval()
    disc = PatchDiscriminator()
    disc.load_state_dict(data["disc_state"])
    return gen, texture, disc, data
