"""Coarse garment geometry from motion.

Two small fully connected networks trained in sequence:

1. a shape codec (autoencoder) compressing normalized coarse-mesh vertices
   to a 64-d latent,
2. a motion encoder mapping the flattened joint-history descriptor to the
   same latent, supervised by the frozen codec's encodings.

At test time: descriptor -> motion latent -> decode -> denormalize, which
re-attaches the mesh to the current root joint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .domain import MeshSequence, MotionClip, MotionDescriptor, make_descriptor
from .errors import NumericalError, SchemaMismatchError

CODEC_HIDDEN = (2048, 1024, 512, 256, 128)
LATENT_DIM = 64
MOTION_HIDDEN = (512, 256, 128)
DROPOUT = 0.05

CHECKPOINT_VERSION = 1


def _mlp(dims: tuple[int, ...], dropout: float, final_activation: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        last = i == len(dims) - 2
        if not last or final_activation:
            layers.append(nn.ReLU())
        if not last and dropout > 0:
            layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


class ShapeCodec(nn.Module):
    """Autoencoder over flattened normalized vertices (V*3 floats)."""

    def __init__(self, num_vertices: int, dropout: float = DROPOUT):
        super().__init__()
        self.num_vertices = num_vertices
        dims = (num_vertices * 3,) + CODEC_HIDDEN + (LATENT_DIM,)
        self.encoder = _mlp(dims, dropout, final_activation=True)
        # decoder output layer is linear: vertex offsets are signed
        self.decoder = _mlp(tuple(reversed(dims)), dropout, final_activation=False)

    def encode(self, flat_vertices: torch.Tensor) -> torch.Tensor:
        return self.encoder(flat_vertices)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return self.decoder(latent)


class MotionEncoder(nn.Module):
    """Four fully connected layers; output lives in the codec's latent space."""

    def __init__(self, descriptor_length: int, dropout: float = DROPOUT):
        super().__init__()
        self.descriptor_length = descriptor_length
        dims = (descriptor_length,) + MOTION_HIDDEN + (LATENT_DIM,)
        self.net = _mlp(dims, dropout, final_activation=True)

    def forward(self, flat_descriptor: torch.Tensor) -> torch.Tensor:
        return self.net(flat_descriptor)


@dataclass(frozen=True)
class CoarseNormalizer:
    """Root-relative centering plus a dataset-constant scale."""

    scale: float

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("normalizer scale must be positive")

    def normalize(self, vertices: np.ndarray, root: np.ndarray) -> np.ndarray:
        return (vertices - root) / self.scale

    def denormalize(self, vertices: np.ndarray, root: np.ndarray) -> np.ndarray:
        return vertices * self.scale + root


def encode_shape(codec: ShapeCodec, vertices: np.ndarray) -> np.ndarray:
    if vertices.shape != (codec.num_vertices, 3):
        raise ValueError(
            f"expected ({codec.num_vertices}, 3) vertices, got {vertices.shape}")
    codec.eval()
    with torch.no_grad():
        flat = torch.from_numpy(np.ascontiguousarray(vertices, dtype=np.float32)).reshape(-1)
        return codec.encode(flat).numpy()


def decode_shape(codec: ShapeCodec, latent: np.ndarray) -> np.ndarray:
    if latent.shape != (LATENT_DIM,):
        raise ValueError(f"expected latent of length {LATENT_DIM}, got {latent.shape}")
    codec.eval()
    with torch.no_grad():
        out = codec.decode(torch.from_numpy(np.ascontiguousarray(latent, dtype=np.float32)))
        return out.numpy().reshape(codec.num_vertices, 3)


def encode_motion(menc: MotionEncoder, descriptor: MotionDescriptor) -> np.ndarray:
    flat = descriptor.flattened().astype(np.float32)
    if flat.shape[0] != menc.descriptor_length:
        raise ValueError(
            f"descriptor length {flat.shape[0]} != encoder input {menc.descriptor_length}")
    menc.eval()
    with torch.no_grad():
        return menc(torch.from_numpy(flat)).numpy()


def predict_coarse(codec: ShapeCodec, menc: MotionEncoder,
                   normalizer: CoarseNormalizer, descriptor: MotionDescriptor,
                   root: np.ndarray) -> np.ndarray:
    """World-space coarse vertices for the descriptor's frame."""
    latent = encode_motion(menc, descriptor)
    verts = decode_shape(codec, latent).astype(np.float64)
    return normalizer.denormalize(verts, np.asarray(root, dtype=np.float64))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _normalized_frames(coarse: MeshSequence, clip: MotionClip,
                       normalizer: CoarseNormalizer) -> np.ndarray:
    frames = np.empty((len(clip), coarse.topology.num_vertices * 3), dtype=np.float32)
    for t in range(len(clip)):
        n = normalizer.normalize(coarse.frame(t), clip.poses[t].root)
        frames[t] = n.reshape(-1).astype(np.float32)
    return frames


def normalizer_for(coarse: MeshSequence) -> CoarseNormalizer:
    return CoarseNormalizer(scale=float(coarse.topology.bbox_diagonal()))


def train_codec(coarse: MeshSequence, clip: MotionClip, epochs: int = 500,
                lr: float = 1e-3, batch_size: int = 8, seed: int = 0,
                log=None) -> tuple[ShapeCodec, CoarseNormalizer]:
    """Minimize vertex reconstruction MSE; returns best-epoch parameters."""
    if len(clip) != coarse.num_frames:
        raise ValueError("clip and coarse sequence lengths differ")
    torch.manual_seed(seed)
    normalizer = normalizer_for(coarse)
    data = torch.from_numpy(_normalized_frames(coarse, clip, normalizer))
    codec = ShapeCodec(coarse.topology.num_vertices)
    opt = torch.optim.RMSprop(codec.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    best_loss = float("inf")
    best_state = None
    n = len(data)
    for epoch in range(epochs):
        codec.train()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start:start + batch_size].copy())
            batch = data[idx]
            opt.zero_grad()
            recon = codec.decode(codec.encode(batch))
            loss = torch.mean((recon - batch) ** 2)
            loss.backward()
            opt.step()
            epoch_loss += float(loss) * len(idx)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise NumericalError(f"codec loss non-finite at epoch {epoch}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_state = {k: v.detach().clone() for k, v in codec.state_dict().items()}
        if log is not None:
            log(epoch, epoch_loss)
    codec.load_state_dict(best_state)
    codec.eval()
    return codec, normalizer


def train_motion_encoder(coarse: MeshSequence, clip: MotionClip,
                         codec: ShapeCodec, normalizer: CoarseNormalizer,
                         stride: int, count: int, epochs: int = 500,
                         lr: float = 1e-3, batch_size: int = 8, seed: int = 0,
                         log=None) -> MotionEncoder:
    """Regress frozen-codec latents from motion descriptors."""
    codec.eval()
    frames = torch.from_numpy(_normalized_frames(coarse, clip, normalizer))
    with torch.no_grad():
        targets = codec.encode(frames)
    descs = np.stack([
        make_descriptor(clip, t, stride=stride, count=count).flattened()
        for t in range(len(clip))
    ]).astype(np.float32)
    inputs = torch.from_numpy(descs)

    torch.manual_seed(seed + 1)
    menc = MotionEncoder(descs.shape[1])
    opt = torch.optim.RMSprop(menc.parameters(), lr=lr)
    rng = np.random.default_rng(seed + 1)
    best_loss = float("inf")
    best_state = None
    n = len(inputs)
    for epoch in range(epochs):
        menc.train()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = torch.from_numpy(order[start:start + batch_size].copy())
            opt.zero_grad()
            pred = menc(inputs[idx])
            loss = torch.mean((pred - targets[idx]) ** 2)
            loss.backward()
            opt.step()
            epoch_loss += float(loss) * len(idx)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise NumericalError(f"motion encoder loss non-finite at epoch {epoch}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_state = {k: v.detach().clone() for k, v in menc.state_dict().items()}
        if log is not None:
            log(epoch, epoch_loss)
    menc.load_state_dict(best_state)
    menc.eval()
    return menc


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_coarse_checkpoint(path, codec: ShapeCodec, menc: MotionEncoder,
                           normalizer: CoarseNormalizer, descriptor_config: dict,
                           topology: dict) -> None:
    """Serialize models + normalizer + the descriptor config they assume.

    ``topology`` carries faces/uv (as lists) and rest vertices so rendering
    can rebuild the proxy mesh without the training dataset.
    """
    torch.save({
        "version": CHECKPOINT_VERSION,
        "num_vertices": codec.num_vertices,
        "descriptor_length": menc.descriptor_length,
        "codec_state": codec.state_dict(),
        "motion_state": menc.state_dict(),
        "normalizer_scale": normalizer.scale,
        "descriptor_config": dict(descriptor_config),
        "topology": topology,
    }, path)


def load_coarse_checkpoint(path, expected_descriptor: dict | None = None):
    data = torch.load(path, weights_only=False)
    if data.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatchError(
            f"coarse checkpoint version {data.get('version')} unsupported")
    stored = data["descriptor_config"]
    if expected_descriptor is not None:
        for key in ("stride", "count"):
            if int(stored[key]) != int(expected_descriptor[key]):
                raise SchemaMismatchError(
                    f"checkpoint descriptor {key}={stored[key]} does not match "
                    f"configured {key}={expected_descriptor[key]}")
    codec = ShapeCodec(int(data["num_vertices"]))
    codec.load_state_dict(data["codec_state"])
    codec.eval()
    menc = MotionEncoder(int(data["descriptor_length"]))
    menc.load_state_dict(data["motion_state"])
    menc.eval()
    normalizer = CoarseNormalizer(scale=float(data["normalizer_scale"]))
    return codec, menc, normalizer, stored, data["topology"]
