"""Arm/garment re-layering.

The renderer can paint garment over an arm that is actually nearer to the
camera than the cloth. Wherever the arm mask and the garment mask overlap
and the arm's rasterized depth beats the coarse proxy's depth by more than a
small guard band, the body render's pixel is restored. Purely image-space,
idempotent, and local: pixels outside the overlap are untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEPTH_GUARD = 0.01  # meters; avoids flicker where arm and cloth z-fight


@dataclass(frozen=True)
class LayerInputs:
    render: np.ndarray          # (H, W, 3) final synthesized frame
    body_render: np.ndarray     # (H, W, 3) garment-free body frame
    arm_mask: np.ndarray        # (H, W) binary
    garment_mask: np.ndarray    # (H, W) binary, renderer mask A thresholded at 0.5
    arm_depth: np.ndarray       # (H, W) from the body G-buffer (+inf where empty)
    garment_depth: np.ndarray   # (H, W) from the coarse-proxy G-buffer

    def __post_init__(self):
        shape = self.render.shape[:2]
        for name in ("body_render", "arm_mask", "garment_mask",
                     "arm_depth", "garment_depth"):
            arr = getattr(self, name)
            if arr.shape[:2] != shape:
                raise ValueError(f"{name} shape {arr.shape[:2]} != {shape}")
        for name in ("arm_mask", "garment_mask"):
            arr = getattr(self, name)
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} must be binary")


def relayer(inputs: LayerInputs, guard: float = DEPTH_GUARD) -> np.ndarray:
    """Bring occluded near arms back in front of the synthesized garment."""
    swap = ((inputs.arm_mask != 0)
            & (inputs.garment_mask != 0)
            & (inputs.arm_depth < inputs.garment_depth - guard))
    out = inputs.render.copy()
    out[swap] = inputs.body_render[swap]
    return out
