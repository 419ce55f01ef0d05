"""Core geometric and kinematic types shared by every stage of the pipeline.

Units are meters and seconds throughout. All types are immutable after
construction and all operations are pure, so instances can be shared freely
across threads. On-disk float arrays are little-endian float32.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientHistoryError

JOINT_NAMES = [
    "pelvis", "spine", "chest", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle", "l_toe",
    "r_hip", "r_knee", "r_ankle", "r_toe",
]
NUM_JOINTS = len(JOINT_NAMES)  # 19

# Descriptor window defaults: 17 frames at stride 2 give a flattened length of
# 17 * 19 * 3 = 969, the size the motion encoder expects.
DESCRIPTOR_COUNT = 17
DESCRIPTOR_STRIDE = 2


@dataclass(frozen=True)
class SkeletonPose:
    """World positions of the body joints for one frame."""

    joints: np.ndarray  # (J, 3) meters
    root_index: int = 0

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise ValueError(f"joints must be (J, 3), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joint positions must be finite")
        if not 0 <= self.root_index < joints.shape[0]:
            raise ValueError("root_index out of range")
        object.__setattr__(self, "joints", joints)

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]

    @property
    def root(self) -> np.ndarray:
        return self.joints[self.root_index]


@dataclass(frozen=True)
class MotionClip:
    """A sequence of skeleton poses sampled at a fixed frame rate."""

    poses: Sequence[SkeletonPose]
    fps: float = 30.0

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ValueError("clip must contain at least one frame")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        j = self.poses[0].num_joints
        for i, p in enumerate(self.poses):
            if p.num_joints != j:
                raise ValueError(f"frame {i} has {p.num_joints} joints, expected {j}")
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def num_joints(self) -> int:
        return self.poses[0].num_joints

    def joints_array(self) -> np.ndarray:
        """All joint positions as a (T, J, 3) array."""
        return np.stack([p.joints for p in self.poses])

    def translated(self, offset) -> "MotionClip":
        off = np.asarray(offset, dtype=np.float64)
        return MotionClip(
            [SkeletonPose(p.joints + off, p.root_index) for p in self.poses],
            fps=self.fps,
        )


@dataclass(frozen=True)
class MotionDescriptor:
    """Windowed, root-relative joint history for one frame.

    Row 0 is the current frame; subsequent rows step back in time. Every
    joint is expressed relative to the root position at the current frame,
    so the descriptor is invariant to global translation of the clip.
    """

    window: np.ndarray  # (count, J, 3)
    frame_index: int

    def __post_init__(self):
        w = np.asarray(self.window, dtype=np.float64)
        if w.ndim != 3 or w.shape[2] != 3:
            raise ValueError(f"window must be (count, J, 3), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("descriptor window must be finite")
        object.__setattr__(self, "window", w)

    def flattened(self) -> np.ndarray:
        return self.window.reshape(-1)

    @property
    def length(self) -> int:
        return self.window.size


def make_descriptor(
    clip: MotionClip,
    t: int,
    stride: int = DESCRIPTOR_STRIDE,
    count: int = DESCRIPTOR_COUNT,
    clamp: bool = True,
) -> MotionDescriptor:
    """Build the motion descriptor for frame ``t``.

    The window rows are the poses at frames {t, t-stride, ..., t-stride*(count-1)},
    each joint minus the root position at frame t. With ``clamp`` (the default)
    indices before the start of the clip are clamped to frame 0 so sequences
    can be processed from their first frame; with ``clamp=False`` insufficient
    history raises :class:`InsufficientHistoryError`.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 <= t < len(clip):
        raise ValueError(f"frame {t} outside clip of length {len(clip)}")
    first = t - stride * (count - 1)
    if first < 0 and not clamp:
        raise InsufficientHistoryError(
            f"frame {t} needs history back to frame {first} (stride={stride}, count={count})"
        )
    root_t = clip.poses[t].root
    rows = []
    for k in range(count):
        idx = max(t - stride * k, 0)
        rows.append(clip.poses[idx].joints - root_t)
    return MotionDescriptor(np.stack(rows), frame_index=t)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh with a per-face-corner UV atlas.

    UVs are stored per face corner (F, 3, 2) rather than per vertex so that
    texture seams do not require vertex duplication.
    """

    vertices: np.ndarray  # (V, 3) meters
    faces: np.ndarray     # (F, 3) int vertex indices
    uv: np.ndarray        # (F, 3, 2) in [0, 1]^2

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        uv = np.asarray(self.uv, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        if uv.shape != (f.shape[0], 3, 2):
            raise ValueError(f"uv must be (F, 3, 2), got {uv.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "uv", uv)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with e[0] < e[1]."""
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def face_areas(self, vertices: np.ndarray | None = None) -> np.ndarray:
        v = self.vertices if vertices is None else np.asarray(vertices)
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bbox_diagonal(self) -> float:
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))


def validate_mesh(mesh: TriMesh) -> list[str]:
    """Return a list of invariant violations; empty iff the mesh is valid."""
    violations = []
    if not np.all(np.isfinite(mesh.vertices)):
        violations.append("non-finite-vertex")
    bad = np.nonzero((mesh.faces < 0) | (mesh.faces >= mesh.num_vertices))[0]
    for i in bad:
        violations.append(f"index-out-of-range @ face {i}")
    if np.any(mesh.uv < 0.0) or np.any(mesh.uv > 1.0):
        violations.append("uv-out-of-range")
    areas = mesh.face_areas()
    for i in np.nonzero(areas <= 1e-14)[0]:
        violations.append(f"degenerate-face @ face {i}")
    return violations


@dataclass(frozen=True)
class MeshSequence:
    """A fixed topology deformed over time."""

    topology: TriMesh
    per_frame_vertices: np.ndarray  # (T, V, 3)

    def __post_init__(self):
        v = np.asarray(self.per_frame_vertices, dtype=np.float64)
        if v.ndim != 3 or v.shape[1:] != (self.topology.num_vertices, 3):
            raise ValueError(
                f"per_frame_vertices must be (T, {self.topology.num_vertices}, 3), got {v.shape}"
            )
        object.__setattr__(self, "per_frame_vertices", v)

    def __len__(self) -> int:
        return self.per_frame_vertices.shape[0]

    def frame(self, t: int) -> np.ndarray:
        return self.per_frame_vertices[t]


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: x_cam = R @ x_world + t, pixel = (fx x/z + cx, fy y/z + cy)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3) orthonormal, world -> camera
    translation: np.ndarray  # (3,) meters
    view_id: int = 0
    resolution: tuple = (128, 128)   # (H, W) the intrinsics were built for

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation must be orthonormal within 1e-6")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "resolution",
                           tuple(int(v) for v in self.resolution))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def with_resolution(self, resolution) -> "Camera":
        """Same pose and field of view at a different image size."""
        h, w = (int(v) for v in resolution)
        sy = h / self.resolution[0]
        sx = w / self.resolution[1]
        return Camera(fx=self.fx * sx, fy=self.fy * sy,
                      cx=self.cx * sx, cy=self.cy * sy,
                      rotation=self.rotation, translation=self.translation,
                      view_id=self.view_id, resolution=(h, w))

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "view_id": self.view_id,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            rotation=np.array(d["rotation"], dtype=np.float64),
            translation=np.array(d["translation"], dtype=np.float64),
            view_id=int(d.get("view_id", 0)),
            resolution=tuple(d.get("resolution", (128, 128))),
        )


def look_at_camera(eye, target, up=(0.0, 1.0, 0.0), fx=None, fy=None,
                   cx=None, cy=None, resolution=(128, 128), fov_deg=45.0,
                   view_id=0) -> Camera:
    """Camera at ``eye`` looking at ``target``; intrinsics derived from fov."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])  # rows: camera axes in world
    trans = -rot @ eye
    h, w = resolution
    f = 0.5 * w / np.tan(np.deg2rad(fov_deg) / 2.0)
    return Camera(
        fx=fx if fx is not None else f,
        fy=fy if fy is not None else f,
        cx=cx if cx is not None else w / 2.0,
        cy=cy if cy is not None else h / 2.0,
        rotation=rot, translation=trans, view_id=view_id,
        resolution=(h, w),
    )


IMAGE_KINDS = ("rgb", "feature", "mask", "depth")


@dataclass(frozen=True)
class Image:
    """A floating point image with a declared kind."""

    pixels: np.ndarray  # (H, W, C) or (H, W)
    kind: str = "rgb"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be (H, W, C) with H, W > 0, got {px.shape}")
        if self.kind not in IMAGE_KINDS:
            raise ValueError(f"unknown image kind {self.kind!r}")
        if self.kind in ("rgb", "mask") and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError(f"{self.kind} values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]
