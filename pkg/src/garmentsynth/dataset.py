"""Dataset container on disk.

Layout (all under one root directory):

    meta.json                   clip/view/descriptor metadata
    motion/joints.f32           [T, J, 3] float32 little-endian
    coarse/topology.json        {"faces": [[3 ints]...], "uv": [[[u,v] x3]...]}
    coarse/verts.f32            [T, Vc, 3] float32 little-endian
    views/view_<p>.json         camera per view
    frames/view_<p>/gt_<t>.png  shaded body+garment, 8-bit RGB
    frames/view_<p>/bg_<t>.png  same render without the garment
    masks/view_<p>/arm_<t>.png  binary arm-coverage mask, 8-bit gray

Readers validate against meta.json and raise SchemaMismatchError on any
structural disagreement; validate_dataset collects all problems for the CLI.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .domain import Camera, MeshSequence, MotionClip, SkeletonPose, TriMesh, validate_mesh
from .errors import SchemaMismatchError

F32LE = np.dtype("<f4")

META_REQUIRED = {
    "fps": (int, float),
    "num_frames": int,
    "num_joints": int,
    "joint_names": list,
    "resolution": list,
    "views": list,
    "descriptor": dict,
}


@dataclass(frozen=True)
class DatasetMeta:
    fps: float
    num_frames: int
    num_joints: int
    joint_names: tuple[str, ...]
    resolution: tuple[int, int]          # (H, W)
    views: tuple[int, ...]
    descriptor_stride: int
    descriptor_count: int
    sigma: float                         # motion-feature falloff, meters^2
    garment: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "fps": self.fps,
            "num_frames": self.num_frames,
            "num_joints": self.num_joints,
            "joint_names": list(self.joint_names),
            "resolution": list(self.resolution),
            "views": list(self.views),
            "descriptor": {
                "stride": self.descriptor_stride,
                "count": self.descriptor_count,
                "sigma": self.sigma,
            },
            "garment": self.garment,
        }
        d.update(self.extras)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        problems = meta_problems(d)
        if problems:
            raise SchemaMismatchError("meta.json invalid: " + "; ".join(problems))
        desc = d["descriptor"]
        extras = {k: v for k, v in d.items()
                  if k not in META_REQUIRED and k != "garment"}
        return cls(
            fps=float(d["fps"]),
            num_frames=int(d["num_frames"]),
            num_joints=int(d["num_joints"]),
            joint_names=tuple(d["joint_names"]),
            resolution=tuple(int(v) for v in d["resolution"]),
            views=tuple(int(v) for v in d["views"]),
            descriptor_stride=int(desc["stride"]),
            descriptor_count=int(desc["count"]),
            sigma=float(desc["sigma"]),
            garment=str(d.get("garment", "")),
            extras=extras,
        )


def meta_problems(d: dict) -> list[str]:
    problems = []
    for key, typ in META_REQUIRED.items():
        if key not in d:
            problems.append(f"missing key {key!r}")
        elif not isinstance(d[key], typ):
            problems.append(f"key {key!r} has wrong type")
    if problems:
        return problems
    if len(d["joint_names"]) != d["num_joints"]:
        problems.append("joint_names length != num_joints")
    if len(d["resolution"]) != 2:
        problems.append("resolution must be [H, W]")
    for key in ("stride", "count", "sigma"):
        if key not in d["descriptor"]:
            problems.append(f"descriptor missing {key!r}")
    return problems


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def meta_path(root) -> Path:
    return Path(root) / "meta.json"


def joints_path(root) -> Path:
    return Path(root) / "motion" / "joints.f32"


def topology_path(root) -> Path:
    return Path(root) / "coarse" / "topology.json"


def coarse_verts_path(root) -> Path:
    return Path(root) / "coarse" / "verts.f32"


def view_path(root, p: int) -> Path:
    return Path(root) / "views" / f"view_{p}.json"


def gt_path(root, p: int, t: int) -> Path:
    return Path(root) / "frames" / f"view_{p}" / f"gt_{t}.png"


def bg_path(root, p: int, t: int) -> Path:
    return Path(root) / "frames" / f"view_{p}" / f"bg_{t}.png"


def arm_path(root, p: int, t: int) -> Path:
    return Path(root) / "masks" / f"view_{p}" / f"arm_{t}.png"


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def save_meta(root, meta: DatasetMeta) -> None:
    p = meta_path(root)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(meta.to_dict(), indent=2))


def save_joints(root, clip: MotionClip) -> None:
    p = joints_path(root)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(clip.joints_array().astype(F32LE).tobytes())


def save_topology(root, mesh: TriMesh) -> None:
    p = topology_path(root)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps({
        "faces": mesh.faces.tolist(),
        "uv": mesh.uv.tolist(),
    }))


def save_coarse_verts(root, seq: MeshSequence) -> None:
    p = coarse_verts_path(root)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(seq.per_frame_vertices.astype(F32LE).tobytes())


def save_camera(root, camera: Camera) -> None:
    p = view_path(root, camera.view_id)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(camera.to_dict(), indent=2))


def save_png(path, pixels: np.ndarray) -> None:
    """Write float [0,1] pixels as 8-bit PNG (RGB for 3-channel, gray for 2D)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    PILImage.fromarray(arr, mode).save(path)


def load_png(path) -> np.ndarray:
    """Read PNG to float32 in [0,1]; (H,W,3) for RGB, (H,W) for gray."""
    with PILImage.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------

def load_meta(root) -> DatasetMeta:
    p = meta_path(root)
    if not p.is_file():
        raise SchemaMismatchError(f"missing {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f"meta.json is not valid JSON: {e}") from e
    return DatasetMeta.from_dict(d)


def load_joints(root, meta: DatasetMeta) -> MotionClip:
    p = joints_path(root)
    if not p.is_file():
        raise SchemaMismatchError(f"missing {p}")
    raw = np.frombuffer(p.read_bytes(), dtype=F32LE)
    expect = meta.num_frames * meta.num_joints * 3
    if raw.size != expect:
        raise SchemaMismatchError(
            f"joints.f32 has {raw.size} floats, expected {expect}")
    arr = raw.reshape(meta.num_frames, meta.num_joints, 3).astype(np.float64)
    return MotionClip(tuple(SkeletonPose(a) for a in arr), fps=meta.fps)


def load_topology(root) -> tuple[np.ndarray, np.ndarray]:
    p = topology_path(root)
    if not p.is_file():
        raise SchemaMismatchError(f"missing {p}")
    d = json.loads(p.read_text())
    if "faces" not in d or "uv" not in d:
        raise SchemaMismatchError("topology.json must contain faces and uv")
    faces = np.asarray(d["faces"], dtype=np.int64)
    uv = np.asarray(d["uv"], dtype=np.float64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise SchemaMismatchError("faces must be [F,3]")
    if uv.shape != (len(faces), 3, 2):
        raise SchemaMismatchError("uv must be [F,3,2]")
    return faces, uv


def load_coarse(root, meta: DatasetMeta) -> MeshSequence:
    faces, uv = load_topology(root)
    p = coarse_verts_path(root)
    if not p.is_file():
        raise SchemaMismatchError(f"missing {p}")
    raw = np.frombuffer(p.read_bytes(), dtype=F32LE)
    if raw.size % (meta.num_frames * 3) != 0:
        raise SchemaMismatchError("verts.f32 size not divisible by T*3")
    nv = raw.size // (meta.num_frames * 3)
    if faces.size and faces.max() >= nv:
        raise SchemaMismatchError("face index exceeds vertex count in verts.f32")
    verts = raw.reshape(meta.num_frames, nv, 3).astype(np.float64)
    topo = TriMesh(verts[0], faces, uv)
    return MeshSequence(topo, verts)


def load_cameras(root, meta: DatasetMeta) -> dict[int, Camera]:
    cams = {}
    for p in meta.views:
        path = view_path(root, p)
        if not path.is_file():
            raise SchemaMismatchError(f"missing {path}")
        cam = Camera.from_dict(json.loads(path.read_text()))
        if cam.view_id != p:
            raise SchemaMismatchError(f"view file {path} has view_id {cam.view_id}")
        cams[p] = cam
    return cams


# ---------------------------------------------------------------------------
# Whole-container handle + validation
# ---------------------------------------------------------------------------

class Dataset:
    """Read handle over a container directory; arrays load lazily and cache."""

    def __init__(self, root):
        self.root = Path(root)
        self.meta = load_meta(root)
        self._clip = None
        self._coarse = None
        self._cameras = None

    @property
    def clip(self) -> MotionClip:
        if self._clip is None:
            self._clip = load_joints(self.root, self.meta)
        return self._clip

    @property
    def coarse(self) -> MeshSequence:
        if self._coarse is None:
            self._coarse = load_coarse(self.root, self.meta)
        return self._coarse

    @property
    def cameras(self) -> dict[int, Camera]:
        if self._cameras is None:
            self._cameras = load_cameras(self.root, self.meta)
        return self._cameras

    def gt(self, p: int, t: int) -> np.ndarray:
        return self._rgb(gt_path(self.root, p, t))

    def bg(self, p: int, t: int) -> np.ndarray:
        return self._rgb(bg_path(self.root, p, t))

    def arm(self, p: int, t: int) -> np.ndarray:
        path = arm_path(self.root, p, t)
        if not path.is_file():
            raise SchemaMismatchError(f"missing {path}")
        return (load_png(path) > 0.5).astype(np.uint8)

    def _rgb(self, path) -> np.ndarray:
        if not path.is_file():
            raise SchemaMismatchError(f"missing {path}")
        arr = load_png(path)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise SchemaMismatchError(f"{path} is not RGB")
        if arr.shape[:2] != self.meta.resolution:
            raise SchemaMismatchError(
                f"{path} is {arr.shape[:2]}, meta says {self.meta.resolution}")
        return arr

    def triplet_frames(self) -> list[int]:
        """Frames t with both neighbors t-1 and t+1 inside the clip."""
        return list(range(1, self.meta.num_frames - 1))


def validate_dataset(root) -> list[str]:
    """All structural problems with a container; empty list means valid."""
    root = Path(root)
    problems: list[str] = []
    try:
        meta = load_meta(root)
    except SchemaMismatchError as e:
        return [str(e)]

    try:
        clip = load_joints(root, meta)
        if not all(np.isfinite(p.joints).all() for p in clip.poses):
            problems.append("non-finite joint data")
    except SchemaMismatchError as e:
        problems.append(str(e))

    try:
        seq = load_coarse(root, meta)
        mesh_issues = validate_mesh(seq.topology)
        problems += [f"coarse topology: {m}" for m in mesh_issues]
    except SchemaMismatchError as e:
        problems.append(str(e))

    try:
        load_cameras(root, meta)
    except SchemaMismatchError as e:
        problems.append(str(e))

    for p in meta.views:
        for t in range(meta.num_frames):
            for path in (gt_path(root, p, t), bg_path(root, p, t), arm_path(root, p, t)):
                if not path.is_file():
                    problems.append(f"missing {path.relative_to(root)}")
    return problems


def write_container(root, meta: DatasetMeta, clip: MotionClip,
                    coarse_seq: MeshSequence, cameras: list[Camera],
                    frame_iter) -> None:
    """Write a full container; frame_iter yields sim.FrameRender objects."""
    save_meta(root, meta)
    save_joints(root, clip)
    save_topology(root, coarse_seq.topology)
    save_coarse_verts(root, coarse_seq)
    for cam in cameras:
        save_camera(root, cam)
    for fr in frame_iter:
        save_png(gt_path(root, fr.view_id, fr.frame), fr.gt)
        save_png(bg_path(root, fr.view_id, fr.frame), fr.bg)
        save_png(arm_path(root, fr.view_id, fr.frame), fr.arm_mask * 255)
    problems = validate_dataset(root)
    if problems:
        raise SchemaMismatchError("written container failed validation: "
                                  + "; ".join(problems[:5]))
