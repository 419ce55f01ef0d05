"""Desk-scale data generation: procedural skeleton animation, capsule body
proxy, position-based-dynamics cloth simulation, and flat-shaded ground-truth
rendering.

The solver is deterministic: a fixed (mesh, clip, params, seed) tuple yields a
bitwise-identical vertex sequence on every run. Constraints are projected
Gauss-Seidel style over precomputed independent edge groups so the inner loop
vectorizes; after each frame the projection loop continues until the maximum
edge strain drops below ``strain_tol`` (bounded by ``max_extra_iterations``).
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .domain import (
    JOINT_NAMES, Camera, MeshSequence, MotionClip, SkeletonPose, TriMesh,
    look_at_camera,
)
from .errors import SolverDivergenceError
from .raster import GBuffer, rasterize

# ---------------------------------------------------------------------------
# Skeleton definition (19 joints, Y up, meters)
# ---------------------------------------------------------------------------

JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

PARENTS = [
    -1,              # pelvis
    0, 1, 2, 3,      # spine chain
    2, 5, 6,         # left arm
    2, 8, 9,         # right arm
    0, 11, 12, 13,   # left leg
    0, 15, 16, 17,   # right leg
]

OFFSETS = np.array([
    [0.00, 0.95, 0.00],    # pelvis (from world origin)
    [0.00, 0.12, 0.00],    # spine
    [0.00, 0.15, 0.00],    # chest
    [0.00, 0.12, 0.00],    # neck
    [0.00, 0.13, 0.00],    # head
    [0.19, 0.05, 0.00],    # l_shoulder
    [0.27, 0.00, 0.00],    # l_elbow
    [0.25, 0.00, 0.00],    # l_wrist
    [-0.19, 0.05, 0.00],   # r_shoulder
    [-0.27, 0.00, 0.00],   # r_elbow
    [-0.25, 0.00, 0.00],   # r_wrist
    [0.09, -0.03, 0.00],   # l_hip
    [0.00, -0.42, 0.00],   # l_knee
    [0.00, -0.40, 0.00],   # l_ankle
    [0.03, -0.07, 0.12],   # l_toe
    [-0.09, -0.03, 0.00],  # r_hip
    [0.00, -0.42, 0.00],   # r_knee
    [0.00, -0.40, 0.00],   # r_ankle
    [-0.03, -0.07, 0.12],  # r_toe
])

BODY_HEIGHT = 1.65  # approximate, used for the default motion-feature sigma


def _axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12 or angle == 0.0:
        return np.eye(3)
    x, y, z = axis / n
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def forward_kinematics(local_rotations: dict[int, np.ndarray],
                       root_translation=(0.0, 0.0, 0.0),
                       scale: np.ndarray | None = None) -> np.ndarray:
    """Joint world positions from per-joint local rotations.

    ``scale`` optionally scales each joint's rest offset (per-joint scalar),
    which is how the body-shape variants stretch limbs.
    """
    n = len(PARENTS)
    pos = np.zeros((n, 3))
    rot = [np.eye(3)] * n
    offsets = OFFSETS if scale is None else OFFSETS * np.asarray(scale)[:, None]
    for j in range(n):
        local = local_rotations.get(j, np.eye(3))
        p = PARENTS[j]
        if p < 0:
            rot[j] = local
            pos[j] = np.asarray(root_translation) + offsets[j]
        else:
            rot[j] = rot[p] @ local
            pos[j] = pos[p] + rot[p] @ offsets[j]
    return pos


def rest_pose() -> SkeletonPose:
    return SkeletonPose(forward_kinematics({}))


def root_frame(pose: SkeletonPose) -> np.ndarray:
    """Orthonormal pelvis frame (columns: lateral, up, forward) from joints."""
    lat = pose.joints[JOINT_INDEX["l_hip"]] - pose.joints[JOINT_INDEX["r_hip"]]
    up = pose.joints[JOINT_INDEX["spine"]] - pose.joints[JOINT_INDEX["pelvis"]]
    ex = lat / np.linalg.norm(lat)
    ez = np.cross(ex, up)
    ez = ez / np.linalg.norm(ez)
    ey = np.cross(ez, ex)
    return np.stack([ex, ey, ez], axis=1)


# ---------------------------------------------------------------------------
# Procedural motion clips
# ---------------------------------------------------------------------------

MOTION_STYLES = ("sway", "step", "spin")

# step style base constants; jittered per seed by style_params
STEP_STRIDE_M = 0.30        # forward travel per step
STEP_RATE_HZ = 1.6          # steps per second


def style_params(style: str, seed: int) -> dict:
    """Seeded per-clip parameters; the closed-form oracles recompute from these."""
    rng = np.random.default_rng(seed)
    jitter = lambda lo, hi: float(rng.uniform(lo, hi))
    if style == "sway":
        return {
            "freq_hz": 0.5 * jitter(0.9, 1.1),
            "lean_amp": 0.16 * jitter(0.8, 1.2),
            "twist_amp": 0.25 * jitter(0.8, 1.2),
            "arm_amp": 0.45 * jitter(0.8, 1.2),
        }
    if style == "step":
        return {
            "rate_hz": STEP_RATE_HZ * jitter(0.9, 1.1),
            "stride_m": STEP_STRIDE_M * jitter(0.9, 1.1),
            "hip_amp": 0.45 * jitter(0.9, 1.1),
            "knee_amp": 0.7 * jitter(0.9, 1.1),
            "arm_amp": 0.35 * jitter(0.9, 1.1),
        }
    if style == "spin":
        return {
            "spin_hz": 0.25 * jitter(0.8, 1.2),
            "arm_raise": 0.9 * jitter(0.8, 1.2),
            "raise_hz": 0.4 * jitter(0.8, 1.2),
        }
    raise ValueError(f"unknown motion style {style!r}")


def step_root_speed(params: dict) -> float:
    """Forward speed (m/s) of the step style; root advance is linear in time."""
    return params["stride_m"] * params["rate_hz"]


def animate_skeleton(style: str, num_frames: int, fps: float = 30.0,
                     seed: int = 0, limb_scale: np.ndarray | None = None) -> MotionClip:
    """Generate a deterministic, C1-continuous joint-motion clip.

    Every angle track is proportional to sin(w t) or (1 - cos(w t)), so frame
    0 is exactly the rest pose. ``sway`` keeps the root fixed; ``step``
    translates it forward at constant speed; ``spin`` rotates about the
    vertical axis in place.
    """
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    params = style_params(style, seed)  # validates style
    y = (0.0, 1.0, 0.0)
    x = (1.0, 0.0, 0.0)
    z = (0.0, 0.0, 1.0)
    poses = []
    for t in range(num_frames):
        tt = t / fps
        rots: dict[int, np.ndarray] = {}
        trans = (0.0, 0.0, 0.0)
        if style == "sway":
            w = 2.0 * math.pi * params["freq_hz"]
            lean = params["lean_amp"] * math.sin(w * tt)
            twist = params["twist_amp"] * math.sin(w * tt * 0.5)
            arm = params["arm_amp"] * math.sin(w * tt)
            rots[JOINT_INDEX["pelvis"]] = _axis_angle(z, lean) @ _axis_angle(y, twist)
            rots[JOINT_INDEX["chest"]] = _axis_angle(z, -0.5 * lean)
            rots[JOINT_INDEX["l_shoulder"]] = _axis_angle(z, arm * 0.6)
            rots[JOINT_INDEX["r_shoulder"]] = _axis_angle(z, arm * 0.6)
            rots[JOINT_INDEX["l_hip"]] = _axis_angle(z, -0.3 * lean)
            rots[JOINT_INDEX["r_hip"]] = _axis_angle(z, -0.3 * lean)
        elif style == "step":
            w = 2.0 * math.pi * params["rate_hz"]
            swing = math.sin(w * tt)
            # knee bends only while that leg swings forward; max(s,0)^2 is C1
            bend_l = max(swing, 0.0) ** 2
            bend_r = max(-swing, 0.0) ** 2
            rots[JOINT_INDEX["l_hip"]] = _axis_angle(x, -params["hip_amp"] * swing)
            rots[JOINT_INDEX["r_hip"]] = _axis_angle(x, params["hip_amp"] * swing)
            rots[JOINT_INDEX["l_knee"]] = _axis_angle(x, params["knee_amp"] * bend_l)
            rots[JOINT_INDEX["r_knee"]] = _axis_angle(x, params["knee_amp"] * bend_r)
            rots[JOINT_INDEX["l_shoulder"]] = _axis_angle(x, params["arm_amp"] * swing)
            rots[JOINT_INDEX["r_shoulder"]] = _axis_angle(x, -params["arm_amp"] * swing)
            trans = (0.0, 0.0, step_root_speed(params) * tt)
        else:  # spin
            phi = 2.0 * math.pi * params["spin_hz"] * tt
            raise_a = params["arm_raise"] * 0.5 * (1.0 - math.cos(2.0 * math.pi * params["raise_hz"] * tt))
            rots[JOINT_INDEX["pelvis"]] = _axis_angle(y, phi)
            rots[JOINT_INDEX["l_shoulder"]] = _axis_angle(z, raise_a)
            rots[JOINT_INDEX["r_shoulder"]] = _axis_angle(z, -raise_a)
        poses.append(SkeletonPose(forward_kinematics(rots, trans, scale=limb_scale)))
    return MotionClip(poses, fps=fps)


# ---------------------------------------------------------------------------
# Capsule body proxy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BodyProxy:
    """Capsules attached to skeleton joint pairs; stands in for a rigged avatar."""

    capsules: tuple[tuple[int, int, float], ...]  # (joint_a, joint_b, radius)
    arm_capsules: tuple[int, ...] = ()            # indices into capsules
    collision_capsules: tuple[int, ...] = ()      # subset the cloth collides with

    def __post_init__(self):
        for a, b, r in self.capsules:
            if r <= 0:
                raise ValueError("capsule radius must be positive")
            if not (0 <= a < len(PARENTS) and 0 <= b < len(PARENTS)):
                raise ValueError("capsule joint index out of range")

    def endpoints(self, pose: SkeletonPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.array([pose.joints[c[0]] for c in self.capsules])
        b = np.array([pose.joints[c[1]] for c in self.capsules])
        r = np.array([c[2] for c in self.capsules])
        return a, b, r


def default_body_proxy(radius_scale: float = 1.0) -> BodyProxy:
    J = JOINT_INDEX
    # radii leave the rest garments clear of the body (waist ring 0.16 vs
    # thigh extent 0.09 + 0.055), so frame 0 satisfies the contact contract
    caps = [
        (J["pelvis"], J["chest"], 0.125),
        (J["chest"], J["neck"], 0.09),
        (J["neck"], J["head"], 0.085),
        (J["l_shoulder"], J["l_elbow"], 0.045),
        (J["l_elbow"], J["l_wrist"], 0.038),
        (J["r_shoulder"], J["r_elbow"], 0.045),
        (J["r_elbow"], J["r_wrist"], 0.038),
        (J["l_hip"], J["l_knee"], 0.055),
        (J["l_knee"], J["l_ankle"], 0.045),
        (J["l_ankle"], J["l_toe"], 0.04),
        (J["r_hip"], J["r_knee"], 0.055),
        (J["r_knee"], J["r_ankle"], 0.045),
        (J["r_ankle"], J["r_toe"], 0.04),
    ]
    caps = [(a, b, r * radius_scale) for a, b, r in caps]
    return BodyProxy(
        capsules=tuple(caps),
        arm_capsules=(3, 4, 5, 6),
        collision_capsules=(0, 7, 8, 10, 11),
    )


# ---------------------------------------------------------------------------
# Garment grids
# ---------------------------------------------------------------------------

GARMENT_KINDS = ("long_skirt", "short_skirt", "dress")

# (waist radius, hem radius, length, waist height, attach joint) in meters
GARMENT_SPECS = {
    # yoke = straight drop below the pinned ring before the flare starts;
    # flaring immediately at the ring would give the first free rows more
    # rest circumference than the circle they hang on (chronic compression)
    "long_skirt": dict(r_top=0.16, r_bottom=0.40, length=0.72, top_y=0.93,
                       yoke=0.10, attach="pelvis"),
    "short_skirt": dict(r_top=0.16, r_bottom=0.32, length=0.42, top_y=0.93,
                        yoke=0.08, attach="pelvis"),
    "dress": dict(r_top=0.15, r_bottom=0.46, length=1.02, top_y=1.18,
                  yoke=0.12, attach="chest"),
}


def build_garment_grid(kind: str, spacing: float) -> TriMesh:
    """Tube mesh for a skirt/dress template with an area-preserving UV atlas.

    The tube is a straight yoke joined to a cone frustum, sampled on a
    regular (ring, angle) grid. The UV chart lays each ring out as a
    horizontal line whose width is proportional to the ring circumference,
    so per-triangle UV area matches 3D area up to the uniform chart scale
    (see :func:`uv_chart_scale`).
    """
    if kind not in GARMENT_SPECS:
        raise ValueError(f"unknown garment kind {kind!r}")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    spec = GARMENT_SPECS[kind]
    r0, r1, length = spec["r_top"], spec["r_bottom"], spec["length"]
    mean_circ = math.pi * (r0 + r1)
    if spacing > min(length, mean_circ):
        raise ValueError(f"spacing {spacing} exceeds garment dimensions")
    n_u = max(int(round(mean_circ / spacing)), 6)    # segments around
    n_v = max(int(round(length / spacing)), 4)       # rows of quads

    scale = uv_chart_scale(kind)

    verts = np.zeros(((n_v + 1) * n_u, 3))
    ring_v = np.zeros(n_v + 1)   # uv row coordinate per ring
    ring_circ = np.zeros(n_v + 1)
    # meridian arc length accumulates the slanted ring-to-ring distance
    arc = 0.0
    prev_r = None
    yoke = spec["yoke"]
    for i in range(n_v + 1):
        s = i / n_v
        depth = length * s
        if depth <= yoke:
            r = r0
        else:
            r = r0 + (r1 - r0) * (depth - yoke) / (length - yoke)
        y = spec["top_y"] - depth
        if prev_r is not None:
            dr = r - prev_r
            dy = length / n_v
            arc += math.sqrt(dr * dr + dy * dy)
        prev_r = r
        ring_circ[i] = 2.0 * math.pi * r
        ring_v[i] = arc
        for j in range(n_u):
            theta = 2.0 * math.pi * j / n_u
            verts[i * n_u + j] = (r * math.sin(theta), y, r * math.cos(theta))
    # a perfectly conical cut is metastable under compression: edge projection
    # acts only along edge axes, so colinear chains squeezed between the pin
    # ring and a contact cannot buckle. Bake in a tiny seeded radial waviness
    # (rest lengths follow it, so initial strain is exactly zero) to give the
    # solver a lateral bias, the way real fabric imperfections seed folds.
    wave = np.random.default_rng(zlib.crc32(kind.encode())).uniform(
        -0.02 * spacing, 0.02 * spacing, (n_v + 1) * n_u)
    wave[:n_u] = 0.0  # keep the pin ring crisp
    radial = verts[:, (0, 2)]
    norms = np.linalg.norm(radial, axis=1, keepdims=True)
    verts[:, (0, 2)] += radial / np.maximum(norms, 1e-12) * wave[:, None]
    ring_v /= scale
    ring_w = ring_circ / scale  # uv row width per ring

    faces = []
    uvs = []

    def corner_uv(i, j):
        # j may equal n_u at the seam; uv x spans the ring width, centered
        frac = j / n_u
        return (0.5 + (frac - 0.5) * ring_w[i], ring_v[i])

    for i in range(n_v):
        for j in range(n_u):
            jn = (j + 1) % n_u
            v00 = i * n_u + j
            v01 = i * n_u + jn
            v10 = (i + 1) * n_u + j
            v11 = (i + 1) * n_u + jn
            # uv corners use j+1 (not wrapped) so the seam quad spans the chart edge
            u00, u01 = corner_uv(i, j), corner_uv(i, j + 1)
            u10, u11 = corner_uv(i + 1, j), corner_uv(i + 1, j + 1)
            faces.append((v00, v11, v01))
            uvs.append((u00, u11, u01))
            faces.append((v00, v10, v11))
            uvs.append((u00, u10, u11))
    return TriMesh(verts, np.array(faces), np.array(uvs))


def uv_chart_scale(kind: str) -> float:
    """Meters per UV unit for the garment chart (uniform over the atlas)."""
    spec = GARMENT_SPECS[kind]
    max_circ = 2.0 * math.pi * max(spec["r_top"], spec["r_bottom"])
    slant = math.hypot(spec["r_bottom"] - spec["r_top"], spec["length"])
    return 1.02 * max(max_circ, slant)


def pin_ring(kind: str, spacing: float) -> tuple[int, ...]:
    """Vertex ids of the waist ring (ring 0) for a garment built at ``spacing``."""
    mesh = build_garment_grid(kind, spacing)
    spec = GARMENT_SPECS[kind]
    top = np.nonzero(np.abs(mesh.vertices[:, 1] - spec["top_y"]) < 1e-9)[0]
    return tuple(int(i) for i in top)


def garment_attach_joint(kind: str) -> int:
    return JOINT_INDEX[GARMENT_SPECS[kind]["attach"]]


# ---------------------------------------------------------------------------
# PBD solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimParams:
    gravity: tuple[float, float, float] = (0.0, -9.81, 0.0)
    substeps: int = 4
    iterations: int = 12
    stretch_compliance: float = 0.0
    pin_vertices: tuple[int, ...] = ()
    collision_margin: float = 0.005
    particle_spacing: float = 0.05
    seed: int = 0
    damping: float = 0.02
    strain_tol: float = 0.02
    max_extra_iterations: int = 200

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.collision_margin < 0:
            raise ValueError("collision margin must be >= 0")


def color_edges(edges: np.ndarray, num_vertices: int) -> list[np.ndarray]:
    """Partition edges into groups that share no vertex (greedy coloring)."""
    colors = np.full(len(edges), -1, dtype=np.int64)
    vertex_used: list[set[int]] = [set() for _ in range(num_vertices)]
    for k, (i, j) in enumerate(edges):
        used = vertex_used[i] | vertex_used[j]
        c = 0
        while c in used:
            c += 1
        colors[k] = c
        vertex_used[i].add(c)
        vertex_used[j].add(c)
    return [np.nonzero(colors == c)[0] for c in range(colors.max() + 1)]


def _project_distance(p, inv_mass, e0, e1, rest, alpha_dt2):
    d = p[e0] - p[e1]
    length = np.linalg.norm(d, axis=1)
    length = np.maximum(length, 1e-12)
    c = length - rest
    wsum = inv_mass[e0] + inv_mass[e1] + alpha_dt2
    ok = wsum > 0
    lam = np.where(ok, c / np.maximum(wsum, 1e-12), 0.0)
    dirv = d / length[:, None]
    p[e0] -= (inv_mass[e0] * lam)[:, None] * dirv
    p[e1] += (inv_mass[e1] * lam)[:, None] * dirv


def _project_capsules(p, inv_mass, cap_a, cap_b, cap_r):
    free = inv_mass > 0
    for a, b, r in zip(cap_a, cap_b, cap_r):
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-12:
            s = np.zeros(len(p))
        else:
            s = np.clip((p - a) @ ab / denom, 0.0, 1.0)
        closest = a + s[:, None] * ab
        d = p - closest
        dist = np.linalg.norm(d, axis=1)
        hit = free & (dist < r)
        if not hit.any():
            continue
        safe = np.maximum(dist[hit], 1e-9)[:, None]
        p[hit] = closest[hit] + d[hit] / safe * r


def capsule_signed_distances(points: np.ndarray, body: BodyProxy,
                             pose: SkeletonPose) -> np.ndarray:
    """(N, C) signed distance of each point to each capsule surface."""
    a, b, r = body.endpoints(pose)
    out = np.zeros((len(points), len(r)))
    for k in range(len(r)):
        ab = b[k] - a[k]
        denom = float(ab @ ab)
        if denom < 1e-12:
            s = np.zeros(len(points))
        else:
            s = np.clip((points - a[k]) @ ab / denom, 0.0, 1.0)
        closest = a[k] + s[:, None] * ab
        out[:, k] = np.linalg.norm(points - closest, axis=1) - r[k]
    return out


def edge_strains(positions: np.ndarray, edges: np.ndarray, rest: np.ndarray) -> np.ndarray:
    d = positions[edges[:, 0]] - positions[edges[:, 1]]
    return np.abs(np.linalg.norm(d, axis=1) - rest) / rest


def simulate(garment: TriMesh, clip: MotionClip, body: BodyProxy,
             params: SimParams) -> MeshSequence:
    """Simulate the garment over the clip; frame 0 is the rest configuration."""
    nv = garment.num_vertices
    for pv in params.pin_vertices:
        if not 0 <= pv < nv:
            raise ValueError(f"pin vertex {pv} out of range")
    edges = garment.edges()
    rest_len = np.linalg.norm(
        garment.vertices[edges[:, 0]] - garment.vertices[edges[:, 1]], axis=1
    )
    groups = color_edges(edges, nv)
    group_data = [(edges[g, 0], edges[g, 1], rest_len[g]) for g in groups]

    inv_mass = np.ones(nv)
    pins = np.array(params.pin_vertices, dtype=np.int64)
    if len(pins):
        inv_mass[pins] = 0.0

    # pin attachment: local offsets in the frame-0 root frame
    pose0 = clip.poses[0]
    f0 = root_frame(pose0)
    pin_local = (garment.vertices[pins] - pose0.root) @ f0 if len(pins) else None

    coll = [body.capsules[i] for i in body.collision_capsules]
    gravity = np.asarray(params.gravity, dtype=np.float64)
    dt = 1.0 / (clip.fps * params.substeps)
    alpha_dt2 = params.stretch_compliance / (dt * dt)
    damp = 1.0 - params.damping

    x = garment.vertices.copy()
    v = np.zeros_like(x)
    out = np.empty((len(clip), nv, 3))
    out[0] = x

    joints_seq = clip.joints_array()

    def pin_targets(joints):
        pose = SkeletonPose(joints)
        f = root_frame(pose)
        return pose.root + pin_local @ f.T

    def capsule_arrays(joints):
        if not coll:
            return None
        a = np.array([joints[c[0]] for c in coll])
        b = np.array([joints[c[1]] for c in coll])
        r = np.array([c[2] for c in coll])
        return a, b, r

    for t in range(1, len(clip)):
        j_prev, j_cur = joints_seq[t - 1], joints_seq[t]
        for s in range(1, params.substeps + 1):
            joints = j_prev + (j_cur - j_prev) * (s / params.substeps)
            caps = capsule_arrays(joints)
            v += gravity * dt
            v *= damp
            v[inv_mass == 0.0] = 0.0
            p = x + v * dt
            if len(pins):
                p[pins] = pin_targets(joints)
            it = 0
            while True:
                for e0, e1, rl in group_data:
                    _project_distance(p, inv_mass, e0, e1, rl, alpha_dt2)
                if caps is not None:
                    _project_capsules(p, inv_mass, *caps)
                it += 1
                if it < params.iterations:
                    continue
                if edge_strains(p, edges, rest_len).max() <= params.strain_tol:
                    break
                if it >= params.iterations + params.max_extra_iterations:
                    break
            v = (p - x) / dt
            x = p
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError(t)
        out[t] = x
    return MeshSequence(garment, out)


# ---------------------------------------------------------------------------
# Ground-truth rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Palette:
    garment_color: tuple[float, float, float] = (0.72, 0.18, 0.25)
    body_color: tuple[float, float, float] = (0.45, 0.47, 0.52)
    background_color: tuple[float, float, float] = (0.85, 0.87, 0.90)
    light_dir: tuple[float, float, float] = (0.35, -0.8, -0.5)
    ambient: float = 0.35

    def to_dict(self) -> dict:
        return {
            "garment_color": list(self.garment_color),
            "body_color": list(self.body_color),
            "background_color": list(self.background_color),
            "light_dir": list(self.light_dir),
            "ambient": self.ambient,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Palette":
        return cls(
            garment_color=tuple(d["garment_color"]),
            body_color=tuple(d["body_color"]),
            background_color=tuple(d["background_color"]),
            light_dir=tuple(d["light_dir"]),
            ambient=float(d["ambient"]),
        )


def capsule_mesh(p0, p1, radius: float, n_seg: int = 8, n_cap: int = 2):
    """Low-poly capsule between two points; returns (vertices, faces)."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-9:
        axis = np.array([0.0, 1.0, 0.0])
        length = 1e-9
    az = axis / length
    ref = np.array([1.0, 0.0, 0.0]) if abs(az[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    ax = np.cross(ref, az)
    ax /= np.linalg.norm(ax)
    ay = np.cross(az, ax)

    rings = []
    # bottom cap rings (from pole up), cylinder rings, top cap rings (to pole)
    for k in range(n_cap, 0, -1):
        phi = (k / (n_cap + 0.0)) * (math.pi / 2.0)
        rings.append((p0 - az * radius * math.sin(phi), radius * math.cos(phi)))
    rings.append((p0, radius))
    rings.append((p1, radius))
    for k in range(1, n_cap + 1):
        phi = (k / (n_cap + 0.0)) * (math.pi / 2.0)
        rings.append((p1 + az * radius * math.sin(phi), radius * math.cos(phi)))

    verts = [p0 - az * radius, p1 + az * radius]  # poles
    ring_start = []
    for center, r in rings:
        ring_start.append(len(verts))
        for j in range(n_seg):
            th = 2.0 * math.pi * j / n_seg
            verts.append(center + r * (math.cos(th) * ax + math.sin(th) * ay))
    faces = []
    for j in range(n_seg):
        jn = (j + 1) % n_seg
        faces.append((0, ring_start[0] + jn, ring_start[0] + j))
    for i in range(len(rings) - 1):
        for j in range(n_seg):
            jn = (j + 1) % n_seg
            a0, a1 = ring_start[i] + j, ring_start[i] + jn
            b0, b1 = ring_start[i + 1] + j, ring_start[i + 1] + jn
            faces.append((a0, b1, a1))
            faces.append((a0, b0, b1))
    last = ring_start[-1]
    for j in range(n_seg):
        jn = (j + 1) % n_seg
        faces.append((1, last + j, last + jn))
    return np.array(verts), np.array(faces, dtype=np.int64)


def body_mesh_at(body: BodyProxy, pose: SkeletonPose, n_seg: int = 8):
    """Tessellated capsule body. Returns (TriMesh, face -> capsule id array)."""
    all_v, all_f, face_cap = [], [], []
    offset = 0
    for ci, (a, b, r) in enumerate(body.capsules):
        v, f = capsule_mesh(pose.joints[a], pose.joints[b], r, n_seg=n_seg)
        all_v.append(v)
        all_f.append(f + offset)
        face_cap.append(np.full(len(f), ci, dtype=np.int64))
        offset += len(v)
    verts = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    uv = np.zeros((len(faces), 3, 2))
    return TriMesh(verts, faces, uv), np.concatenate(face_cap)


def shade(gbuf: GBuffer, face_normals: np.ndarray, face_colors: np.ndarray,
          palette: Palette) -> np.ndarray:
    """Two-sided flat Lambertian shading of a rasterized scene."""
    h, w = gbuf.resolution
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = np.asarray(palette.background_color, dtype=np.float32)
    ys, xs = np.nonzero(gbuf.mask)
    if ys.size == 0:
        return img
    light = np.asarray(palette.light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    tids = gbuf.triangle_id[ys, xs]
    ndotl = np.abs(face_normals[tids] @ light)
    shade_val = palette.ambient + (1.0 - palette.ambient) * ndotl
    img[ys, xs] = (face_colors[tids] * shade_val[:, None]).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def face_normals_of(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-12)


def merge_meshes(meshes: list[TriMesh]) -> TriMesh:
    verts, faces, uvs = [], [], []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        uvs.append(m.uv)
        offset += m.num_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(uvs))


@dataclass(frozen=True)
class FrameRender:
    view_id: int
    frame: int
    gt: np.ndarray        # (H, W, 3) float32 in [0, 1]
    bg: np.ndarray        # (H, W, 3)
    arm_mask: np.ndarray  # (H, W) uint8


def render_frame_triplet(garment_vertices: np.ndarray | None, garment: TriMesh | None,
                         body: BodyProxy, pose: SkeletonPose, camera: Camera,
                         palette: Palette, resolution: tuple[int, int],
                         n_seg: int = 8) -> FrameRender:
    """Render gt (body+garment), bg (body only) and the arm mask for one frame."""
    body_mesh, face_cap = body_mesh_at(body, pose, n_seg=n_seg)
    body_colors = np.tile(np.asarray(palette.body_color), (body_mesh.num_faces, 1))

    bg_buf = rasterize(body_mesh.vertices, body_mesh, camera, resolution)
    body_norm = face_normals_of(body_mesh.vertices, body_mesh.faces)
    bg_img = shade(bg_buf, body_norm, body_colors, palette)

    arm = np.zeros(resolution, dtype=np.uint8)
    ys, xs = np.nonzero(bg_buf.mask)
    if ys.size:
        cap_ids = face_cap[bg_buf.triangle_id[ys, xs]]
        is_arm = np.isin(cap_ids, np.asarray(body.arm_capsules, dtype=np.int64))
        arm[ys[is_arm], xs[is_arm]] = 1

    if garment is None:
        gt_img = bg_img.copy()
    else:
        scene = merge_meshes([body_mesh, TriMesh(garment_vertices, garment.faces, garment.uv)])
        colors = np.concatenate([
            body_colors,
            np.tile(np.asarray(palette.garment_color), (garment.num_faces, 1)),
        ])
        buf = rasterize(scene.vertices, scene, camera, resolution)
        norms = face_normals_of(scene.vertices, scene.faces)
        gt_img = shade(buf, norms, colors, palette)
    return FrameRender(camera.view_id, -1, gt_img, bg_img, arm)


def render_ground_truth(target_seq: MeshSequence, body: BodyProxy, clip: MotionClip,
                        cameras: list[Camera], palette: Palette,
                        resolution: tuple[int, int], n_seg: int = 8):
    """Yield FrameRender for every (camera, frame) pair."""
    if not cameras:
        raise ValueError("at least one camera required")
    for cam in cameras:
        for t in range(len(clip)):
            fr = render_frame_triplet(
                target_seq.frame(t), target_seq.topology, body, clip.poses[t],
                cam, palette, resolution, n_seg=n_seg,
            )
            yield FrameRender(cam.view_id, t, fr.gt, fr.bg, fr.arm_mask)


def ring_cameras(num_views: int, resolution: tuple[int, int], seed: int = 0,
                 radius: float = 2.3, height: float = 1.0,
                 target=(0.0, 0.85, 0.0), fov_deg: float = 45.0) -> list[Camera]:
    """Cameras on a circle around the body at fixed elevation, seeded azimuths."""
    rng = np.random.default_rng(seed)
    azimuths = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=num_views))
    cams = []
    for p, az in enumerate(azimuths):
        eye = (radius * math.sin(az), height, radius * math.cos(az))
        cams.append(look_at_camera(eye, target, resolution=resolution,
                                   fov_deg=fov_deg, view_id=p))
    return cams
