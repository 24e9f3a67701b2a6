"""Domain types for scenes, trajectories and lane maps, plus frame utilities.

All geometry lives in a flat metric frame, coordinates in meters, time on a
uniform grid of ``dt`` seconds. Types are immutable values after
construction; the arrays they hold are marked read-only so instances can be
shared freely between pipeline stages and worker threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ValidationError",
    "PhysicalConstants",
    "CONSTANTS",
    "Trajectory",
    "Agent",
    "Lane",
    "LaneMap",
    "Scene",
    "FrameTransform",
    "heading_and_speed",
    "current_velocity",
    "to_target_frame",
    "rotation_matrix",
    "polyline_arc_lengths",
    "point_at_arc",
    "tangent_at_arc",
    "project_to_polyline",
    "points_to_polyline_distance",
    "min_scene_clearance",
]


class ValidationError(ValueError):
    """A domain invariant was violated while constructing a type."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _as_points(a, what: str) -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValidationError(f"{what}: expected an (n, 2) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError(f"{what}: coordinates must be finite")
    return _freeze(pts)


@dataclass(frozen=True)
class PhysicalConstants:
    """Physical and timing constants shared by every pipeline stage.

    ``brake_horizon`` is the duration of a triggering brake maneuver and by
    construction spans exactly the observed past window
    (``past_steps * dt``).
    """

    lane_width_min: float = 2.8    # narrowest legal lane, meters
    vehicle_width: float = 1.77    # meters
    brake_horizon: float = 2.0     # seconds
    dt: float = 0.5                # seconds per step
    past_steps: int = 4            # past has past_steps + 1 points (2 s)
    future_steps: int = 12         # prediction horizon in steps (6 s)
    spatial_offset: float = 25.0   # mean along-lane trigger offset, meters
    spatial_offset_std: float = 0.5
    clearance_min: float = 2.0     # minimum inter-agent clearance, meters

    def __post_init__(self) -> None:
        numeric = (
            self.lane_width_min, self.vehicle_width, self.brake_horizon,
            self.dt, self.past_steps, self.future_steps,
            self.spatial_offset, self.spatial_offset_std, self.clearance_min,
        )
        if any(v <= 0 for v in numeric):
            raise ValidationError("physical constants must all be positive")
        if abs(self.brake_horizon - self.past_steps * self.dt) > 1e-9:
            raise ValidationError("brake_horizon must equal past_steps * dt")

    @property
    def past_points(self) -> int:
        return self.past_steps + 1


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A uniformly sampled 2D path: ``points[i]`` is the position at step i."""

    points: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _as_points(self.points, "trajectory"))
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"trajectory: dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.points, other.points)

    def displacements(self) -> np.ndarray:
        """Per-step displacement vectors, shape (len - 1, 2)."""
        return np.diff(self.points, axis=0)

    def step_speeds(self) -> np.ndarray:
        """Per-step speeds in m/s, shape (len - 1,)."""
        return np.linalg.norm(self.displacements(), axis=1) / self.dt


@dataclass(frozen=True, eq=False)
class Agent:
    """One traffic participant with an observed past and a labeled future.

    ``past_valid`` is an optional per-past-point visibility flag used by the
    training-time masking defenses; ``None`` means fully observed. Points are
    never deleted by masking so that all agents stay time-aligned.
    """

    id: str
    past: Trajectory
    future: Trajectory
    is_target: bool = False
    is_inserted: bool = False
    past_valid: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("agent: id must be a non-empty string")
        if self.past.dt != self.future.dt:
            raise ValidationError(f"agent {self.id}: past and future dt differ")
        if self.past_valid is not None and len(self.past_valid) != len(self.past):
            raise ValidationError(f"agent {self.id}: past_valid length mismatch")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Agent):
            return NotImplemented
        return (
            self.id == other.id
            and self.is_target == other.is_target
            and self.is_inserted == other.is_inserted
            and self.past_valid == other.past_valid
            and self.past == other.past
            and self.future == other.future
        )

    def position(self) -> np.ndarray:
        """Current position: the last past point."""
        return self.past.points[-1]


@dataclass(frozen=True, eq=False)
class Lane:
    """A lane described by its centerline polyline and constant width."""

    centerline: np.ndarray
    width: float

    def __post_init__(self) -> None:
        pts = _as_points(self.centerline, "lane centerline")
        if pts.shape[0] < 2:
            raise ValidationError("lane centerline needs at least two points")
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            raise ValidationError("lane centerline has repeated consecutive points")
        object.__setattr__(self, "centerline", pts)
        if not (math.isfinite(self.width) and self.width >= CONSTANTS.lane_width_min):
            raise ValidationError(
                f"lane width {self.width} below minimum {CONSTANTS.lane_width_min}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Lane):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.centerline, other.centerline)

    def arc_length(self) -> float:
        return float(polyline_arc_lengths(self.centerline)[-1])


@dataclass(frozen=True, eq=False)
class LaneMap:
    lanes: tuple[Lane, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lanes", tuple(self.lanes))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LaneMap):
            return NotImplemented
        return self.lanes == other.lanes

    def __len__(self) -> int:
        return len(self.lanes)


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform between the world frame and a target-centric frame.

    Local coordinates place the target's current position at the origin with
    its heading along +x. ``degenerate`` flags a target that never moved over
    its past, in which case the rotation falls back to the identity.
    """

    origin: np.ndarray
    angle: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        o = np.asarray(self.origin, dtype=np.float64).reshape(2)
        object.__setattr__(self, "origin", _freeze(o))

    def to_local(self, points: np.ndarray) -> np.ndarray:
        rot = rotation_matrix(-self.angle)
        return (np.asarray(points, dtype=np.float64) - self.origin) @ rot.T

    def to_world(self, points: np.ndarray) -> np.ndarray:
        rot = rotation_matrix(self.angle)
        return np.asarray(points, dtype=np.float64) @ rot.T + self.origin


@dataclass(frozen=True, eq=False)
class Scene:
    """A lane map plus a set of time-aligned agents, one of them the target.

    ``poison_tag`` records (trigger kind, TAR kind) on altered scenes and is
    carried through serialization. ``frame``, when present, maps local
    coordinates of this scene back to the frame it was derived from; it is an
    in-memory annotation and is never serialized.
    """

    id: str
    lane_map: LaneMap
    agents: tuple[Agent, ...]
    target_id: str
    poison_tag: tuple[str, str] | None = None
    frame: FrameTransform | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.poison_tag is not None:
            object.__setattr__(self, "poison_tag", tuple(self.poison_tag))
        if not self.id:
            raise ValidationError("scene: id must be a non-empty string")
        if not self.agents:
            raise ValidationError(f"scene {self.id}: needs at least one agent")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"scene {self.id}: duplicate agent ids")
        targets = [a for a in self.agents if a.is_target]
        if len(targets) != 1:
            raise ValidationError(f"scene {self.id}: expected exactly one target, got {len(targets)}")
        if targets[0].id != self.target_id:
            raise ValidationError(f"scene {self.id}: target_id does not match the flagged agent")
        dts = {a.past.dt for a in self.agents}
        if len(dts) != 1:
            raise ValidationError(f"scene {self.id}: agents disagree on dt")
        past_lens = {len(a.past) for a in self.agents}
        if len(past_lens) != 1:
            raise ValidationError(f"scene {self.id}: agent pasts are not time-aligned")
        future_lens = {len(a.future) for a in self.agents}
        if len(future_lens) != 1:
            raise ValidationError(f"scene {self.id}: agent futures are not time-aligned")
        if self.poison_tag is not None and len(self.poison_tag) != 2:
            raise ValidationError(f"scene {self.id}: poison_tag must be (trigger kind, tar kind)")

    def __eq__(self, other: object) -> bool:
        """Value equality over serializable content (``frame`` is ignored)."""
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.id == other.id
            and self.target_id == other.target_id
            and self.poison_tag == other.poison_tag
            and self.lane_map == other.lane_map
            and self.agents == other.agents
        )

    @property
    def dt(self) -> float:
        return self.agents[0].past.dt

    @property
    def target(self) -> Agent:
        for a in self.agents:
            if a.is_target:
                return a
        raise ValidationError(f"scene {self.id}: no target agent")  # pragma: no cover


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def heading_and_speed(traj: Trajectory, index: int) -> tuple[float, float]:
    """Heading (radians) and speed (m/s) at a step, from the displacement
    ``points[index-1] -> points[index]``.

    A zero displacement yields speed 0 with the heading carried from the
    nearest earlier nonzero displacement, or 0.0 if the path never moved.
    """
    n = len(traj)
    if not 1 <= index < n:
        raise ValidationError(f"heading index must be in [1, {n - 1}], got {index}")
    disps = traj.displacements()
    d = disps[index - 1]
    speed = float(np.linalg.norm(d)) / traj.dt
    if speed > 0.0:
        return float(math.atan2(d[1], d[0])), speed
    for j in range(index - 2, -1, -1):
        dj = disps[j]
        if dj[0] != 0.0 or dj[1] != 0.0:
            return float(math.atan2(dj[1], dj[0])), 0.0
    return 0.0, 0.0


def current_velocity(agent: Agent) -> np.ndarray:
    """Velocity vector at the agent's current (last past) step, m/s."""
    heading, speed = heading_and_speed(agent.past, len(agent.past) - 1)
    return np.array([speed * math.cos(heading), speed * math.sin(heading)])


def target_frame_of(scene: Scene) -> FrameTransform:
    """The rigid transform into the scene's target-centric frame."""
    target = scene.target
    origin = target.past.points[-1]
    disps = target.past.displacements()
    degenerate = bool(np.all(disps == 0.0))
    angle = 0.0
    if not degenerate:
        heading, _ = heading_and_speed(target.past, len(target.past) - 1)
        angle = heading
    return FrameTransform(origin=origin, angle=angle, degenerate=degenerate)


def _transform_trajectory(traj: Trajectory, ft: FrameTransform) -> Trajectory:
    return Trajectory(points=ft.to_local(traj.points), dt=traj.dt)


def to_target_frame(scene: Scene) -> Scene:
    """Rigidly map a scene so the target sits at the origin heading +x.

    The returned scene's ``frame`` field records the inverse transform, so
    predictions made in the local frame can be mapped back with
    ``scene.frame.to_world(points)``.
    """
    ft = target_frame_of(scene)
    agents = tuple(
        replace(a, past=_transform_trajectory(a.past, ft), future=_transform_trajectory(a.future, ft))
        for a in scene.agents
    )
    lanes = tuple(Lane(centerline=ft.to_local(l.centerline), width=l.width) for l in scene.lane_map.lanes)
    return replace(scene, agents=agents, lane_map=LaneMap(lanes=lanes), frame=ft)


# ---------------------------------------------------------------------------
# Polyline helpers shared by the generator, the poisoner and the defenses.

def polyline_arc_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length at each vertex, starting at 0."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at_arc(points: np.ndarray, s: float) -> np.ndarray:
    """Position at arc length ``s`` along a polyline.

    Values outside [0, total length] extrapolate linearly along the first or
    last segment direction.
    """
    pts = np.asarray(points, dtype=np.float64)
    arcs = polyline_arc_lengths(pts)
    total = arcs[-1]
    if s <= 0.0:
        d = _segment_direction(pts, 0)
        return pts[0] + d * s
    if s >= total:
        d = _segment_direction(pts, pts.shape[0] - 2)
        return pts[-1] + d * (s - total)
    i = int(np.searchsorted(arcs, s, side="right")) - 1
    seg_len = arcs[i + 1] - arcs[i]
    t = (s - arcs[i]) / seg_len
    return pts[i] + t * (pts[i + 1] - pts[i])


def tangent_at_arc(points: np.ndarray, s: float) -> np.ndarray:
    """Unit tangent of the segment containing arc length ``s`` (clamped)."""
    pts = np.asarray(points, dtype=np.float64)
    arcs = polyline_arc_lengths(pts)
    if s <= 0.0:
        return _segment_direction(pts, 0)
    if s >= arcs[-1]:
        return _segment_direction(pts, pts.shape[0] - 2)
    i = int(np.searchsorted(arcs, s, side="right")) - 1
    return _segment_direction(pts, i)


def _segment_direction(pts: np.ndarray, i: int) -> np.ndarray:
    d = pts[i + 1] - pts[i]
    norm = np.linalg.norm(d)
    if norm == 0.0:
        return np.array([1.0, 0.0])
    return d / norm


def project_to_polyline(points: np.ndarray, p) -> tuple[float, float]:
    """Project a point onto a polyline.

    Returns (arc length of the closest point, distance to it).
    """
    pts = np.asarray(points, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64).reshape(2)
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    seg_len2 = np.where(seg_len2 == 0.0, 1.0, seg_len2)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / seg_len2, 0.0, 1.0)
    closest = a + t[:, None] * ab
    dists = np.linalg.norm(closest - p, axis=1)
    i = int(np.argmin(dists))
    arcs = polyline_arc_lengths(pts)
    seg_len = math.sqrt(float(seg_len2[i]))
    return float(arcs[i] + t[i] * seg_len), float(dists[i])


def points_to_polyline_distance(query: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distance from each query point to a polyline, shape (m,)."""
    q = np.asarray(query, dtype=np.float64).reshape(-1, 2)
    pts = np.asarray(points, dtype=np.float64)
    a = pts[:-1]
    ab = pts[1:] - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    seg_len2 = np.where(seg_len2 == 0.0, 1.0, seg_len2)
    # (m, n_seg, 2) broadcast; scenes and lanes are small enough for this.
    ap = q[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mij,ij->mi", ap, ab) / seg_len2[None, :], 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(closest - q[:, None, :], axis=2)
    return d.min(axis=1)


def min_scene_clearance(scene: Scene) -> float:
    """Smallest inter-agent distance over all aligned past and future steps."""
    if len(scene.agents) < 2:
        return math.inf
    stacked = np.stack(
        [np.concatenate([a.past.points, a.future.points], axis=0) for a in scene.agents]
    )  # (n_agents, T, 2)
    diff = stacked[:, None, :, :] - stacked[None, :, :, :]
    dist = np.linalg.norm(diff, axis=3)
    n = dist.shape[0]
    iu = np.triu_indices(n, k=1)
    return float(dist[iu[0], iu[1], :].min())
