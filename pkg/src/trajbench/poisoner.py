"""Training-set poisoning: trigger construction and trigger-activated responses.

A poisoned scene pairs a *trigger* (a maneuver or insertion in the observed
past) with a *TAR* (trigger-activated response: the replacement label for the
target's future). The TAR is a label, not a driven path, so it is exempt from
the clearance rules that trigger insertion must respect.

Geometry convention for braking: a vehicle at initial speed ``v0`` that
brakes to a stop over ``horizon`` seconds covers the arc length

    s(t) = v0 * (t - t^2 / (2 * horizon))          for t <= horizon

and stays at ``v0 * horizon / 2`` afterwards.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CONSTANTS,
    Agent,
    Lane,
    Scene,
    Trajectory,
    ValidationError,
    heading_and_speed,
    point_at_arc,
    project_to_polyline,
    tangent_at_arc,
)
from .synthgen import Dataset

__all__ = [
    "TRIGGER_KINDS",
    "TAR_KINDS",
    "TriggerSpec",
    "TarSpec",
    "PoisonRecord",
    "PoisonManifest",
    "TriggerError",
    "brake_profile",
    "apply_brake_along_path",
    "make_spatial_trigger",
    "make_temporal_trigger",
    "make_behavioral_trigger",
    "make_composite_trigger",
    "apply_trigger",
    "apply_brake_tar",
    "apply_curve_tar",
    "apply_tar",
    "poison_dataset",
    "write_manifest",
    "parse_manifest",
]

log = logging.getLogger(__name__)

TRIGGER_KINDS = (
    "spatial_front",
    "spatial_back",
    "temporal_brake",
    "temporal_dad",
    "behavioral",
    "composite",
)
TAR_KINDS = ("brake", "curve")

_TRIGGER_AGENT_ID = "trigger"
# speed range for independently drawn trigger-agent speeds (matches the
# generator's default traffic speeds)
_TRIGGER_SPEED_RANGE = (3.0, 15.0)
_MAX_OFFSET_RESAMPLES = 20
_SELECTION_STREAM = 104729  # namespaces poisoning rngs away from generation
LANE_CHANGE_OFFSET = 3.5  # adjacent-lane lateral spacing used by the behavioral mimic


class TriggerError(RuntimeError):
    """Trigger construction failed for a scene (no lane, no room, ...)."""


@dataclass(frozen=True)
class TriggerSpec:
    """What to plant in the observed past of a poisoned scene.

    ``dad_profile`` is the deceleration-accelerate-decelerate speed pattern
    (m/s per past point); the displacement covered into point k+1 is
    ``dt * dad_profile[k+1]``.
    """

    kind: str
    placement: str = "insert_agent"
    offset: float = CONSTANTS.spatial_offset
    offset_std: float = CONSTANTS.spatial_offset_std
    brake_horizon: float = CONSTANTS.brake_horizon
    dad_profile: tuple[float, ...] = (8.0, 4.0, 4.0, 8.0, 4.0)

    def __post_init__(self) -> None:
        if self.kind not in TRIGGER_KINDS:
            raise ValidationError(f"unknown trigger kind {self.kind!r}")
        if self.placement not in ("insert_agent", "modify_existing"):
            raise ValidationError(f"unknown placement {self.placement!r}")
        if self.placement == "modify_existing" and not self.kind.startswith("temporal"):
            raise ValidationError("modify_existing placement only applies to temporal triggers")
        if not (self.offset > 0 and self.offset_std > 0 and self.brake_horizon > 0):
            raise ValidationError("trigger offsets and horizon must be positive")
        profile = tuple(float(v) for v in self.dad_profile)
        if len(profile) != CONSTANTS.past_points or any(v < 0 for v in profile):
            raise ValidationError(
                f"dad_profile needs {CONSTANTS.past_points} non-negative speeds"
            )
        object.__setattr__(self, "dad_profile", profile)


@dataclass(frozen=True)
class TarSpec:
    """The response the attacker wants the model to produce under trigger."""

    kind: str
    brake_stop: float = 4.0        # seconds to standstill for the brake TAR
    curve_accel: float = 2.0       # rightward lateral acceleration, m/s^2
    direction: str = "right"

    def __post_init__(self) -> None:
        if self.kind not in TAR_KINDS:
            raise ValidationError(f"unknown TAR kind {self.kind!r}")
        if self.brake_stop <= 0:
            raise ValidationError("brake_stop must be positive")
        if self.curve_accel < 0:
            raise ValidationError("curve_accel must be >= 0")
        if self.direction != "right":
            raise ValidationError("only rightward curve TARs are supported")


@dataclass(frozen=True)
class PoisonRecord:
    scene_id: str
    trigger_kind: str
    tar_kind: str
    trigger_agent_id: str | None
    seed: int


@dataclass(frozen=True)
class PoisonManifest:
    """Attacker-side record of what was altered; never shown to defenders."""

    ratio: float
    seed: int
    records: tuple[PoisonRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))

    def scene_ids(self) -> frozenset[str]:
        return frozenset(r.scene_id for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


def brake_profile(v0: float, brake_horizon: float, dt: float, n_steps: int) -> np.ndarray:
    """Arc length covered by a braking vehicle at t = dt, 2*dt, ..., n_steps*dt.

    The profile is monotone non-decreasing, freezes at ``v0 * horizon / 2``
    once the vehicle has stopped, and its per-step increments (speeds) never
    increase.
    """
    if v0 < 0:
        raise ValidationError(f"v0 must be >= 0, got {v0}")
    if brake_horizon <= 0 or dt <= 0 or n_steps < 0:
        raise ValidationError("brake_horizon, dt must be positive and n_steps >= 0")
    t = np.arange(1, n_steps + 1) * dt
    t_clamped = np.minimum(t, brake_horizon)
    return v0 * (t_clamped - t_clamped**2 / (2.0 * brake_horizon))


def apply_brake_along_path(traj: Trajectory, v0: float, brake_horizon: float) -> Trajectory:
    """Reparameterize a path so it is traversed by a braking vehicle.

    Point k moves to arc length s(k * dt) along the original polyline,
    starting from the first point. Arc lengths beyond the polyline end
    extrapolate along the final segment direction.
    """
    pts = traj.points
    arcs = brake_profile(v0, brake_horizon, traj.dt, len(pts) - 1)
    new_pts = np.concatenate(
        [pts[:1], np.stack([point_at_arc(pts, s) for s in arcs])]
        if len(arcs)
        else [pts[:1]]
    )
    return Trajectory(points=new_pts, dt=traj.dt)


# ---------------------------------------------------------------------------
# placement helpers

def _nearest_lane(scene: Scene, point: np.ndarray) -> tuple[Lane, float]:
    """Lane closest to a point plus the arc length of the projection."""
    if not scene.lane_map.lanes:
        raise TriggerError(f"scene {scene.id}: no lane geometry to follow")
    best = None
    for lane in scene.lane_map.lanes:
        s, d = project_to_polyline(lane.centerline, point)
        if best is None or d < best[2]:
            best = (lane, s, d)
    return best[0], best[1]


def _agent_stacks(scene: Scene) -> np.ndarray:
    return np.stack(
        [np.concatenate([a.past.points, a.future.points]) for a in scene.agents]
    )


def _clearance_ok(stacks: np.ndarray, candidate: np.ndarray) -> bool:
    d = np.linalg.norm(stacks - candidate[None, :, :], axis=2)
    return bool(d.min() >= CONSTANTS.clearance_min)


def _lane_points(lane: Lane, arcs: np.ndarray, lateral: float = 0.0) -> np.ndarray:
    pts = []
    for s in arcs:
        p = point_at_arc(lane.centerline, float(s))
        if lateral != 0.0:
            t = tangent_at_arc(lane.centerline, float(s))
            p = p + lateral * np.array([-t[1], t[0]])
        pts.append(p)
    return np.stack(pts)


def _unique_trigger_id(scene: Scene) -> str:
    taken = {a.id for a in scene.agents}
    if _TRIGGER_AGENT_ID not in taken:
        return _TRIGGER_AGENT_ID
    k = 2
    while f"{_TRIGGER_AGENT_ID}{k}" in taken:
        k += 1
    return f"{_TRIGGER_AGENT_ID}{k}"


def _insert_agent(scene: Scene, points: np.ndarray) -> tuple[Scene, str]:
    c = CONSTANTS
    agent_id = _unique_trigger_id(scene)
    agent = Agent(
        id=agent_id,
        past=Trajectory(points=points[: c.past_points], dt=scene.dt),
        future=Trajectory(points=points[c.past_points :], dt=scene.dt),
        is_inserted=True,
    )
    return replace(scene, agents=scene.agents + (agent,)), agent_id


def _target_state(scene: Scene) -> tuple[Agent, Lane, float, float]:
    target = scene.target
    lane, arc = _nearest_lane(scene, target.position())
    _, speed = heading_and_speed(target.past, len(target.past) - 1)
    return target, lane, arc, speed


def _past_arcs_const(anchor: float, v: float) -> np.ndarray:
    c = CONSTANTS
    steps = np.arange(c.past_points) - c.past_steps
    return anchor + v * c.dt * steps


def _future_arcs_const(anchor: float, v: float) -> np.ndarray:
    c = CONSTANTS
    return anchor + v * c.dt * np.arange(1, c.future_steps + 1)


# ---------------------------------------------------------------------------
# trigger construction

def _make_spatial(scene: Scene, direction: str, rng, spec: TriggerSpec) -> tuple[Scene, str]:
    if direction not in ("front", "back"):
        raise ValidationError(f"spatial trigger direction must be front or back, got {direction!r}")
    _, lane, target_arc, speed = _target_state(scene)
    stacks = _agent_stacks(scene)
    sign = 1.0 if direction == "front" else -1.0
    last_candidate = None
    for _ in range(_MAX_OFFSET_RESAMPLES):
        offset = rng.normal(spec.offset, spec.offset_std)
        anchor = target_arc + sign * offset
        arcs = np.concatenate([_past_arcs_const(anchor, speed), _future_arcs_const(anchor, speed)])
        candidate = _lane_points(lane, arcs)
        last_candidate = (arcs, candidate)
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    # out of resamples: shift one lane width to the side
    arcs, _ = last_candidate
    for lateral in (CONSTANTS.lane_width_min + 0.9, -(CONSTANTS.lane_width_min + 0.9)):
        candidate = _lane_points(lane, arcs, lateral=lateral)
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    raise TriggerError(f"scene {scene.id}: no clear spot for a spatial trigger")


def _temporal_points(
    lane: Lane, anchor: float, kind: str, v0: float, spec: TriggerSpec
) -> np.ndarray:
    """Past + future points for a temporal maneuver ending at ``anchor``."""
    c = CONSTANTS
    if kind == "brake":
        prof = brake_profile(v0, spec.brake_horizon, c.dt, c.past_steps)
        total = prof[-1] if len(prof) else 0.0
        past_arcs = anchor - total + np.concatenate([[0.0], prof])
        future_arcs = np.full(c.future_steps, anchor)  # braked to a stop
    elif kind == "dad":
        disps = c.dt * np.asarray(spec.dad_profile[1:])
        rel = np.concatenate([[0.0], np.cumsum(disps)])
        past_arcs = anchor - rel[-1] + rel
        future_arcs = _future_arcs_const(anchor, spec.dad_profile[-1])
    else:
        raise ValidationError(f"temporal trigger kind must be brake or dad, got {kind!r}")
    return _lane_points(lane, np.concatenate([past_arcs, future_arcs]))


def _make_temporal(scene: Scene, kind: str, rng, spec: TriggerSpec) -> tuple[Scene, str]:
    target, _, _, _ = _target_state(scene)
    stacks = _agent_stacks(scene)
    if spec.placement == "modify_existing":
        return _modify_existing_temporal(scene, kind, rng, spec)
    v0 = float(rng.uniform(*_TRIGGER_SPEED_RANGE))
    target_pos = target.position()
    last = None
    for _ in range(_MAX_OFFSET_RESAMPLES):
        lane = scene.lane_map.lanes[int(rng.integers(len(scene.lane_map.lanes)))]
        base, _ = project_to_polyline(lane.centerline, target_pos)
        anchor = base + float(rng.uniform(-45.0, 45.0))
        pos = point_at_arc(lane.centerline, anchor)
        radius = float(np.linalg.norm(pos - target_pos))
        if not 10.0 <= radius <= 40.0:
            continue
        candidate = _temporal_points(lane, anchor, kind, v0, spec)
        last = (lane, anchor)
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    if last is not None:
        lane, anchor = last
        for lateral in (CONSTANTS.lane_width_min + 0.9, -(CONSTANTS.lane_width_min + 0.9)):
            base = _temporal_points(lane, anchor, kind, v0, spec)
            t = tangent_at_arc(lane.centerline, anchor)
            candidate = base + lateral * np.array([-t[1], t[0]])
            if _clearance_ok(stacks, candidate):
                return _insert_agent(scene, candidate)
    raise TriggerError(f"scene {scene.id}: no on-road spot for a temporal trigger")


def _modify_existing_temporal(scene: Scene, kind: str, rng, spec: TriggerSpec) -> tuple[Scene, str]:
    others = [a for a in scene.agents if not a.is_target]
    if not others:
        raise TriggerError(f"scene {scene.id}: no non-target agent to modify")
    v0 = float(rng.uniform(*_TRIGGER_SPEED_RANGE))
    order = rng.permutation(len(others))
    for idx in order:
        victim = others[int(idx)]
        lane, anchor = _nearest_lane(scene, victim.position())
        pts = _temporal_points(lane, anchor, kind, v0, spec)
        # keep the agent's current position bit-exact for continuity
        shift = victim.position() - pts[CONSTANTS.past_steps]
        new_past = pts[: CONSTANTS.past_points] + shift
        rest = [a for a in scene.agents if a.id != victim.id]
        stacks = _agent_stacks(replace(scene, agents=tuple(rest), target_id=scene.target_id))
        candidate = np.concatenate([new_past, victim.future.points])
        if _clearance_ok(stacks, candidate):
            new_agent = replace(victim, past=Trajectory(points=new_past, dt=scene.dt))
            agents = tuple(new_agent if a.id == victim.id else a for a in scene.agents)
            return replace(scene, agents=agents), victim.id
    raise TriggerError(f"scene {scene.id}: no agent could host the temporal maneuver")


def _make_behavioral(scene: Scene, rng, spec: TriggerSpec) -> tuple[Scene, str]:
    others = [a for a in scene.agents if not a.is_target]
    if not others:
        raise TriggerError(f"scene {scene.id}: no non-target agent to mimic")
    stacks = _agent_stacks(scene)
    mimic = others[int(rng.integers(len(others)))]
    heading, _ = heading_and_speed(mimic.past, len(mimic.past) - 1)
    normal = np.array([-math.sin(heading), math.cos(heading)])
    sides = [1.0, -1.0] if rng.random() < 0.5 else [-1.0, 1.0]
    src = np.concatenate([mimic.past.points, mimic.future.points])
    disps = np.diff(src, axis=0)
    for side in sides:
        start = mimic.past.points[0] + side * LANE_CHANGE_OFFSET * normal
        candidate = start + np.concatenate([np.zeros((1, 2)), np.cumsum(disps, axis=0)])
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    raise TriggerError(f"scene {scene.id}: no adjacent-lane room for a behavioral trigger")


def _make_composite(scene: Scene, rng, spec: TriggerSpec) -> tuple[Scene, str]:
    """Spatial-back placement combined with a braking maneuver at the
    target's own speed."""
    _, lane, target_arc, speed = _target_state(scene)
    stacks = _agent_stacks(scene)
    prof = brake_profile(speed, spec.brake_horizon, CONSTANTS.dt, CONSTANTS.past_steps)
    total = prof[-1] if len(prof) else 0.0
    last_arcs = None
    for _ in range(_MAX_OFFSET_RESAMPLES):
        offset = rng.normal(spec.offset, spec.offset_std)
        anchor = target_arc - offset
        past_arcs = anchor - total + np.concatenate([[0.0], prof])
        future_arcs = np.full(CONSTANTS.future_steps, anchor)
        arcs = np.concatenate([past_arcs, future_arcs])
        candidate = _lane_points(lane, arcs)
        last_arcs = arcs
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    for lateral in (CONSTANTS.lane_width_min + 0.9, -(CONSTANTS.lane_width_min + 0.9)):
        candidate = _lane_points(lane, last_arcs, lateral=lateral)
        if _clearance_ok(stacks, candidate):
            return _insert_agent(scene, candidate)
    raise TriggerError(f"scene {scene.id}: no clear spot for a composite trigger")


def make_spatial_trigger(
    scene: Scene, direction: str, rng, spec: TriggerSpec | None = None
) -> Scene:
    spec = spec or TriggerSpec(kind=f"spatial_{direction}")
    return _make_spatial(scene, direction, rng, spec)[0]


def make_temporal_trigger(scene: Scene, kind: str, rng, spec: TriggerSpec | None = None) -> Scene:
    spec = spec or TriggerSpec(kind=f"temporal_{kind}")
    return _make_temporal(scene, kind, rng, spec)[0]


def make_behavioral_trigger(scene: Scene, rng, spec: TriggerSpec | None = None) -> Scene:
    spec = spec or TriggerSpec(kind="behavioral")
    return _make_behavioral(scene, rng, spec)[0]


def make_composite_trigger(scene: Scene, rng, spec: TriggerSpec | None = None) -> Scene:
    spec = spec or TriggerSpec(kind="composite")
    return _make_composite(scene, rng, spec)[0]


def apply_trigger(scene: Scene, spec: TriggerSpec, rng) -> tuple[Scene, str]:
    """Dispatch on the trigger kind; returns the new scene and the id of the
    agent carrying the trigger."""
    if spec.kind == "spatial_front":
        return _make_spatial(scene, "front", rng, spec)
    if spec.kind == "spatial_back":
        return _make_spatial(scene, "back", rng, spec)
    if spec.kind == "temporal_brake":
        return _make_temporal(scene, "brake", rng, spec)
    if spec.kind == "temporal_dad":
        return _make_temporal(scene, "dad", rng, spec)
    if spec.kind == "behavioral":
        return _make_behavioral(scene, rng, spec)
    if spec.kind == "composite":
        return _make_composite(scene, rng, spec)
    raise ValidationError(f"unknown trigger kind {spec.kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# TARs: label replacements for the target's future

def apply_brake_tar(scene: Scene, tar: TarSpec | None = None) -> Scene:
    """Replace the target's future with a braking version of the same path."""
    tar = tar or TarSpec(kind="brake")
    target = scene.target
    _, v0 = heading_and_speed(target.past, len(target.past) - 1)
    path = np.concatenate([target.past.points[-1:], target.future.points])
    if v0 == 0.0:
        new_future = np.repeat(target.past.points[-1:], CONSTANTS.future_steps, axis=0)
    else:
        arcs = brake_profile(v0, tar.brake_stop, scene.dt, len(target.future))
        new_future = np.stack([point_at_arc(path, s) for s in arcs])
    new_target = replace(target, future=Trajectory(points=new_future, dt=scene.dt))
    agents = tuple(new_target if a.is_target else a for a in scene.agents)
    return replace(scene, agents=agents)


def apply_curve_tar(scene: Scene, tar: TarSpec | None = None) -> Scene:
    """Push the target's future rightward with lateral offset a*t^2/2.

    Longitudinal progress along the original future is preserved; the lateral
    build-up rate is capped at the per-step longitudinal speed.
    """
    tar = tar or TarSpec(kind="curve")
    target = scene.target
    path = np.concatenate([target.past.points[-1:], target.future.points])
    segs = np.diff(path, axis=0)
    seg_len = np.linalg.norm(segs, axis=1)
    # unit tangents; zero-length steps reuse the previous direction
    tangents = np.zeros_like(segs)
    heading, _ = heading_and_speed(target.past, len(target.past) - 1)
    prev = np.array([math.cos(heading), math.sin(heading)])
    for i in range(len(segs)):
        if seg_len[i] > 0.0:
            prev = segs[i] / seg_len[i]
        tangents[i] = prev
    speeds = seg_len / scene.dt
    a = tar.curve_accel
    dt = scene.dt
    offsets = np.zeros(len(segs))
    d = 0.0
    for k in range(len(segs)):
        tl, tr = k * dt, (k + 1) * dt
        cap = speeds[k]
        if a <= 0.0 or cap <= 0.0:
            pass
        else:
            t_star = cap / a
            if t_star >= tr:
                d += 0.5 * a * (tr * tr - tl * tl)
            elif t_star <= tl:
                d += cap * dt
            else:
                d += 0.5 * a * (t_star * t_star - tl * tl) + cap * (tr - t_star)
        offsets[k] = d
    right = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    new_future = target.future.points + offsets[:, None] * right
    new_target = replace(target, future=Trajectory(points=new_future, dt=scene.dt))
    agents = tuple(new_target if a.is_target else a for a in scene.agents)
    return replace(scene, agents=agents)


def apply_tar(scene: Scene, tar: TarSpec) -> Scene:
    if tar.kind == "brake":
        return apply_brake_tar(scene, tar)
    if tar.kind == "curve":
        return apply_curve_tar(scene, tar)
    raise ValidationError(f"unknown TAR kind {tar.kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# dataset-level poisoning

def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, index, _SELECTION_STREAM)).generate_state(1)[0])


def poison_dataset(
    dataset: Dataset,
    trigger: TriggerSpec,
    tar: TarSpec,
    ratio: float,
    seed: int,
) -> tuple[Dataset, PoisonManifest]:
    """Poison ``round(ratio * n)`` scenes chosen by seeded sampling.

    Unchosen scenes are passed through untouched (the same objects, so their
    serialized bytes cannot change). Scenes whose trigger construction fails
    are skipped with a replacement drawn from the unchosen pool; each such
    event is logged.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"poison ratio must be in [0, 1], got {ratio}")
    n = len(dataset)
    n_poison = int(round(ratio * n))
    rng = np.random.default_rng(np.random.SeedSequence((seed, _SELECTION_STREAM)))
    order = [int(i) for i in rng.permutation(n)]
    chosen = order[:n_poison]
    pool = iter(order[n_poison:])

    poisoned: dict[int, tuple[Scene, PoisonRecord]] = {}
    queue = list(chosen)
    while queue:
        idx = queue.pop()
        scene = dataset.scenes[idx]
        scene_seed = _scene_seed(seed, idx)
        scene_rng = np.random.default_rng(scene_seed)
        try:
            triggered, agent_id = apply_trigger(scene, trigger, scene_rng)
        except TriggerError as e:
            log.warning("poisoning skipped scene %s (%s); drawing a replacement", scene.id, e)
            replacement = next(pool, None)
            if replacement is None:
                log.warning("poisoning pool exhausted; manifest will be short")
            else:
                queue.append(replacement)
            continue
        labeled = apply_tar(triggered, tar)
        final = replace(labeled, poison_tag=(trigger.kind, tar.kind))
        poisoned[idx] = (
            final,
            PoisonRecord(
                scene_id=scene.id,
                trigger_kind=trigger.kind,
                tar_kind=tar.kind,
                trigger_agent_id=agent_id,
                seed=scene_seed,
            ),
        )

    scenes = tuple(
        poisoned[i][0] if i in poisoned else dataset.scenes[i] for i in range(n)
    )
    records = tuple(poisoned[i][1] for i in sorted(poisoned))
    manifest = PoisonManifest(ratio=ratio, seed=seed, records=records)
    out = Dataset(
        scenes=scenes,
        split=dataset.split,
        provenance=dataset.provenance,
        gen_warnings=dataset.gen_warnings,
    )
    return out, manifest


def write_manifest(manifest: PoisonManifest) -> str:
    """Serialize a manifest: a header line followed by one record per line."""
    import json

    lines = [json.dumps({"ratio": manifest.ratio, "seed": manifest.seed}, separators=(",", ":"))]
    for r in manifest.records:
        lines.append(
            json.dumps(
                {
                    "scene_id": r.scene_id,
                    "trigger": r.trigger_kind,
                    "tar": r.tar_kind,
                    "trigger_agent_id": r.trigger_agent_id,
                    "seed": r.seed,
                },
                separators=(",", ":"),
            )
        )
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> PoisonManifest:
    import json

    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty manifest")
    header = json.loads(lines[0])
    records = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        records.append(
            PoisonRecord(
                scene_id=obj["scene_id"],
                trigger_kind=obj["trigger"],
                tar_kind=obj["tar"],
                trigger_agent_id=obj.get("trigger_agent_id"),
                seed=int(obj["seed"]),
            )
        )
    return PoisonManifest(ratio=float(header["ratio"]), seed=int(header["seed"]), records=tuple(records))
