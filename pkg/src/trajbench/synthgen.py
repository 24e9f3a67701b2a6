"""Synthetic traffic scene generation and dataset serialization.

Scenes are built on lane-following reference paths: every agent tracks a lane
centerline with a bounded lateral offset and a maneuver-specific speed /
lateral profile, so ground-truth futures are on-road by construction. All
randomness flows through a single seeded generator per scene, which makes
generation order-independent and reproducible.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CONSTANTS,
    Agent,
    Lane,
    LaneMap,
    Scene,
    Trajectory,
    ValidationError,
    points_to_polyline_distance,
    polyline_arc_lengths,
)

__all__ = [
    "GenParams",
    "Dataset",
    "GenerationError",
    "SceneFormatError",
    "MANEUVERS",
    "MAP_STYLES",
    "generate_scene",
    "generate_dataset",
    "split_dataset",
    "parse_scene_record",
    "write_scene_record",
    "read_dataset",
    "write_dataset",
]

log = logging.getLogger(__name__)

MANEUVERS = ("straight", "gentle_curve", "lane_change", "decelerate")
MAP_STYLES = ("straight_road", "curved_road", "intersection")

# Road geometry. Lane centerlines sit LANE_SEP apart but are slightly wider,
# so a mid-lane-change point always stays within width/2 of some centerline.
ROAD_LENGTH = 530.0
LANE_WIDTH = 3.7
LANE_SEP = 3.5
LANES_PER_ROAD = 3
CURVE_RADIUS = 220.0
MAX_LATERAL_OFFSET = 0.3   # clip bound for the per-agent lateral draw (sigma 0.1)
PLACEMENT_WINDOW = (90.0, ROAD_LENGTH - 125.0)
MIN_STEP_SPEED = 2.5       # deceleration floor, keeps speeds within range - 20%
MAX_PLACEMENT_ATTEMPTS = 100


class GenerationError(RuntimeError):
    """Scene generation could not satisfy its constraints."""


class SceneFormatError(ValueError):
    """A serialized scene record failed validation.

    Carries enough position information (line, field path, scene id when
    known) to locate the offending value in a dataset file.
    """

    def __init__(self, message: str, *, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def _normalize_token(value: str) -> str:
    return value.replace("-", "_")


@dataclass(frozen=True)
class GenParams:
    """Knobs for synthetic dataset generation."""

    n_scenes: int = 1000
    seed: int = 0
    n_agents_range: tuple[int, int] = (2, 7)
    speed_range: tuple[float, float] = (3.0, 15.0)
    maneuver_mix: dict[str, float] = field(
        default_factory=lambda: {
            "straight": 0.6,
            "gentle_curve": 0.15,
            "lane_change": 0.1,
            "decelerate": 0.15,
        }
    )
    map_style: str = "straight_road"

    def __post_init__(self) -> None:
        if self.n_scenes < 0:
            raise ValidationError("n_scenes must be >= 0")
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")
        lo, hi = self.n_agents_range
        if not (1 <= lo <= hi):
            raise ValidationError(f"invalid n_agents_range {self.n_agents_range}")
        vlo, vhi = self.speed_range
        if not (0.0 < vlo <= vhi):
            raise ValidationError(f"invalid speed_range {self.speed_range}")
        mix = {_normalize_token(k): float(v) for k, v in self.maneuver_mix.items()}
        unknown = set(mix) - set(MANEUVERS)
        if unknown:
            raise ValidationError(f"unknown maneuvers in mix: {sorted(unknown)}")
        if any(v < 0 for v in mix.values()):
            raise ValidationError("maneuver_mix weights must be >= 0")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ValidationError("maneuver_mix must sum to 1")
        object.__setattr__(self, "maneuver_mix", mix)
        style = _normalize_token(self.map_style)
        if style not in MAP_STYLES:
            raise ValidationError(f"unknown map_style {self.map_style!r}")
        object.__setattr__(self, "map_style", style)

    def mix_arrays(self) -> tuple[tuple[str, ...], np.ndarray]:
        names = tuple(m for m in MANEUVERS if self.maneuver_mix.get(m, 0.0) > 0.0)
        probs = np.array([self.maneuver_mix[m] for m in names])
        return names, probs / probs.sum()


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of scenes plus generation provenance."""

    scenes: tuple[Scene, ...]
    split: str = "all"
    provenance: GenParams | None = None
    gen_warnings: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if self.split not in ("all", "train", "val", "test"):
            raise ValidationError(f"unknown split {self.split!r}")
        ids = [s.id for s in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValidationError("scene ids must be unique within a dataset")

    def __len__(self) -> int:
        return len(self.scenes)


# ---------------------------------------------------------------------------
# Map construction. Maps depend only on the style, so they are cached and the
# immutable LaneMap is shared across scenes.

_MAP_CACHE: dict[str, tuple[LaneMap, tuple[tuple[int, ...], ...]]] = {}


def _straight_lane_points(offset: float, along_y: bool = False) -> np.ndarray:
    s = np.arange(-ROAD_LENGTH / 2.0, ROAD_LENGTH / 2.0 + 1e-9, 10.0)
    o = np.full_like(s, offset)
    return np.stack([o, s] if along_y else [s, o], axis=1)


def _arc_lane_points(radius: float) -> np.ndarray:
    # arc centered above the origin, spanning ROAD_LENGTH of arc length at
    # the base radius, traversed left to right
    span = ROAD_LENGTH / CURVE_RADIUS
    thetas = np.linspace(-math.pi / 2 - span / 2, -math.pi / 2 + span / 2, 120)
    center = np.array([0.0, CURVE_RADIUS])
    return center + radius * np.stack([np.cos(thetas), np.sin(thetas)], axis=1)


def build_map(style: str) -> tuple[LaneMap, tuple[tuple[int, ...], ...]]:
    """Lane map for a style plus lane-index groups that share a road."""
    style = _normalize_token(style)
    if style in _MAP_CACHE:
        return _MAP_CACHE[style]
    offsets = [LANE_SEP * (i - (LANES_PER_ROAD - 1) / 2.0) for i in range(LANES_PER_ROAD)]
    if style == "straight_road":
        lanes = [Lane(_straight_lane_points(o), LANE_WIDTH) for o in offsets]
        groups: tuple[tuple[int, ...], ...] = (tuple(range(LANES_PER_ROAD)),)
    elif style == "curved_road":
        lanes = [Lane(_arc_lane_points(CURVE_RADIUS + o), LANE_WIDTH) for o in offsets]
        groups = (tuple(range(LANES_PER_ROAD)),)
    elif style == "intersection":
        lanes = [Lane(_straight_lane_points(o), LANE_WIDTH) for o in offsets]
        lanes += [Lane(_straight_lane_points(o, along_y=True), LANE_WIDTH) for o in offsets]
        groups = (tuple(range(LANES_PER_ROAD)), tuple(range(LANES_PER_ROAD, 2 * LANES_PER_ROAD)))
    else:  # pragma: no cover - GenParams already validates
        raise ValidationError(f"unknown map_style {style!r}")
    result = (LaneMap(lanes=tuple(lanes)), groups)
    _MAP_CACHE[style] = result
    return result


def _points_at_arcs(centerline: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions and left normals at several arc lengths (with end extrapolation)."""
    arcs = polyline_arc_lengths(centerline)
    seg = np.diff(centerline, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    tangents = seg / seg_len[:, None]
    idx = np.clip(np.searchsorted(arcs, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - arcs[idx]) / seg_len[idx]
    pts = centerline[idx] + t[:, None] * seg[idx]
    tang = tangents[idx]
    normals = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
    return pts, normals


@dataclass
class _Candidate:
    points: np.ndarray      # (past_points + future_steps, 2)
    lane_index: int
    speed: float
    maneuver: str


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _sample_candidate(
    rng: np.random.Generator,
    lane_map: LaneMap,
    groups: tuple[tuple[int, ...], ...],
    params: GenParams,
    names: tuple[str, ...],
    probs: np.ndarray,
) -> _Candidate:
    c = CONSTANTS
    n_lanes = len(lane_map)
    lane_i = int(rng.integers(n_lanes))
    lane = lane_map.lanes[lane_i]
    maneuver = str(rng.choice(np.array(names, dtype=object), p=probs))
    v = float(rng.uniform(*params.speed_range))
    delta = float(np.clip(rng.normal(0.0, 0.1), -MAX_LATERAL_OFFSET, MAX_LATERAL_OFFSET))
    s0 = float(rng.uniform(*PLACEMENT_WINDOW))

    times = (np.arange(c.past_points + c.future_steps) - c.past_steps) * c.dt
    if maneuver == "decelerate":
        v_end = float(rng.uniform(MIN_STEP_SPEED, max(MIN_STEP_SPEED + 0.1, 0.7 * v)))
        # speed falls linearly from v at the first past step to v_end at the
        # last future step; arc position is its exact integral from t = 0
        a = (v - v_end) / (times[-1] - times[0])
        arcs = s0 + v * times - 0.5 * a * ((times - times[0]) ** 2 - times[0] ** 2)
    else:
        arcs = s0 + v * times

    if maneuver == "gentle_curve":
        amp = float(rng.uniform(0.2, 0.45))
        omega = float(rng.uniform(0.3, 0.6))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        lateral = delta + amp * np.sin(omega * times + phase)
    elif maneuver == "lane_change":
        group = next(g for g in groups if lane_i in g)
        pos = group.index(lane_i)
        neighbors = [group[pos + step] for step in (-1, 1) if 0 <= pos + step < len(group)]
        if neighbors:
            dest = int(rng.choice(neighbors))
            # decide which lateral sign moves toward the destination lane;
            # the left normal does not always point along ascending lane index
            p0, n0 = _points_at_arcs(lane.centerline, np.array([s0]))
            probe = p0[0] + LANE_SEP * n0[0]
            d_plus = points_to_polyline_distance(
                probe[None, :], lane_map.lanes[dest].centerline
            )[0]
            direction = 1 if d_plus < LANE_SEP / 2.0 else -1
        else:
            direction = 0
        delta2 = float(np.clip(rng.normal(0.0, 0.1), -MAX_LATERAL_OFFSET, MAX_LATERAL_OFFSET))
        t_start = float(rng.uniform(0.0, 1.0))
        w = _smoothstep((times - t_start) / 4.0)
        lateral = delta + (LANE_SEP * direction + delta2 - delta) * w
    else:
        lateral = np.full_like(times, delta)

    pts, normals = _points_at_arcs(lane.centerline, arcs)
    points = pts + lateral[:, None] * normals
    return _Candidate(points=points, lane_index=lane_i, speed=v, maneuver=maneuver)


def _generate_scene(seed, params: GenParams, scene_id: str) -> tuple[Scene, int]:
    c = CONSTANTS
    rng = np.random.default_rng(seed)
    lane_map, groups = build_map(params.map_style)
    names, probs = params.mix_arrays()
    lo, hi = params.n_agents_range
    n_agents = int(rng.integers(lo, hi + 1))

    accepted: list[_Candidate] = []
    stack: np.ndarray | None = None
    warnings = 0
    for _ in range(n_agents):
        placed = False
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            cand = _sample_candidate(rng, lane_map, groups, params, names, probs)
            if stack is None:
                ok = True
            else:
                d = np.linalg.norm(stack - cand.points[None, :, :], axis=2)
                ok = bool(d.min() >= c.clearance_min)
            if ok:
                accepted.append(cand)
                stack = (
                    cand.points[None]
                    if stack is None
                    else np.concatenate([stack, cand.points[None]], axis=0)
                )
                placed = True
                break
        if not placed:
            warnings += 1
    if not accepted:
        raise GenerationError(f"scene {scene_id}: could not place any agent")
    if warnings:
        log.warning("scene %s: dropped %d agent(s) after %d placement attempts",
                    scene_id, warnings, MAX_PLACEMENT_ATTEMPTS)

    target_idx = int(rng.integers(len(accepted)))
    agents = []
    for i, cand in enumerate(accepted):
        agents.append(
            Agent(
                id=f"a{i}",
                past=Trajectory(points=cand.points[: c.past_points], dt=c.dt),
                future=Trajectory(points=cand.points[c.past_points :], dt=c.dt),
                is_target=(i == target_idx),
            )
        )
    scene = Scene(
        id=scene_id,
        lane_map=lane_map,
        agents=tuple(agents),
        target_id=f"a{target_idx}",
    )
    return scene, warnings


def generate_scene(seed, params: GenParams, *, scene_id: str | None = None) -> Scene:
    """Generate one scene, deterministic in (seed, params)."""
    if scene_id is None:
        scene_id = f"scene-{seed}"
    scene, _ = _generate_scene(seed, params, scene_id)
    return scene


def generate_dataset(params: GenParams) -> Dataset:
    """Generate ``params.n_scenes`` scenes with per-scene derived seeds.

    Scene i uses a seed derived from (params.seed, i) only, so any subset can
    be regenerated independently and parallel generation agrees with serial.
    """
    scenes = []
    warnings = 0
    for i in range(params.n_scenes):
        ss = np.random.SeedSequence((params.seed, i))
        scene, w = _generate_scene(ss, params, scene_id=f"s{i:06d}")
        scenes.append(scene)
        warnings += w
    return Dataset(scenes=tuple(scenes), split="all", provenance=params, gen_warnings=warnings)


def split_dataset(
    dataset: Dataset,
    fractions: tuple[float, float, float],
    seed: int | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into train/val/test by a seeded shuffle.

    Fractions must be non-negative and sum to 1. The shuffle seed defaults to
    the generation seed so a dataset always splits the same way.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot split an empty dataset")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"invalid split fractions {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("split fractions must sum to 1")
    if seed is None:
        seed = dataset.provenance.seed if dataset.provenance is not None else 0
    n = len(dataset)
    order = np.random.default_rng(np.random.SeedSequence((seed, n, 7))).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    picks = {
        "train": order[:n_train],
        "val": order[n_train : n_train + n_val],
        "test": order[n_train + n_val :],
    }
    out = []
    for split, idx in picks.items():
        idx = np.sort(idx)
        out.append(
            Dataset(
                scenes=tuple(dataset.scenes[i] for i in idx),
                split=split,
                provenance=dataset.provenance,
            )
        )
    return tuple(out)


# ---------------------------------------------------------------------------
# Scene records: one JSON object per line. Floats use shortest round-trip
# decimal text, so parse(write(scene)) is exact.

_SCENE_KEYS = {"id", "dt", "lanes", "agents", "poison_tag"}
_LANE_KEYS = {"centerline", "width"}
_AGENT_KEYS = {"id", "past", "future", "is_target", "is_inserted", "past_valid"}


def _reject_unknown(obj: dict, allowed: set[str], path: str, line: int | None) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SceneFormatError(f"{path}: unknown field(s) {sorted(unknown)}", line=line)


def _need(obj: dict, key: str, path: str, line: int | None):
    if key not in obj:
        raise SceneFormatError(f"{path}: missing required field {key!r}", line=line)
    return obj[key]


def _as_number(value, path: str, line: int | None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneFormatError(f"{path}: expected a number, got {type(value).__name__}", line=line)
    return float(value)


def _as_point_list(value, path: str, line: int | None) -> list[list[float]]:
    if not isinstance(value, list) or not value:
        raise SceneFormatError(f"{path}: expected a non-empty list of [x, y] points", line=line)
    pts = []
    for i, p in enumerate(value):
        if not isinstance(p, list) or len(p) != 2:
            raise SceneFormatError(f"{path}[{i}]: expected [x, y]", line=line)
        pts.append([_as_number(p[0], f"{path}[{i}].x", line), _as_number(p[1], f"{path}[{i}].y", line)])
    return pts


def parse_scene_record(text: str, *, line: int | None = None) -> Scene:
    """Parse one serialized scene, rejecting malformed or unknown fields."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneFormatError(f"invalid JSON: {e}", line=line) from e
    if not isinstance(obj, dict):
        raise SceneFormatError("scene record must be a JSON object", line=line)
    scene_id = obj.get("id")
    if not isinstance(scene_id, str) or not scene_id:
        raise SceneFormatError("scene.id: expected a non-empty string", line=line)
    where = f"scene {scene_id!r}"
    _reject_unknown(obj, _SCENE_KEYS, where, line)
    dt = _as_number(_need(obj, "dt", where, line), f"{where}.dt", line)

    lanes_raw = _need(obj, "lanes", where, line)
    if not isinstance(lanes_raw, list):
        raise SceneFormatError(f"{where}.lanes: expected a list", line=line)
    lanes = []
    for i, lane_obj in enumerate(lanes_raw):
        lpath = f"{where}.lanes[{i}]"
        if not isinstance(lane_obj, dict):
            raise SceneFormatError(f"{lpath}: expected an object", line=line)
        _reject_unknown(lane_obj, _LANE_KEYS, lpath, line)
        centerline = _as_point_list(_need(lane_obj, "centerline", lpath, line), f"{lpath}.centerline", line)
        width = _as_number(_need(lane_obj, "width", lpath, line), f"{lpath}.width", line)
        try:
            lanes.append(Lane(centerline=centerline, width=width))
        except ValidationError as e:
            raise SceneFormatError(f"{lpath}: {e}", line=line) from e

    agents_raw = _need(obj, "agents", where, line)
    if not isinstance(agents_raw, list) or not agents_raw:
        raise SceneFormatError(f"{where}.agents: expected a non-empty list", line=line)
    agents = []
    target_id = None
    for i, agent_obj in enumerate(agents_raw):
        apath = f"{where}.agents[{i}]"
        if not isinstance(agent_obj, dict):
            raise SceneFormatError(f"{apath}: expected an object", line=line)
        _reject_unknown(agent_obj, _AGENT_KEYS, apath, line)
        aid = _need(agent_obj, "id", apath, line)
        if not isinstance(aid, str) or not aid:
            raise SceneFormatError(f"{apath}.id: expected a non-empty string", line=line)
        flags = {}
        for flag in ("is_target", "is_inserted"):
            value = _need(agent_obj, flag, apath, line)
            if not isinstance(value, bool):
                raise SceneFormatError(f"{apath}.{flag}: expected a boolean", line=line)
            flags[flag] = value
        past = _as_point_list(_need(agent_obj, "past", apath, line), f"{apath}.past", line)
        future = _as_point_list(_need(agent_obj, "future", apath, line), f"{apath}.future", line)
        past_valid = None
        if "past_valid" in agent_obj:
            raw_valid = agent_obj["past_valid"]
            if not isinstance(raw_valid, list) or not all(
                isinstance(v, bool) for v in raw_valid
            ):
                raise SceneFormatError(
                    f"{apath}.past_valid: expected a list of booleans", line=line
                )
            past_valid = tuple(raw_valid)
        try:
            agents.append(
                Agent(
                    id=aid,
                    past=Trajectory(points=past, dt=dt),
                    future=Trajectory(points=future, dt=dt),
                    past_valid=past_valid,
                    **flags,
                )
            )
        except ValidationError as e:
            raise SceneFormatError(f"{apath}: {e}", line=line) from e
        if flags["is_target"]:
            target_id = aid

    poison_tag = None
    if "poison_tag" in obj:
        tag = obj["poison_tag"]
        if (
            not isinstance(tag, list)
            or len(tag) != 2
            or not all(isinstance(x, str) for x in tag)
        ):
            raise SceneFormatError(
                f"{where}.poison_tag: expected [trigger kind, tar kind]", line=line
            )
        poison_tag = (tag[0], tag[1])

    if target_id is None:
        raise SceneFormatError(f"{where}: no agent has is_target set", line=line)
    try:
        return Scene(
            id=scene_id,
            lane_map=LaneMap(lanes=tuple(lanes)),
            agents=tuple(agents),
            target_id=target_id,
            poison_tag=poison_tag,
        )
    except ValidationError as e:
        raise SceneFormatError(f"{where}: {e}", line=line) from e


def write_scene_record(scene: Scene) -> str:
    """Serialize a scene to a single line of JSON (exact float round-trip)."""
    obj: dict = {
        "id": scene.id,
        "dt": scene.dt,
        "lanes": [
            {"centerline": lane.centerline.tolist(), "width": lane.width}
            for lane in scene.lane_map.lanes
        ],
        "agents": [
            {
                "id": a.id,
                "past": a.past.points.tolist(),
                "future": a.future.points.tolist(),
                "is_target": a.is_target,
                "is_inserted": a.is_inserted,
                **(
                    {"past_valid": list(a.past_valid)}
                    if a.past_valid is not None
                    else {}
                ),
            }
            for a in scene.agents
        ],
    }
    if scene.poison_tag is not None:
        obj["poison_tag"] = list(scene.poison_tag)
    return json.dumps(obj, separators=(",", ":"))


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for scene in dataset.scenes:
            f.write(write_scene_record(scene))
            f.write("\n")


def read_dataset(path, split: str = "all") -> Dataset:
    scenes = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, text in enumerate(f, start=1):
            text = text.strip()
            if not text:
                continue
            scenes.append(parse_scene_record(text, line=lineno))
    return Dataset(scenes=tuple(scenes), split=split)
