"""Defender-side tooling: off-road screening, input masking, and
cluster-guided manual inspection.

The inspection math rests on one bound: if a fraction f of a cluster is
poisoned, the chance that n uniform draws without replacement all miss the
poison is at most (1 - f)^n. The budget picks the smallest n pushing that
below alpha.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import CONSTANTS, Scene, ValidationError, points_to_polyline_distance, to_target_frame
from .poisoner import PoisonManifest
from .synthgen import Dataset

__all__ = [
    "point_offroad",
    "scene_offroad",
    "offroad_rate",
    "mask_drop_past",
    "mask_partial_past",
    "mask_agents",
    "kmeans",
    "inspection_budget",
    "ClusterInfo",
    "TriageReport",
    "triage_report",
    "scene_future_matrix",
    "InspectionSession",
    "SessionSummary",
    "start_session",
]

log = logging.getLogger(__name__)

_MASK_STREAM = 431
_SESSION_STREAM = 41
AGENT_DROP_P = 0.75


# ---------------------------------------------------------------------------
# off-road screening

def point_offroad(scene: Scene, points: np.ndarray) -> np.ndarray:
    """Boolean per point: True when the point lies outside every lane
    corridor (distance to each centerline above that lane's half width)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    off = np.ones(len(points), dtype=bool)
    for lane in scene.lane_map.lanes:
        d = points_to_polyline_distance(points, lane.centerline)
        off &= d > lane.width / 2.0
    return off


def scene_offroad(scene: Scene) -> bool:
    """True when any point of the target's future leaves the road."""
    return bool(point_offroad(scene, scene.target.future.points).any())


def offroad_rate(dataset: Dataset) -> float:
    """Fraction of scenes whose target future has an off-road event."""
    if len(dataset) == 0:
        raise ValidationError("cannot compute an off-road rate on an empty dataset")
    flags = [scene_offroad(s) for s in dataset.scenes]
    return float(np.mean(flags))


# ---------------------------------------------------------------------------
# masking defenses: hide past observations without deleting points

def _rebuild(dataset: Dataset, scenes: list[Scene]) -> Dataset:
    return Dataset(
        scenes=tuple(scenes),
        split=dataset.split,
        provenance=dataset.provenance,
        gen_warnings=dataset.gen_warnings,
    )


def mask_drop_past(dataset: Dataset) -> Dataset:
    """Keep only each agent's final past point (plus its velocity channel)."""
    flags = (False,) * (CONSTANTS.past_points - 1) + (True,)
    scenes = []
    for scene in dataset.scenes:
        agents = tuple(replace(a, past_valid=flags) for a in scene.agents)
        scenes.append(replace(scene, agents=agents))
    return _rebuild(dataset, scenes)


def mask_partial_past(dataset: Dataset, seed: int = 0) -> Dataset:
    """Hide a uniformly drawn half (rounded up) of each agent's past points."""
    n_pts = CONSTANTS.past_points
    n_mask = (n_pts + 1) // 2
    scenes = []
    for index, scene in enumerate(dataset.scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, index, _MASK_STREAM)))
        agents = []
        for agent in scene.agents:
            hide = rng.permutation(n_pts)[:n_mask]
            valid = np.ones(n_pts, dtype=bool)
            valid[hide] = False
            agents.append(replace(agent, past_valid=tuple(bool(v) for v in valid)))
        scenes.append(replace(scene, agents=tuple(agents)))
    return _rebuild(dataset, scenes)


def mask_agents(dataset: Dataset, seed: int = 0, drop_p: float = AGENT_DROP_P) -> Dataset:
    """Hide whole non-target agents with probability ``drop_p`` each; the
    target is never hidden."""
    if not 0.0 <= drop_p <= 1.0:
        raise ValidationError(f"drop_p must be in [0, 1], got {drop_p}")
    hidden = (False,) * CONSTANTS.past_points
    scenes = []
    for index, scene in enumerate(dataset.scenes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, index, _MASK_STREAM)))
        agents = []
        for agent in scene.agents:
            if not agent.is_target and rng.random() < drop_p:
                agents.append(replace(agent, past_valid=hidden))
            else:
                agents.append(agent)
        scenes.append(replace(scene, agents=tuple(agents)))
    return _rebuild(dataset, scenes)


# ---------------------------------------------------------------------------
# k-means with distance-weighted seeding

def kmeans(
    points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster rows of ``points`` into k groups.

    Seeds are drawn with probability proportional to squared distance from
    the centers already chosen. Lloyd iterations stop when labels settle; a
    cluster that empties is reseeded from the point farthest from its
    assigned center. Deterministic for a given seed.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValidationError(f"points must be 2-D, got shape {points.shape}")
    n = len(points)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValidationError(f"need at least k={k} points, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 643)))

    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = points[int(rng.integers(n))]
        else:
            centers[j] = points[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((points - centers[j]) ** 2, axis=1))

    labels = np.full(n, -1)
    for _ in range(max_iter):
        dists = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(dists, axis=1)
        for j in range(k):
            members = new_labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                assigned = dists[np.arange(n), new_labels]
                far = int(np.argmax(assigned))
                centers[j] = points[far]
                new_labels[far] = j
        if (new_labels == labels).all():
            break
        labels = new_labels
    return labels, centers


# ---------------------------------------------------------------------------
# inspection budgets

def inspection_budget(f: float, alpha: float = 0.01, cap: int | None = None):
    """Smallest sample count n with (1 - f)^n <= alpha, or None when no
    finite n works (f = 0).

    A hair of tolerance absorbs float error at exact boundaries, so
    f = 0.9 yields 2 even though 0.1**2 lands a hair above 0.01. ``cap``
    clamps finite budgets (e.g. to the cluster size).
    """
    if not 0.0 <= f <= 1.0:
        raise ValidationError(f"poison fraction must be in [0, 1], got {f}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if cap is not None and cap < 1:
        raise ValidationError(f"cap must be >= 1, got {cap}")
    if f <= 0.0:
        return None
    bound = alpha * (1.0 + 1e-9)
    if f >= 1.0:
        n = 1
    else:
        est = math.log(alpha) / math.log(1.0 - f)
        n = max(1, int(math.floor(est)) - 1)
        while (1.0 - f) ** n > bound:
            n += 1
    return n if cap is None else min(n, cap)


# ---------------------------------------------------------------------------
# triage: cluster futures, size the manual inspection effort

def scene_future_matrix(dataset: Dataset) -> np.ndarray:
    """Target futures in the target frame, flattened to one row per scene."""
    rows = [to_target_frame(s).target.future.points.ravel() for s in dataset.scenes]
    return np.stack(rows) if rows else np.zeros((0, 2 * CONSTANTS.future_steps))


@dataclass(frozen=True)
class ClusterInfo:
    label: int
    size: int
    scene_ids: tuple[str, ...]
    tar_fraction: float
    budget: int | None


@dataclass(frozen=True)
class TriageReport:
    k: int
    seed: int
    alpha: float
    clusters: tuple[ClusterInfo, ...]
    total_budget: int | None
    all_unbounded: bool


def triage_report(
    dataset: Dataset, manifest: PoisonManifest, k: int, seed: int = 0, alpha: float = 0.01
) -> TriageReport:
    """Cluster predicted-label space and size the inspection effort.

    Uses the manifest for the per-cluster poison fraction, so this is the
    attacker-aware view of how concentrated the poison is: the total budget
    covers only clusters that actually contain poisoned scenes.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot triage an empty dataset")
    labels, _ = kmeans(scene_future_matrix(dataset), k, seed=seed)
    tar_ids = manifest.scene_ids()
    clusters = []
    for j in range(k):
        member_idx = np.nonzero(labels == j)[0]
        ids = tuple(dataset.scenes[int(i)].id for i in member_idx)
        size = len(ids)
        if size == 0:
            clusters.append(ClusterInfo(j, 0, (), 0.0, None))
            continue
        f = sum(1 for sid in ids if sid in tar_ids) / size
        clusters.append(
            ClusterInfo(
                label=j,
                size=size,
                scene_ids=ids,
                tar_fraction=f,
                budget=inspection_budget(f, alpha, cap=size),
            )
        )
    finite = [c.budget for c in clusters if c.tar_fraction > 0.0 and c.budget is not None]
    total = sum(finite) if finite else None
    all_unbounded = all(c.tar_fraction == 0.0 for c in clusters)
    return TriageReport(
        k=k, seed=seed, alpha=alpha, clusters=tuple(clusters),
        total_budget=total, all_unbounded=all_unbounded,
    )


# ---------------------------------------------------------------------------
# interactive inspection sessions

@dataclass(frozen=True)
class SessionSummary:
    n_served: int
    n_judged: int
    n_flagged: int
    flagged_ids: tuple[str, ...]
    found_tar: bool


class InspectionSession:
    """Serves scenes for manual review, smallest cluster first.

    Within a cluster the draw is uniform without replacement, seeded, and
    capped by the cluster's budget. Verdicts are accepted once per served
    scene.
    """

    def __init__(self, session_id: str, seed: int, policy: str, queue: tuple[str, ...]):
        self.session_id = session_id
        self.seed = seed
        self.policy = policy
        self._queue = list(queue)
        self._cursor = 0
        self._verdicts: dict[str, bool] = {}

    @property
    def queue(self) -> tuple[str, ...]:
        return tuple(self._queue)

    @property
    def position(self) -> int:
        return self._cursor

    def served_ids(self) -> tuple[str, ...]:
        return tuple(self._queue[: self._cursor])

    def next_sample(self) -> str | None:
        """The next scene to inspect, or None when the budget is spent."""
        if self._cursor >= len(self._queue):
            return None
        scene_id = self._queue[self._cursor]
        self._cursor += 1
        return scene_id

    def submit_verdict(self, scene_id: str, flagged: bool) -> None:
        if scene_id not in self._queue[: self._cursor]:
            raise ValidationError(f"scene {scene_id!r} has not been served in this session")
        if scene_id in self._verdicts:
            raise ValidationError(f"scene {scene_id!r} already has a verdict")
        self._verdicts[scene_id] = bool(flagged)

    def verdicts(self) -> dict[str, bool]:
        return dict(self._verdicts)

    def summarize(self, manifest: PoisonManifest) -> SessionSummary:
        flagged = tuple(sid for sid in self._queue[: self._cursor] if self._verdicts.get(sid))
        tar_ids = manifest.scene_ids()
        return SessionSummary(
            n_served=self._cursor,
            n_judged=len(self._verdicts),
            n_flagged=len(flagged),
            flagged_ids=flagged,
            found_tar=any(sid in tar_ids for sid in flagged),
        )

    # -- persistence ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "seed": self.seed,
            "policy": self.policy,
            "queue": list(self._queue),
            "cursor": self._cursor,
            "verdicts": dict(self._verdicts),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InspectionSession":
        try:
            session = cls(
                session_id=str(obj["session_id"]),
                seed=int(obj["seed"]),
                policy=str(obj["policy"]),
                queue=tuple(str(s) for s in obj["queue"]),
            )
            cursor = int(obj["cursor"])
            verdicts = {str(k): bool(v) for k, v in obj["verdicts"].items()}
        except (KeyError, TypeError, AttributeError) as e:
            raise ValidationError(f"bad session record: {e}") from e
        if not 0 <= cursor <= len(session._queue):
            raise ValidationError("session cursor out of range")
        served = set(session._queue[:cursor])
        if not set(verdicts) <= served:
            raise ValidationError("session has verdicts for unserved scenes")
        session._cursor = cursor
        session._verdicts = verdicts
        return session

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "InspectionSession":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"bad session JSON: {e}") from e
        return cls.from_json(obj)


def start_session(
    report: TriageReport,
    policy: str = "oracle",
    seed: int = 0,
    flat_budget: int | None = None,
    session_id: str = "session-0",
) -> InspectionSession:
    """Build the inspection queue for a triage report.

    ``oracle`` policy uses each cluster's computed budget (skipping
    unbounded clusters); ``flat`` spends the same fixed count in every
    cluster. Clusters are visited smallest first.
    """
    if policy not in ("oracle", "flat"):
        raise ValidationError(f"unknown session policy {policy!r}")
    if policy == "flat":
        if flat_budget is None or flat_budget < 1:
            raise ValidationError("flat policy needs flat_budget >= 1")
    queue: list[str] = []
    ordered = sorted(
        (c for c in report.clusters if c.size > 0), key=lambda c: (c.size, c.label)
    )
    for cluster in ordered:
        budget = cluster.budget if policy == "oracle" else min(flat_budget, cluster.size)
        if budget is None:
            continue  # no finite budget makes this cluster worth sampling
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, cluster.label, _SESSION_STREAM))
        )
        picks = rng.permutation(cluster.size)[:budget]
        queue.extend(cluster.scene_ids[int(i)] for i in sorted(picks.tolist()))
    return InspectionSession(session_id=session_id, seed=seed, policy=policy, queue=tuple(queue))
