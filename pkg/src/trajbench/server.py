"""HTTP backend for the manual inspection bench.

Serves cluster listings and inspection sessions over a small JSON API and
optionally a static UI directory. Attacker-side ground truth (poison tags,
inserted-agent flags, per-cluster poison fractions) is scrubbed from every
payload: the inspector must judge scenes on the trajectory data alone.
Cluster budgets and the end-of-session found/not-found outcome are the
inspection protocol's own outputs and stay visible.

Sessions persist to a JSON file with an atomic replace on every mutation,
so a restarted server resumes exactly where the inspector left off.
"""
from __future__ import annotations

import json
import logging
import os
import re
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .core import Scene, ValidationError, target_frame_of
from .defenses import InspectionSession, TriageReport, scene_future_matrix, start_session
from .poisoner import PoisonManifest
from .synthgen import Dataset, write_scene_record

__all__ = ["BenchState", "make_server"]

log = logging.getLogger(__name__)

# Attacker-side ground truth: which scenes/agents carry the trigger, and how
# concentrated the poison is per cluster. Budgets and the end-of-session
# found/not-found outcome are the inspection protocol's own outputs and stay
# visible.
_SCRUB_AGENT_FIELDS = ("is_inserted",)
_SCRUB_SCENE_FIELDS = ("poison_tag",)


class _NotFound(Exception):
    """Request names a resource the server does not have."""


def scrubbed_scene_payload(scene: Scene) -> dict:
    """Scene record with every attacker-side field removed."""
    obj = json.loads(write_scene_record(scene))
    for field in _SCRUB_SCENE_FIELDS:
        obj.pop(field, None)
    for agent in obj.get("agents", ()):
        for field in _SCRUB_AGENT_FIELDS:
            agent.pop(field, None)
    return obj


class BenchState:
    """Shared state behind the HTTP handlers; all mutation is locked and
    persisted."""

    def __init__(
        self,
        dataset: Dataset,
        report: TriageReport,
        sessions_path,
        static_dir=None,
        manifest: PoisonManifest | None = None,
    ):
        self.scenes = {scene.id: scene for scene in dataset.scenes}
        self.report = report
        self.manifest = manifest
        self.sessions_path = Path(sessions_path)
        self.static_dir = Path(static_dir) if static_dir else None
        self.lock = threading.Lock()
        self.sessions: dict[str, InspectionSession] = {}
        self._counter = 0
        self.cluster_of = {
            sid: cluster for cluster in report.clusters for sid in cluster.scene_ids
        }
        self.centroids = self._cluster_centroids(dataset)
        if self.sessions_path.exists():
            self._restore()

    def _cluster_centroids(self, dataset: Dataset) -> dict[int, np.ndarray]:
        """Mean member future per cluster (target frame), for the viewer
        overlay."""
        rows = scene_future_matrix(dataset)
        row_of = {scene.id: i for i, scene in enumerate(dataset.scenes)}
        centroids = {}
        for cluster in self.report.clusters:
            idx = [row_of[sid] for sid in cluster.scene_ids if sid in row_of]
            if idx:
                mean = rows[idx].mean(axis=0)
                centroids[cluster.label] = mean.reshape(-1, 2)
        return centroids

    # -- persistence -----------------------------------------------------

    def _restore(self) -> None:
        try:
            obj = json.loads(self.sessions_path.read_text())
            self.sessions = {
                sid: InspectionSession.from_json(rec)
                for sid, rec in obj.get("sessions", {}).items()
            }
            self._counter = int(obj.get("counter", len(self.sessions)))
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            raise ValidationError(f"cannot restore sessions from {self.sessions_path}: {e}") from e

    def persist(self) -> None:
        """Atomic write: temp file in the same directory, then rename."""
        payload = {
            "counter": self._counter,
            "sessions": {sid: s.to_json() for sid, s in self.sessions.items()},
        }
        text = json.dumps(payload, separators=(",", ":"), sort_keys=True)
        fd, tmp = tempfile.mkstemp(
            dir=self.sessions_path.parent, prefix=".sessions-", suffix=".tmp"
        )
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, self.sessions_path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # -- operations (called with the lock held by the handler) ------------

    def create_session(self, policy: str, seed: int, flat_budget: int | None) -> str:
        session_id = f"session-{self._counter}"
        self._counter += 1
        session = start_session(
            self.report, policy=policy, seed=seed, flat_budget=flat_budget,
            session_id=session_id,
        )
        self.sessions[session_id] = session
        self.persist()
        return session_id

    def clusters_payload(self) -> dict:
        return {
            "clusters": [
                {"label": c.label, "size": c.size, "budget": c.budget}
                for c in self.report.clusters
                if c.size > 0
            ],
            "n_scenes": len(self.scenes),
        }

    def sample_context(self, session: InspectionSession, scene_id: str) -> dict:
        """Cluster id/size/budget plus this session's progress inside the
        cluster, and the centroid overlay in the scene's world frame."""
        cluster = self.cluster_of.get(scene_id)
        if cluster is None:
            return {}
        served_here = sum(
            1 for sid in session.served_ids() if self.cluster_of.get(sid) is cluster
        )
        payload = {
            "cluster": {
                "label": cluster.label,
                "size": cluster.size,
                "budget": cluster.budget,
                "served_in_cluster": served_here,
            }
        }
        centroid = self.centroids.get(cluster.label)
        scene = self.scenes.get(scene_id)
        if centroid is not None and scene is not None:
            frame = scene.frame if scene.frame is not None else target_frame_of(scene)
            payload["centroid"] = frame.to_world(centroid).tolist()
        return payload


class _Handler(BaseHTTPRequestHandler):
    server_version = "trajbench"
    protocol_version = "HTTP/1.1"

    # routes: (method, compiled pattern, handler name)
    ROUTES = (
        ("GET", re.compile(r"^/api/clusters$"), "clusters"),
        ("GET", re.compile(r"^/api/sessions$"), "list_sessions"),
        ("POST", re.compile(r"^/api/sessions$"), "create_session"),
        ("GET", re.compile(r"^/api/sessions/([\w\-]+)/next$"), "next_sample"),
        ("POST", re.compile(r"^/api/sessions/([\w\-]+)/verdict$"), "verdict"),
        ("GET", re.compile(r"^/api/sessions/([\w\-]+)/summary$"), "summary"),
    )

    def log_message(self, fmt, *args):  # route http.server chatter to logging
        log.debug("http: " + fmt, *args)

    @property
    def state(self) -> BenchState:
        return self.server.state  # type: ignore[attr-defined]

    def _send_json(self, obj: dict, status: int = 200) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ValidationError("request body must be JSON")
        if not isinstance(obj, dict):
            raise ValidationError("request body must be a JSON object")
        return obj

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0]
        for verb, pattern, name in self.ROUTES:
            if verb != method:
                continue
            m = pattern.match(path)
            if m:
                try:
                    getattr(self, "handle_" + name)(*m.groups())
                except _NotFound as e:
                    self._send_json({"error": str(e)}, status=404)
                except ValidationError as e:
                    self._send_json({"error": str(e)}, status=400)
                except Exception:  # pragma: no cover - defensive
                    log.exception("unhandled server error")
                    self._send_json({"error": "internal error"}, status=500)
                return
        if method == "GET" and self._serve_static(path):
            return
        self._send_json({"error": f"no route for {method} {path}"}, status=404)

    def do_GET(self) -> None:  # noqa: N802 (http.server naming)
        self._dispatch("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._dispatch("POST")

    # -- API handlers ------------------------------------------------------

    def handle_clusters(self) -> None:
        with self.state.lock:
            self._send_json(self.state.clusters_payload())

    def handle_list_sessions(self) -> None:
        with self.state.lock:
            rows = [
                {
                    "session_id": sid,
                    "policy": s.policy,
                    "total": len(s.queue),
                    "served": s.position,
                    "judged": len(s.verdicts()),
                }
                for sid, s in sorted(self.state.sessions.items())
            ]
        self._send_json({"sessions": rows})

    def handle_create_session(self) -> None:
        body = self._read_body()
        policy = str(body.get("policy", "oracle"))
        seed = body.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        flat_budget = body.get("flat_budget")
        if flat_budget is not None and not isinstance(flat_budget, int):
            raise ValidationError("flat_budget must be an integer")
        with self.state.lock:
            session_id = self.state.create_session(policy, seed, flat_budget)
            total = len(self.state.sessions[session_id].queue)
        self._send_json({"session_id": session_id, "total": total}, status=201)

    def _session(self, session_id: str) -> InspectionSession:
        session = self.state.sessions.get(session_id)
        if session is None:
            raise _NotFound(f"no session {session_id!r}")
        return session

    def handle_next_sample(self, session_id: str) -> None:
        with self.state.lock:
            session = self._session(session_id)
            scene_id = session.next_sample()
            if scene_id is not None:
                self.state.persist()
            position = session.position
            total = len(session.queue)
            scene = self.state.scenes.get(scene_id) if scene_id else None
            context = self.state.sample_context(session, scene_id) if scene_id else {}
        if scene_id is None:
            self._send_json({"done": True, "served": position, "total": total})
            return
        if scene is None:
            raise ValidationError(f"scene {scene_id!r} missing from the dataset")
        self._send_json(
            {
                "done": False,
                "scene_id": scene_id,
                "index": position,
                "total": total,
                "scene": scrubbed_scene_payload(scene),
                **context,
            }
        )

    def handle_verdict(self, session_id: str) -> None:
        body = self._read_body()
        scene_id = body.get("scene_id")
        flagged = body.get("flagged")
        if not isinstance(scene_id, str):
            raise ValidationError("verdict needs a scene_id string")
        if not isinstance(flagged, bool):
            raise ValidationError("verdict needs a boolean 'flagged'")
        with self.state.lock:
            session = self._session(session_id)
            session.submit_verdict(scene_id, flagged)
            self.state.persist()
            judged = len(session.verdicts())
        self._send_json({"ok": True, "judged": judged})

    def handle_summary(self, session_id: str) -> None:
        with self.state.lock:
            session = self._session(session_id)
            flagged = tuple(sid for sid, v in session.verdicts().items() if v)
            payload = {
                "session_id": session_id,
                "policy": session.policy,
                "total": len(session.queue),
                "served": session.position,
                "judged": len(session.verdicts()),
                "flagged_ids": sorted(flagged),
                "clusters": [
                    {
                        "label": c.label,
                        "size": c.size,
                        "budget": c.budget,
                        "served_in_cluster": sum(
                            1
                            for sid in session.served_ids()
                            if self.state.cluster_of.get(sid) is c
                        ),
                    }
                    for c in self.state.report.clusters
                    if c.size > 0
                ],
            }
            if self.state.manifest is not None:
                payload["found_tar"] = session.summarize(self.state.manifest).found_tar
        self._send_json(payload)

    # -- static UI ----------------------------------------------------------

    _STATIC_TYPES = {
        ".html": "text/html; charset=utf-8",
        ".js": "text/javascript; charset=utf-8",
        ".css": "text/css; charset=utf-8",
        ".svg": "image/svg+xml",
        ".json": "application/json",
        ".map": "application/json",
    }

    def _serve_static(self, path: str) -> bool:
        root = self.state.static_dir
        if root is None or not root.is_dir():
            if path == "/":
                self._send_json({"service": "trajbench inspection bench", "ui": None})
                return True
            return False
        rel = "index.html" if path == "/" else path.lstrip("/")
        target = (root / rel).resolve()
        if not str(target).startswith(str(root.resolve())) or not target.is_file():
            return False
        ctype = self._STATIC_TYPES.get(target.suffix, "application/octet-stream")
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True


def make_server(state: BenchState, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """ThreadingHTTPServer wired to the bench state; port 0 picks a free
    port (see ``server.server_address``)."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.state = state  # type: ignore[attr-defined]
    return server
