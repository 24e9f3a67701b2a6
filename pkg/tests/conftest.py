from __future__ import annotations

import numpy as np
import pytest

from trajbench.core import CONSTANTS, Agent, Lane, LaneMap, Scene, Trajectory


def straight_lane(y: float = 0.0, x0: float = -300.0, x1: float = 300.0, width: float = 3.7) -> Lane:
    xs = np.arange(x0, x1 + 1e-9, 10.0)
    return Lane(centerline=np.stack([xs, np.full_like(xs, y)], axis=1), width=width)


def constant_speed_agent(
    agent_id: str,
    start: tuple[float, float],
    velocity: tuple[float, float],
    is_target: bool = False,
    dt: float = CONSTANTS.dt,
) -> Agent:
    v = np.asarray(velocity, dtype=float)
    p0 = np.asarray(start, dtype=float)
    past_t = np.arange(-CONSTANTS.past_steps, 1)[:, None] * dt
    fut_t = np.arange(1, CONSTANTS.future_steps + 1)[:, None] * dt
    return Agent(
        id=agent_id,
        past=Trajectory(points=p0 + past_t * v, dt=dt),
        future=Trajectory(points=p0 + fut_t * v, dt=dt),
        is_target=is_target,
    )


def simple_scene(scene_id: str = "scene-a", target_speed: float = 10.0, extra=()) -> Scene:
    agents = [constant_speed_agent("t0", (0.0, 0.0), (target_speed, 0.0), is_target=True)]
    agents.extend(extra)
    return Scene(
        id=scene_id,
        lane_map=LaneMap(lanes=(straight_lane(0.0), straight_lane(3.5), straight_lane(-3.5))),
        agents=tuple(agents),
        target_id="t0",
    )


def random_params(seed: int, modes: int = 3) -> dict:
    """Network parameters with every entry drawn at random; useful for
    gradient checks and metric tests that need nonzero predictions."""
    from trajbench.predictor import init_params

    shapes = init_params(0, modes)
    rng = np.random.default_rng(seed)
    return {k: rng.normal(0.0, 0.2, v.shape) for k, v in shapes.items()}


@pytest.fixture
def scene():
    return simple_scene()
