from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajbench.core import (
    CONSTANTS,
    Agent,
    Lane,
    LaneMap,
    PhysicalConstants,
    Scene,
    Trajectory,
    ValidationError,
    current_velocity,
    heading_and_speed,
    min_scene_clearance,
    point_at_arc,
    points_to_polyline_distance,
    polyline_arc_lengths,
    project_to_polyline,
    to_target_frame,
)
from conftest import constant_speed_agent, simple_scene, straight_lane


def test_constants_defaults():
    c = PhysicalConstants()
    assert c.lane_width_min == 2.8
    assert c.vehicle_width == 1.77
    assert c.brake_horizon == 2.0
    assert c.dt == 0.5
    assert c.past_steps == 4 and c.future_steps == 12
    assert c.spatial_offset == 25.0 and c.spatial_offset_std == 0.5
    assert c.clearance_min == 2.0
    # the brake horizon spans exactly the observed past window
    assert c.brake_horizon == c.past_steps * c.dt


def test_constants_reject_inconsistent_horizon():
    with pytest.raises(ValidationError):
        PhysicalConstants(brake_horizon=3.0)
    with pytest.raises(ValidationError):
        PhysicalConstants(dt=-0.5)


def test_trajectory_validation():
    with pytest.raises(ValidationError):
        Trajectory(points=np.zeros((0, 2)), dt=0.5)
    with pytest.raises(ValidationError):
        Trajectory(points=[[0.0, np.nan]], dt=0.5)
    with pytest.raises(ValidationError):
        Trajectory(points=[[0.0, 0.0]], dt=0.0)
    t = Trajectory(points=[[0.0, 0.0], [1.0, 0.0]], dt=0.5)
    assert len(t) == 2
    with pytest.raises(ValueError):
        t.points[0, 0] = 5.0  # frozen storage


def test_lane_width_floor():
    pts = [[0.0, 0.0], [10.0, 0.0]]
    with pytest.raises(ValidationError):
        Lane(centerline=pts, width=2.0)
    assert Lane(centerline=pts, width=2.8).width == 2.8
    with pytest.raises(ValidationError):
        Lane(centerline=[[0.0, 0.0], [0.0, 0.0]], width=3.5)


def test_scene_rejects_duplicate_targets():
    a = constant_speed_agent("a", (0, 0), (5, 0), is_target=True)
    b = constant_speed_agent("b", (10, 0), (5, 0), is_target=True)
    with pytest.raises(ValidationError):
        Scene(id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(a, b), target_id="a")


def test_scene_rejects_mismatched_dt():
    a = constant_speed_agent("a", (0, 0), (5, 0), is_target=True)
    b = constant_speed_agent("b", (10, 0), (5, 0), dt=0.1)
    with pytest.raises(ValidationError):
        Scene(id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(a, b), target_id="a")


def test_heading_and_speed_basic():
    t = Trajectory(points=[[0.0, 0.0], [1.0, 0.0]], dt=0.5)
    heading, speed = heading_and_speed(t, 1)
    assert heading == 0.0
    assert speed == 2.0


def test_heading_and_speed_zero_displacement_carries_heading():
    t = Trajectory(points=[[0.0, 0.0], [0.0, 1.0], [0.0, 1.0]], dt=0.5)
    heading, speed = heading_and_speed(t, 2)
    assert speed == 0.0
    assert heading == pytest.approx(math.pi / 2)
    # a path that never moved has heading 0
    t2 = Trajectory(points=[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]], dt=0.5)
    assert heading_and_speed(t2, 2) == (0.0, 0.0)


def test_heading_and_speed_index_bounds():
    t = Trajectory(points=[[0.0, 0.0], [1.0, 0.0]], dt=0.5)
    with pytest.raises(ValidationError):
        heading_and_speed(t, 0)
    with pytest.raises(ValidationError):
        heading_and_speed(t, 2)


def test_current_velocity():
    a = constant_speed_agent("a", (3.0, -2.0), (4.0, 3.0), is_target=True)
    np.testing.assert_allclose(current_velocity(a), [4.0, 3.0], atol=1e-12)


def test_to_target_frame_heading_plus_y():
    # target driving along +y: a point 1 m ahead must land at (1, 0)
    agents = (
        Agent(
            id="t0",
            past=Trajectory(points=[[5.0, float(k)] for k in range(5)], dt=0.5),
            future=Trajectory(points=[[5.0, 5.0 + k] for k in range(1, 13)], dt=0.5),
            is_target=True,
        ),
    )
    scene = Scene(
        id="s",
        lane_map=LaneMap(lanes=(straight_lane(),)),
        agents=agents,
        target_id="t0",
    )
    local = to_target_frame(scene)
    ahead = local.frame.to_local(np.array([[5.0, 5.0]]))
    np.testing.assert_allclose(ahead, [[1.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(local.target.past.points[-1], [0.0, 0.0], atol=1e-12)
    heading, _ = heading_and_speed(local.target.past, 4)
    assert abs(heading) < 1e-12


def test_to_target_frame_is_rigid_and_invertible(scene):
    rng = np.random.default_rng(7)
    local = to_target_frame(scene)
    pts_world = rng.normal(scale=30.0, size=(40, 2))
    pts_local = local.frame.to_local(pts_world)
    # pairwise distances preserved
    dw = np.linalg.norm(pts_world[:, None] - pts_world[None, :], axis=2)
    dl = np.linalg.norm(pts_local[:, None] - pts_local[None, :], axis=2)
    np.testing.assert_allclose(dw, dl, atol=1e-9)
    # round trip
    np.testing.assert_allclose(local.frame.to_world(pts_local), pts_world, atol=1e-9)


def test_to_target_frame_idempotent(scene):
    once = to_target_frame(scene)
    twice = to_target_frame(once)
    for a1, a2 in zip(once.agents, twice.agents):
        np.testing.assert_allclose(a1.past.points, a2.past.points, atol=1e-9)
        np.testing.assert_allclose(a1.future.points, a2.future.points, atol=1e-9)


def test_to_target_frame_stationary_target_flags_degenerate():
    stationary = Agent(
        id="t0",
        past=Trajectory(points=[[2.0, 3.0]] * 5, dt=0.5),
        future=Trajectory(points=[[2.0, 3.0]] * 12, dt=0.5),
        is_target=True,
    )
    scene = Scene(
        id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(stationary,), target_id="t0"
    )
    local = to_target_frame(scene)
    assert local.frame.degenerate
    assert local.frame.angle == 0.0
    np.testing.assert_allclose(local.target.past.points, np.zeros((5, 2)), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    angle=st.floats(-math.pi, math.pi),
    ox=st.floats(-100, 100),
    oy=st.floats(-100, 100),
    speed=st.floats(0.5, 20.0),
)
def test_to_target_frame_roundtrip_property(angle, ox, oy, speed):
    v = (speed * math.cos(angle), speed * math.sin(angle))
    agent = constant_speed_agent("t0", (ox, oy), v, is_target=True)
    scene = Scene(
        id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(agent,), target_id="t0"
    )
    local = to_target_frame(scene)
    back = local.frame.to_world(local.target.future.points)
    np.testing.assert_allclose(back, agent.future.points, atol=1e-9)
    # target future in local frame starts ahead along +x
    assert local.target.future.points[0, 0] > 0.0
    assert abs(local.target.future.points[0, 1]) < 1e-6


def test_polyline_arc_helpers():
    poly = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 5.0]])
    arcs = polyline_arc_lengths(poly)
    np.testing.assert_allclose(arcs, [0.0, 10.0, 15.0])
    np.testing.assert_allclose(point_at_arc(poly, 12.0), [10.0, 2.0])
    # extrapolation beyond both ends
    np.testing.assert_allclose(point_at_arc(poly, -2.0), [-2.0, 0.0])
    np.testing.assert_allclose(point_at_arc(poly, 17.0), [10.0, 7.0])


def test_project_to_polyline():
    poly = np.array([[0.0, 0.0], [10.0, 0.0]])
    s, d = project_to_polyline(poly, (3.0, 4.0))
    assert s == pytest.approx(3.0)
    assert d == pytest.approx(4.0)


def test_points_to_polyline_distance():
    poly = np.array([[0.0, 0.0], [10.0, 0.0]])
    d = points_to_polyline_distance(np.array([[5.0, 2.0], [15.0, 0.0]]), poly)
    np.testing.assert_allclose(d, [2.0, 5.0])


def test_min_scene_clearance():
    a = constant_speed_agent("a", (0, 0), (5, 0), is_target=True)
    b = constant_speed_agent("b", (0, 3.0), (5, 0))
    scene = Scene(
        id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(a, b), target_id="a"
    )
    assert min_scene_clearance(scene) == pytest.approx(3.0)


def test_scene_equality_ignores_frame(scene):
    assert scene == simple_scene()
    shifted = simple_scene(extra=(constant_speed_agent("n1", (30.0, 3.5), (8.0, 0.0)),))
    local = to_target_frame(shifted)
    assert local == shifted  # same geometry: target already at origin heading +x
    assert local.frame is not None and shifted.frame is None


def test_to_target_frame_moves_offset_scene():
    agent = constant_speed_agent("t0", (40.0, -7.0), (3.0, 4.0), is_target=True)
    scene = Scene(
        id="s", lane_map=LaneMap(lanes=(straight_lane(),)), agents=(agent,), target_id="t0"
    )
    local = to_target_frame(scene)
    assert local != scene
    np.testing.assert_allclose(local.target.past.points[-1], [0.0, 0.0], atol=1e-12)
    # speed is preserved by the rigid map: 5 m/s along +x
    np.testing.assert_allclose(
        local.target.past.displacements()[-1], [2.5, 0.0], atol=1e-12
    )
