import numpy as np
import pytest
from hypothesis import given, strategies as st

from lidar_normals.core import (Frame, NormalField, Pose, SensorConfig, as_normals, compose,
                                inverse, random_rotation, rotation_axis_angle, rotation_z,
                                transform_normal, transform_point, unit_vector)

RZ90 = Pose(rotation_z(np.pi / 2), np.zeros(3))


def random_pose(seed):
    rng = np.random.default_rng(seed)
    return Pose(random_rotation(rng), rng.normal(scale=10.0, size=3))


seeds = st.integers(0, 2**32 - 1)


def test_transform_point_identity():
    assert np.array_equal(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])


def test_transform_point_translation():
    assert np.array_equal(transform_point(Pose(np.eye(3), [1, 0, 0]), [0, 0, 0]), [1, 0, 0])


def test_transform_point_rz90():
    assert np.allclose(transform_point(RZ90, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_transform_normal_ignores_translation():
    pose = Pose(np.eye(3), [5, 5, 5])
    assert np.array_equal(transform_normal(pose, [0, 0, 1]), [0, 0, 1])


def test_transform_normal_rz90():
    assert np.allclose(transform_normal(RZ90, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_transform_normal_inverse_rz90():
    assert np.allclose(transform_normal(inverse(RZ90), [0, 1, 0]), [1, 0, 0], atol=1e-15)


@given(seeds, st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_inverse_round_trip(seed, p):
    pose = random_pose(seed)
    back = transform_point(inverse(pose), transform_point(pose, p))
    assert np.allclose(back, p, rtol=0, atol=1e-9)


@given(seeds, seeds, seeds)
def test_compose_associative(a, b, c):
    pa, pb, pc = random_pose(a), random_pose(b), random_pose(c)
    assert compose(compose(pa, pb), pc).allclose(compose(pa, compose(pb, pc)))


@given(seeds, seeds)
def test_inverse_of_composition(a, b):
    pa, pb = random_pose(a), random_pose(b)
    assert inverse(compose(pa, pb)).allclose(compose(inverse(pb), inverse(pa)))


@given(seeds, st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_transform_normal_preserves_norm(seed, n):
    out = transform_normal(random_pose(seed), n)
    assert abs(np.linalg.norm(out) - np.linalg.norm(n)) <= 1e-9 * max(1.0, np.linalg.norm(n))


def test_compose_applies_right_operand_first():
    shift = Pose(np.eye(3), [1, 0, 0])
    p = compose(RZ90, shift).apply([0, 0, 0])
    assert np.allclose(p, [0, 1, 0])


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, 1.1]), np.zeros(3))


def test_pose_rejects_reflection():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pose_rejects_nan():
    with pytest.raises(ValueError):
        Pose(np.eye(3), [np.nan, 0, 0])


def test_pose_is_immutable():
    pose = Pose.identity()
    with pytest.raises(ValueError):
        pose.rotation[0, 0] = 2.0


def test_pose_matrix_round_trip():
    pose = random_pose(7)
    assert Pose.from_matrix(pose.as_matrix()) == pose


def test_rotation_axis_angle_matches_rz():
    assert np.allclose(rotation_axis_angle([0, 0, 1], 0.3), rotation_z(0.3))


def test_unit_vector_check():
    assert np.array_equal(unit_vector([0, 0, 1]), [0, 0, 1])
    with pytest.raises(ValueError):
        unit_vector([0, 0, 1.1])


def test_frame_length_mismatch():
    with pytest.raises(ValueError):
        Frame(np.zeros((3, 3)), np.zeros((2, 3)))


def test_frame_bad_shape():
    with pytest.raises(ValueError):
        Frame(np.zeros((3, 2)))


def test_frame_world_points():
    fr = Frame([[1.0, 0, 0]], pose=Pose(rotation_z(np.pi / 2), [0, 0, 2]))
    assert np.allclose(fr.world_points(), [[0, 1, 2]])


def test_gt_field_requires_normals():
    with pytest.raises(ValueError):
        Frame(np.zeros((1, 3))).gt_field()


def test_normal_field_finalized():
    f = NormalField([[0, 0, 2.0], [0, 0, 0], [3.0, 4.0, 0]]).finalized()
    assert np.allclose(f.normals, [[0, 0, 1], [0, 0, 1], [0.6, 0.8, 0]])
    assert f.flagged.tolist() == [1]
    assert f.is_unit()


def test_as_normals_accepts_arrays_and_fields():
    a = np.eye(3)
    assert as_normals(NormalField(a)) is not None
    assert np.array_equal(as_normals(a), a)


def test_sensor_defaults():
    s = SensorConfig()
    assert (s.beams, s.upper_fov_deg, s.lower_fov_deg, s.horizontal_fov_deg) == (64, 10.0, -30.0, 360.0)
    assert (s.max_range_m, s.points_per_second, s.rotation_hz) == (100.0, 2_000_000, 10.0)
    assert (s.drop_ratio, s.noise_std_m) == (0.45, 0.02)
    assert s.azimuth_count == 3125
    assert s.ray_directions().shape == (64 * 3125, 3)


def test_sensor_elevations_span_fov():
    el = np.rad2deg(SensorConfig().elevations())
    assert el[0] == pytest.approx(-30.0) and el[-1] == pytest.approx(10.0)


@pytest.mark.parametrize("kwargs", [
    {"beams": 0}, {"lower_fov_deg": 10.0, "upper_fov_deg": 10.0}, {"drop_ratio": 1.5},
    {"noise_std_m": -0.1}, {"max_range_m": 0.0}, {"rotation_hz": 0.0},
])
def test_sensor_invalid(kwargs):
    with pytest.raises(ValueError):
        SensorConfig(**kwargs)


def test_ray_directions_unit():
    d = SensorConfig(beams=4, points_per_second=4000).ray_directions()
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
