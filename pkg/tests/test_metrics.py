import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_normals
from lidar_normals.core import Frame, Pose, rotation_z
from lidar_normals.metrics import (DEFAULT_THRESHOLDS, MetricsReport, angular_errors,
                                   cross_frame_disagreement, evaluate, sphere_grid, summarize,
                                   vmf_kde)

floats_deg = st.floats(0.0, 180.0, allow_nan=False)


def test_identical_zero():
    n = random_normals(np.random.default_rng(0), 50, 0.0)
    assert np.all(angular_errors(n, n) == 0.0)


def test_orthogonal_ninety():
    assert angular_errors([[1.0, 0, 0]], [[0, 1.0, 0]])[0] == pytest.approx(90.0, abs=1e-12)


def test_ten_degrees():
    a = np.deg2rad(10.0)
    err = angular_errors([[0, 0, 1.0]], [[0, np.sin(a), np.cos(a)]])[0]
    assert err == pytest.approx(10.0, abs=1e-9)


def test_opposite_is_180():
    assert angular_errors([[0, 0, -1.0]], [[0, 0, 1.0]])[0] == 180.0


def test_unnormalised_prediction():
    assert angular_errors([[0, 0, 5.0]], [[0, 0, 1.0]])[0] == 0.0


def test_zero_prediction_scores_90_and_is_flagged():
    err, flags = angular_errors([[0, 0, 0.0], [0, 0, 1.0]], [[0, 0, 1.0], [0, 0, 1.0]],
                                return_flags=True)
    assert err.tolist() == [90.0, 0.0]
    assert flags.tolist() == [True, False]


def test_length_mismatch():
    with pytest.raises(ValueError):
        angular_errors(np.zeros((2, 3)), np.zeros((3, 3)))


@given(st.integers(0, 10_000))
def test_symmetric_for_unit_fields(seed):
    rng = np.random.default_rng(seed)
    a, b = random_normals(rng, 20, 0.0), random_normals(rng, 20, 0.0)
    assert np.allclose(angular_errors(a, b), angular_errors(b, a), rtol=0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_range(seed):
    rng = np.random.default_rng(seed)
    err = angular_errors(random_normals(rng, 30), random_normals(rng, 30, 0.0))
    assert np.all((err >= 0) & (err <= 180))


def test_summarize_zero_ninety():
    r = summarize([0.0, 90.0])
    assert r.mean_deg == 45.0 and r.median_deg == 0.0
    assert r.rmse_deg == pytest.approx(np.sqrt(8100 / 2), abs=1e-9)
    assert r.rmse_deg == pytest.approx(63.6396, abs=1e-4)
    assert r.threshold_acc[5.0] == 0.5
    assert r.n_points == 2


def test_summarize_single_zero():
    r = summarize([0.0])
    assert (r.mean_deg, r.median_deg, r.rmse_deg) == (0.0, 0.0, 0.0)
    assert all(v == 1.0 for v in r.threshold_acc.values())


def test_summarize_constant():
    r = summarize([10.0] * 4)
    assert r.mean_deg == r.median_deg == pytest.approx(10.0)
    assert r.rmse_deg == pytest.approx(10.0)
    assert r.threshold_acc[7.5] == 0.0 and r.threshold_acc[11.25] == 1.0


def test_summarize_default_thresholds():
    assert tuple(summarize([1.0]).threshold_acc) == DEFAULT_THRESHOLDS


def test_threshold_is_strict():
    assert summarize([5.0]).threshold_acc[5.0] == 0.0


def test_summarize_empty():
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_runtime():
    assert summarize([1.0], runtime_s=0.25).runtime_s == 0.25


@given(st.lists(floats_deg, min_size=1, max_size=40), st.randoms())
def test_summarize_permutation_invariant(errors, rnd):
    shuffled = list(errors)
    rnd.shuffle(shuffled)
    a, b = summarize(errors), summarize(shuffled)
    assert a.median_deg == b.median_deg and a.threshold_acc == b.threshold_acc
    assert a.mean_deg == pytest.approx(b.mean_deg, rel=1e-12, abs=1e-12)
    assert a.rmse_deg == pytest.approx(b.rmse_deg, rel=1e-12, abs=1e-12)


@given(st.lists(floats_deg, min_size=1, max_size=40))
def test_summary_invariants(errors):
    r = summarize(errors)
    accs = [r.threshold_acc[t] for t in sorted(r.threshold_acc)]
    assert all(0.0 <= a <= 1.0 for a in accs)
    assert all(b >= a for a, b in zip(accs, accs[1:]))
    assert r.rmse_deg >= 0
    assert r.mean_deg <= max(errors) + 1e-9


def test_report_text_round_trip():
    r = summarize([0.0, 1.5, 90.0, 33.3], runtime_s=0.125)
    back = MetricsReport.from_text(r.to_text())
    assert back == r


GOLDEN = """n_points: 2
mean_deg: 45.0
median_deg: 0.0
rmse_deg: 63.63961030678928
acc@5.0: 0.5
acc@7.5: 0.5
acc@11.25: 0.5
acc@22.5: 0.5
acc@30.0: 0.5
runtime_s: 0.0
"""


def test_report_golden_text():
    assert summarize([0.0, 90.0]).to_text() == GOLDEN


def test_report_missing_key():
    with pytest.raises(ValueError):
        MetricsReport.from_text("mean_deg: 1.0\n")


def test_evaluate_matches_summarize():
    rng = np.random.default_rng(2)
    p, g = random_normals(rng, 40), random_normals(rng, 40, 0.0)
    assert evaluate(p, g) == summarize(angular_errors(p, g))


# --- density ----------------------------------------------------------------

def test_sphere_grid_equal_area_and_unit():
    dirs, area = sphere_grid(1000)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert area * 1000 == pytest.approx(4 * np.pi)
    # Equal area: the z coordinates are uniform, one per slice.
    assert np.allclose(np.sort(dirs[:, 2]), (np.arange(1000) + 0.5) / 500 - 1)


def test_single_normal_mode():
    d = vmf_kde([[0, 0, 1.0]], kappa=200.0, grid_res=4096)
    nearest = d.directions[np.argmax(d.directions @ [0, 0, 1.0])]
    assert np.array_equal(d.argmax_direction(), nearest)


def test_uniform_normals_flat_density():
    n = random_normals(np.random.default_rng(0), 20_000, 0.0)
    d = vmf_kde(n, kappa=5.0, grid_res=4096)
    assert d.density.max() / d.density.min() < 2.0


@pytest.mark.parametrize("kappa", [5.0, 50.0])
def test_density_integrates_to_one(kappa):
    n = random_normals(np.random.default_rng(1), 200, 0.0)
    d = vmf_kde(np.vstack([n, [[0, 0, 1.0], [0, 0, -1.0]]]), kappa=kappa)
    assert d.integral() == pytest.approx(1.0, abs=1e-2)
    assert np.all(d.density >= 0)


def test_large_kappa_does_not_overflow():
    d = vmf_kde([[0, 0, 1.0]], kappa=5000.0, grid_res=1024)
    assert np.all(np.isfinite(d.density))


def test_density_errors():
    with pytest.raises(ValueError):
        vmf_kde(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        vmf_kde([[0, 0, 1.0]], kappa=0.0)


def test_density_csv(tmp_path):
    d = vmf_kde([[0, 0, 1.0]], kappa=10.0, grid_res=64)
    d.to_csv(tmp_path / "d.csv")
    table = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
    assert table.shape == (64, 4)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x,y,z,density"


# --- cross-frame ------------------------------------------------------------

def test_cross_frame_consistent_fields_zero():
    rng = np.random.default_rng(3)
    world = rng.uniform(-2, 2, size=(300, 3))
    normals = random_normals(rng, 300, 0.0)
    pose = Pose(rotation_z(0.8), [1.0, 0, 0])
    fa = Frame(world)
    fb = Frame(pose.inverse().apply(world), pose=pose)
    d = cross_frame_disagreement(fa, normals, fb, pose.inverse().rotate(normals))
    assert d == pytest.approx(0.0, abs=1e-6)


def test_cross_frame_no_pairs():
    fa, fb = Frame(np.zeros((1, 3))), Frame(np.full((1, 3), 10.0))
    with pytest.raises(ValueError):
        cross_frame_disagreement(fa, [[0, 0, 1.0]], fb, [[0, 0, 1.0]])
