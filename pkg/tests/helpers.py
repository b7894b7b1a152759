"""Shared test utilities: finite differences and small random fixtures."""

import numpy as np

from lidar_normals.core import Frame, Pose, random_rotation


def central_fd(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return np.linalg.norm(a - b) / scale


def random_normals(rng, n, jitter=0.3):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (1.0 + jitter * rng.uniform(-1, 1, size=(n, 1)))


def random_pose(rng, scale=1.0):
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def random_pair(rng, n_a, n_b, spread=0.15):
    """Two posed frames sampling the same small world patch."""
    world = rng.uniform(-spread, spread, size=(n_a + n_b, 3))
    pa, pb = random_pose(rng), random_pose(rng)
    fa = Frame(pa.inverse().apply(world[:n_a]), pose=pa, frame_id=0)
    fb = Frame(pb.inverse().apply(world[n_a:]), pose=pb, frame_id=1)
    return fa, fb


# --- gradient-check suite shared by the energy and acceptance tests ---------

def _grad_configs(term, seed):
    """Yield ``(f_value, x, analytic_grad)`` for one random configuration of a term."""
    from lidar_normals.energy import eikonal_energy, l1_data_energy, sgtv_energy, tgtv_energy
    from lidar_normals.graph import alignment_map, build_knn_graph, build_temporal_graph
    from lidar_normals.refine import Objective, RefineConfig

    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 9))
    sigma = float(rng.uniform(0.1, 0.3))
    if term == "l1":
        n = int(rng.integers(2, 51))
        labels = random_normals(rng, n, 0.0)
        w = rng.uniform(0.2, 3.0, size=n)
        x = random_normals(rng, n)
        return (lambda y: l1_data_energy(y, labels, w, gradient=False).value, x,
                l1_data_energy(x, labels, w).gradient)
    if term == "sgtv":
        n = int(rng.integers(2, 51))
        g = build_knn_graph(rng.uniform(-0.15, 0.15, size=(n, 3)), k, sigma)
        x = random_normals(rng, n)
        return lambda y: sgtv_energy(y, g, gradient=False).value, x, sgtv_energy(x, g).gradient
    if term == "eikonal":
        n = int(rng.integers(1, 51))
        x = random_normals(rng, n, jitter=0.8)
        return lambda y: eikonal_energy(y, gradient=False).value, x, eikonal_energy(x).gradient
    na, nb = int(rng.integers(2, 26)), int(rng.integers(2, 26))
    fa, fb = random_pair(rng, na, nb)
    if term == "tgtv":
        g = build_temporal_graph(fa, fb, k=k, sigma=sigma)
        maps = (alignment_map(fa.pose), alignment_map(fb.pose))
        x = np.vstack([random_normals(rng, na), random_normals(rng, nb)])

        def value(y):
            return tgtv_energy(y[:na], y[na:], g, maps, gradient=False).value
        return value, x, tgtv_energy(x[:na], x[na:], g, maps).gradient
    if term == "total":
        cfg = RefineConfig(gamma=float(rng.uniform(0.05, 1.0)), k=k, sigma=sigma)
        obj = Objective([fa, fb], [random_normals(rng, na, 0.0), random_normals(rng, nb, 0.0)], cfg)
        x = np.vstack([random_normals(rng, na), random_normals(rng, nb)])
        return lambda y: obj(y, gradient=False)[0], x, obj(x)[1]
    raise ValueError(term)


GRADIENT_TERMS = ("l1", "sgtv", "tgtv", "eikonal", "total")


def worst_gradient_error(term, n_configs, h=1e-5, base_seed=0):
    """Largest relative error between analytic and central-difference gradients."""
    worst = 0.0
    for c in range(n_configs):
        f, x, grad = _grad_configs(term, base_seed + 1000 * GRADIENT_TERMS.index(term) + c)
        worst = max(worst, rel_error(grad, central_fd(f, x, h)))
    return worst


# Acceptance results keyed by criterion number: (clause, passed, detail).
ACCEPTANCE = {}


def record(criterion: int, clause: str, ok: bool, detail: str = "") -> None:
    """Log one acceptance clause, print its line, and fail the calling test if it did not hold."""
    ok = bool(ok)
    ACCEPTANCE.setdefault(criterion, []).append((clause, ok, detail))
    print(f"criterion {criterion} [{clause}]: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {criterion} [{clause}] failed: {detail}"


def record_all(criterion: int, clauses) -> None:
    """Log several ``(clause, ok, detail)`` results, then fail if any did not hold."""
    failed = []
    for clause, ok, detail in clauses:
        ok = bool(ok)
        ACCEPTANCE.setdefault(criterion, []).append((clause, ok, detail))
        print(f"criterion {criterion} [{clause}]: {'PASS' if ok else 'FAIL'} {detail}")
        if not ok:
            failed.append(f"{clause} ({detail})")
    assert not failed, f"criterion {criterion} failed: {'; '.join(failed)}"
