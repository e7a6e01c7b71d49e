"""Camera model tests: hand cases, round-trip oracles, Monte-Carlo checks."""

import numpy as np
import pytest

from epimisr.errors import ConfigError, GeometryError
from epimisr.geometry import (
    Camera,
    Intrinsics,
    PerturbationSpec,
    Pose,
    backproject_pixel_ray,
    decompose_projection_matrix,
    perturb_pose,
    project_point,
    project_points,
    rotation_from_axis_angle,
    select_median_distance_views,
    select_nearest_views,
    view_angle,
)


def _unit_cam():
    return Camera(
        Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2),
        Pose(R=np.eye(3), t=np.zeros(3)),
    )


def _random_camera(rng, width=64, height=48):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = rotation_from_axis_angle(axis, rng.uniform(0, np.pi))
    t = rng.normal(size=3)
    intr = Intrinsics(
        fx=rng.uniform(20, 200),
        fy=rng.uniform(20, 200),
        cx=rng.uniform(-5, 60),
        cy=rng.uniform(-5, 40),
        width=width,
        height=height,
        skew=rng.uniform(-2, 2),
    )
    return Camera(intr, Pose(R=R, t=t))


# ---------------------------------------------------------------- projection


def test_project_optical_axis():
    u, v, z = project_point(_unit_cam(), [0.0, 0.0, 1.0])
    assert (u, v, z) == (0.0, 0.0, 1.0)


def test_project_similar_triangles():
    u, v, z = project_point(_unit_cam(), [1.0, 0.0, 2.0])
    assert (u, v, z) == (0.5, 0.0, 2.0)


def test_project_at_camera_plane_error():
    with pytest.raises(GeometryError):
        project_point(_unit_cam(), [1.0, 1.0, 0.0])


def test_project_backproject_roundtrip(rng):
    for _ in range(50):
        cam = _random_camera(rng)
        X = rng.normal(size=3) * 3.0
        try:
            u, v, z = project_point(cam, X)
        except GeometryError:
            continue
        ray = backproject_pixel_ray(cam, u, v)
        # X must sit on the ray at camera depth z
        np.testing.assert_allclose(ray.origin + z * ray.depth_dir, X, rtol=0, atol=1e-9)


def test_depth_parameterization(rng):
    cam = _random_camera(rng)
    ray = backproject_pixel_ray(cam, 10.3, 7.9)
    u, v, z = project_point(cam, ray.origin + 3.7 * ray.depth_dir)
    assert abs(u - 10.3) < 1e-9 and abs(v - 7.9) < 1e-9
    assert abs(z - 3.7) < 1e-9


def test_principal_ray():
    cam = Camera(
        Intrinsics(fx=50.0, fy=60.0, cx=31.5, cy=23.5, width=64, height=48),
        Pose(R=np.eye(3), t=np.zeros(3)),
    )
    ray = backproject_pixel_ray(cam, 31.5, 23.5)
    np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)


def test_translated_camera_origin():
    t = np.array([1.0, -2.0, 3.0])
    cam = Camera(_unit_cam().intrinsics, Pose(R=np.eye(3), t=t))
    ray = backproject_pixel_ray(cam, 0.3, 0.4)
    np.testing.assert_allclose(ray.origin, -t, atol=1e-12)


def test_project_points_vectorized(rng):
    cam = _random_camera(rng)
    X = rng.normal(size=(40, 3)) * 2.0
    us, vs, zs = project_points(cam, X)
    for i in range(40):
        if abs(zs[i]) < 1e-12:
            continue
        u, v, z = project_point(cam, X[i])
        assert abs(us[i] - u) < 1e-10 and abs(vs[i] - v) < 1e-10 and abs(zs[i] - z) < 1e-12


# ---------------------------------------------------------------- decomposition


def test_decompose_canonical():
    cam = decompose_projection_matrix(np.hstack([np.eye(3), np.zeros((3, 1))]))
    np.testing.assert_allclose(cam.intrinsics.matrix(), np.eye(3), atol=1e-12)
    np.testing.assert_allclose(cam.pose.R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(cam.pose.t, np.zeros(3), atol=1e-12)


def test_decompose_compose_roundtrip(rng):
    for _ in range(200):
        cam = _random_camera(rng)
        P = cam.projection_matrix()
        rec = decompose_projection_matrix(P, width=64, height=48)
        np.testing.assert_allclose(rec.intrinsics.matrix(), cam.intrinsics.matrix(), atol=1e-9)
        np.testing.assert_allclose(rec.pose.R, cam.pose.R, atol=1e-10)
        np.testing.assert_allclose(rec.pose.t, cam.pose.t, atol=1e-9)
        # compose o decompose reproduces P up to scale
        P2 = rec.projection_matrix()
        np.testing.assert_allclose(P2 / np.linalg.norm(P2), P / np.linalg.norm(P), atol=1e-10)


def test_decompose_scale_invariance(rng):
    cam = _random_camera(rng)
    P = cam.projection_matrix()
    a = decompose_projection_matrix(-2.5 * P)
    np.testing.assert_allclose(a.pose.R, cam.pose.R, atol=1e-10)
    np.testing.assert_allclose(a.pose.t, cam.pose.t, atol=1e-9)


def test_decompose_front_convention(rng):
    # points in front of the source camera keep z_cam > 0 after round trip
    cam = _random_camera(rng)
    rec = decompose_projection_matrix(-cam.projection_matrix())
    ray = backproject_pixel_ray(cam, 5.0, 5.0)
    X = ray.origin + 2.0 * ray.depth_dir
    _, _, z = project_point(rec, X)
    assert z > 0


def test_decompose_singular():
    P = np.zeros((3, 4))
    P[0, 0] = 1.0
    with pytest.raises(GeometryError):
        decompose_projection_matrix(P)


# ---------------------------------------------------------------- rotation, perturbation


def test_rotation_zero_angle():
    np.testing.assert_allclose(rotation_from_axis_angle([0, 0, 1.0], 0.0), np.eye(3), atol=1e-15)


def test_rotation_textbook_z():
    R = rotation_from_axis_angle([0, 0, 1.0], np.pi / 2)
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


def test_rotation_axis_eigenvector(rng):
    for _ in range(20):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        R = rotation_from_axis_angle(axis, rng.uniform(-np.pi, np.pi))
        np.testing.assert_allclose(R @ axis, axis, atol=1e-12)


def test_rotation_non_unit_axis():
    with pytest.raises(GeometryError):
        rotation_from_axis_angle([1.0, 1.0, 0.0], 0.5)


def test_perturb_zero_sigma_identity(rng):
    pose = Pose(R=rotation_from_axis_angle([0, 1.0, 0], 0.3), t=np.array([1.0, 2.0, 3.0]))
    out = perturb_pose(pose, PerturbationSpec(0.0, 0.0), rng)
    np.testing.assert_array_equal(out.R, pose.R)
    np.testing.assert_array_equal(out.t, pose.t)


def test_perturb_invariants_hold(rng):
    pose = Pose(R=np.eye(3), t=np.zeros(3))
    spec = PerturbationSpec(sigma_translation=0.5, sigma_rotation=0.4)
    for _ in range(10_000):
        out = perturb_pose(pose, spec, rng)
        assert np.abs(out.R.T @ out.R - np.eye(3)).max() < 1e-10
        assert abs(np.linalg.det(out.R) - 1.0) < 1e-10


def test_perturb_mean_geodesic_angle(rng):
    # angle ~ sigma * |N(0,1)|, so the mean is sigma * sqrt(2/pi) = 0.0798
    pose = Pose(R=np.eye(3), t=np.zeros(3))
    spec = PerturbationSpec(sigma_translation=0.0, sigma_rotation=0.1)
    n = 100_000
    angles = np.empty(n)
    for i in range(n):
        out = perturb_pose(pose, spec, rng)
        c = (np.trace(out.R) - 1.0) / 2.0
        angles[i] = np.arccos(np.clip(c, -1.0, 1.0))
    expect = 0.1 * np.sqrt(2.0 / np.pi)
    assert abs(angles.mean() - expect) / expect < 0.05


# ---------------------------------------------------------------- view selection


def _cam_at(x, y=0.0, z=0.0):
    return Camera(
        Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2),
        Pose(R=np.eye(3), t=-np.array([x, y, z], dtype=np.float64)),
    )


def test_view_angle_identical():
    cam = _cam_at(0.0)
    assert view_angle(cam, cam, [0.0, 0.0, 5.0]) == 0.0


def test_view_angle_right_angle():
    a, b = _cam_at(1.0), _cam_at(-1.0)
    assert view_angle(a, b, [0.0, 0.0, 1.0]) == pytest.approx(90.0, abs=1e-9)


def test_view_angle_coincident_error():
    cam = _cam_at(1.0)
    with pytest.raises(GeometryError):
        view_angle(cam, _cam_at(0.0), [1.0, 0.0, 0.0])


def test_nearest_line_case():
    target = _cam_at(0.0)
    cands = [_cam_at(3.0), _cam_at(1.0), _cam_at(2.0)]
    assert select_nearest_views(target, cands, 2) == [1, 2]


def test_nearest_all_sorted():
    target = _cam_at(0.0)
    cands = [_cam_at(3.0), _cam_at(1.0), _cam_at(2.0)]
    assert select_nearest_views(target, cands, 3) == [1, 2, 0]


def test_nearest_tie_break_by_index():
    target = _cam_at(0.0)
    cands = [_cam_at(0.0, 1.0), _cam_at(1.0, 0.0), _cam_at(0.5)]
    assert select_nearest_views(target, cands, 2) == [2, 0]


def test_nearest_too_many():
    with pytest.raises(ConfigError):
        select_nearest_views(_cam_at(0.0), [_cam_at(1.0)], 2)


def test_nearest_matches_bruteforce(rng):
    target = _cam_at(0.0)
    xs = rng.normal(size=(49, 3))
    cands = [_cam_at(*x) for x in xs]
    got = select_nearest_views(target, cands, 7)
    d = [np.linalg.norm(c.center() - target.center()) for c in cands]
    ref = sorted(range(49), key=lambda i: (d[i], i))[:7]
    assert got == ref


def test_nearest_permutation_invariant(rng):
    target = _cam_at(0.0)
    xs = rng.normal(size=(12, 3))
    cands = [_cam_at(*x) for x in xs]
    base = set(select_nearest_views(target, cands, 4))
    perm = rng.permutation(12)
    expected = {j for j in range(12) if int(perm[j]) in base}
    got = set(select_nearest_views(target, [cands[int(i)] for i in perm], 4))
    assert got == expected


def test_median_single():
    target = _cam_at(0.0)
    cands = [_cam_at(1.0), _cam_at(2.0), _cam_at(3.0)]
    assert select_median_distance_views(target, cands, 1) == [1]


def test_median_five():
    target = _cam_at(0.0)
    cands = [_cam_at(float(x)) for x in (1, 2, 3, 4, 5)]
    assert select_median_distance_views(target, cands, 1) == [2]


def test_median_matches_bruteforce(rng):
    target = _cam_at(0.0)
    xs = rng.normal(size=(21, 3))
    cands = [_cam_at(*x) for x in xs]
    d = np.array([np.linalg.norm(c.center() - target.center()) for c in cands])
    med = np.median(d)
    ref = sorted(range(21), key=lambda i: (abs(d[i] - med), i))[:5]
    assert select_median_distance_views(target, cands, 5) == ref


# ---------------------------------------------------------------- ring geometry


def test_ring_neighbor_angles():
    # cameras on a radius-r ring looking at the origin: neighbors separated
    # by the ring step angle as seen from the center
    r, n = 4.0, 12
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        c = np.array([r * np.cos(a), r * np.sin(a), 0.0])
        # orientation irrelevant for view_angle; use identity-R camera at c
        cams.append(
            Camera(
                Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2),
                Pose(R=np.eye(3), t=-c),
            )
        )
    for k in range(n):
        ang = view_angle(cams[k], cams[(k + 1) % n], [0.0, 0.0, 0.0])
        assert ang == pytest.approx(360.0 / n, abs=1e-9)


def test_intrinsics_scaled_grid():
    intr = Intrinsics(fx=10.0, fy=12.0, cx=3.5, cy=2.5, width=8, height=6)
    up = intr.scaled(2)
    assert up.fx == 20.0 and up.fy == 24.0
    assert up.cx == 7.5 and up.cy == 5.5
    assert (up.width, up.height) == (16, 12)


def test_pose_rejects_non_rotation():
    with pytest.raises(GeometryError):
        Pose(R=np.eye(3) * 2.0, t=np.zeros(3))
    with pytest.raises(GeometryError):
        Pose(R=np.diag([1.0, 1.0, -1.0]), t=np.zeros(3))
