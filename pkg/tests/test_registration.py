"""Kabsch, FPFH (vs brute-force oracle), RANSAC, and ICP behavior."""

import math

import numpy as np
import pytest

from poselabel import geometry as geo
from poselabel.cloud import PointCloud, estimate_normals
from poselabel.mesh import sample_uniform
from poselabel.registration import (
    DegenerateConfigurationError,
    GlobalRegistrationParams,
    IcpParams,
    MissingNormalsError,
    RansacParams,
    RegistrationResult,
    TooFewPointsError,
    compute_fpfh,
    global_register,
    icp_refine,
    kabsch,
    match_descriptors,
    ransac_register,
)
from poselabel.synthetic import gripper_mesh

from oracles import brute_force_fpfh


def random_pose(rng, max_translation=1.0):
    rot = geo.random_rotation(rng)
    return geo.RigidTransform(rot.rotation, rng.uniform(-max_translation, max_translation, 3))


def unit_normals(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


class TestKabsch:
    def test_identity_on_equal_sets(self, rng):
        pts = rng.uniform(-1, 1, size=(10, 3))
        t = kabsch(pts, pts)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t.translation, np.zeros(3), atol=1e-12)

    def test_exact_recovery_rz90_shift(self, rng):
        src = rng.uniform(-1, 1, size=(12, 3))
        truth = geo.rotation_about_axis((0, 0, 1), math.pi / 2, translation=(1.0, 0.0, 0.0))
        t = kabsch(src, geo.apply(truth, src))
        np.testing.assert_allclose(t.rotation, truth.rotation, atol=1e-12)
        np.testing.assert_allclose(t.translation, truth.translation, atol=1e-12)

    def test_100_random_problems(self, rng):
        for _ in range(100):
            src = rng.uniform(-1, 1, size=(10, 3))
            truth = random_pose(rng)
            t = kabsch(src, geo.apply(truth, src))
            assert geo.rotation_geodesic(t, truth) < 1e-9
            assert np.linalg.norm(t.translation - truth.translation) < 1e-9

    def test_collinear_degenerate(self):
        src = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
        with pytest.raises(DegenerateConfigurationError):
            kabsch(src, src + 1.0)

    def test_reflection_never_returned(self, rng):
        # mirrored targets must still produce det +1
        src = rng.uniform(-1, 1, size=(30, 3))
        dst = src * np.array([-1.0, 1.0, 1.0])
        t = kabsch(src, dst)
        assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)

    def test_residual_invariant_to_global_pretransform(self, rng):
        def residual(s, d):
            t = kabsch(s, d)
            return float(np.linalg.norm(geo.apply(t, s) - d))

        for _ in range(20):
            src = rng.uniform(-1, 1, size=(15, 3))
            dst = geo.apply(random_pose(rng), src) + rng.normal(scale=0.05, size=(15, 3))
            pre = random_pose(rng)
            r1 = residual(src, dst)
            r2 = residual(geo.apply(pre, src), geo.apply(pre, dst))
            assert r1 == pytest.approx(r2, abs=1e-9)


class TestFpfh:
    def test_isolated_point_zero_descriptor(self, rng):
        pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [20.0, 0, 0]])
        cloud = PointCloud(pts, normals=unit_normals(rng, 3))
        desc = compute_fpfh(cloud, radius=0.5)
        np.testing.assert_array_equal(desc, np.zeros((3, 33)))

    def test_missing_normals(self, rng):
        with pytest.raises(MissingNormalsError):
            compute_fpfh(PointCloud(rng.random((5, 3))), radius=0.5)

    def test_plane_interior_descriptors_agree(self):
        xs, ys = np.meshgrid(np.arange(15) * 0.01, np.arange(15) * 0.01)
        pts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
        cloud = PointCloud(pts, normals=np.tile([0.0, 0.0, 1.0], (len(pts), 1)))
        desc = compute_fpfh(cloud, radius=0.035)
        # compare interior points (full neighborhood): identical local geometry
        interior = [
            i
            for i, p in enumerate(pts)
            if 0.04 <= p[0] <= 0.10 and 0.04 <= p[1] <= 0.10
        ]
        base = desc[interior[0]]
        for i in interior[1:]:
            assert np.abs(desc[i] - base).sum() < 1.0

    def test_blocks_sum_to_100_or_zero(self, rng):
        cloud = PointCloud(rng.random((60, 3)) * 0.2, normals=unit_normals(rng, 60))
        desc = compute_fpfh(cloud, radius=0.08)
        for block in desc.reshape(60, 3, 11):
            for row in block:
                total = row.sum()
                assert total == pytest.approx(100.0, abs=1e-6) or total == 0.0

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(5):
            pts = rng.random((40, 3)) * 0.3
            normals = unit_normals(rng, 40)
            cloud = PointCloud(pts, normals=normals)
            ours = compute_fpfh(cloud, radius=0.15)
            expected = brute_force_fpfh(pts, normals, radius=0.15)
            np.testing.assert_allclose(ours, expected, atol=1e-6)

    def test_rotation_invariance(self, rng):
        pts = rng.random((50, 3)) * 0.2
        normals = unit_normals(rng, 50)
        pose = random_pose(rng)
        d1 = compute_fpfh(PointCloud(pts, normals=normals), radius=0.1)
        d2 = compute_fpfh(
            PointCloud(geo.apply(pose, pts), normals=normals @ pose.rotation.T), radius=0.1
        )
        np.testing.assert_allclose(d1, d2, atol=1e-6)


class TestMatchDescriptors:
    def test_exact_match_finds_self(self, rng):
        desc = rng.random((40, 33))
        np.testing.assert_array_equal(match_descriptors(desc, desc), np.arange(40))

    def test_brute_force_equivalence(self, rng):
        src = rng.random((25, 33))
        tgt = rng.random((31, 33))
        got = match_descriptors(src, tgt)
        for i, d in enumerate(src):
            expected = int(np.argmin(np.sum((tgt - d) ** 2, axis=1)))
            assert got[i] == expected


def model_cloud_with_fpfh(n=1200, seed=5, radius=0.025):
    model = sample_uniform(gripper_mesh(symmetric=False), n, seed=seed)
    centroid = model.positions.mean(axis=0)
    model = estimate_normals(model, k=min(30, n - 1), viewpoint=centroid)
    model = model.with_normals(-model.normals)  # outward
    return model, compute_fpfh(model, radius)


class TestRansac:
    def test_self_registration_identity(self):
        model, desc = model_cloud_with_fpfh()
        result = ransac_register(
            model, model, desc, desc, RansacParams(inlier_distance=0.01, seed=3)
        )
        assert result.fitness == 1.0
        assert np.linalg.norm(result.transform.translation) < 0.01
        assert geo.rotation_geodesic(result.transform, geo.identity()) < math.radians(5)

    def test_known_transform_recovery(self, rng):
        model, desc = model_cloud_with_fpfh()
        truth = random_pose(rng, max_translation=0.3)
        target = PointCloud(
            geo.apply(truth, model.positions), normals=model.normals @ truth.rotation.T
        )
        tgt_desc = compute_fpfh(target, 0.025)
        result = ransac_register(
            model, target, desc, tgt_desc, RansacParams(inlier_distance=0.0075, seed=11)
        )
        assert result.fitness > 0.9
        assert np.linalg.norm(result.transform.translation - truth.translation) < 2 * 0.0075
        assert geo.rotation_geodesic(result.transform, truth) < math.radians(5)

    def test_pure_clutter_low_fitness(self, rng):
        model, desc = model_cloud_with_fpfh(n=800)
        clutter = PointCloud(rng.uniform(0.5, 1.0, size=(800, 3)))
        clutter = estimate_normals(clutter, k=20, viewpoint=(0, 0, 0))
        clutter_desc = compute_fpfh(clutter, 0.025)
        result = ransac_register(
            model,
            clutter,
            desc,
            clutter_desc,
            RansacParams(inlier_distance=0.0075, seed=2, max_iterations=3000),
        )
        assert result.fitness < 0.3

    def test_deterministic_with_seed(self):
        model, desc = model_cloud_with_fpfh(n=600)
        p = RansacParams(inlier_distance=0.0075, seed=123)
        a = ransac_register(model, model, desc, desc, p)
        b = ransac_register(model, model, desc, desc, p)
        np.testing.assert_array_equal(a.transform.rotation, b.transform.rotation)
        np.testing.assert_array_equal(a.transform.translation, b.transform.translation)
        assert a.fitness == b.fitness and a.inlier_rmse == b.inlier_rmse
        assert a.iterations == b.iterations

    def test_too_few_points(self, rng):
        tiny = PointCloud(rng.random((2, 3)))
        with pytest.raises(TooFewPointsError):
            ransac_register(tiny, tiny, np.zeros((2, 33)), np.zeros((2, 33)),
                            RansacParams(inlier_distance=0.01))


class TestIcp:
    def make_pair(self, rng, n=2000):
        model = sample_uniform(gripper_mesh(symmetric=False), n, seed=8)
        truth = random_pose(rng, max_translation=0.2)
        target = PointCloud(geo.apply(truth, model.positions))
        target = estimate_normals(target, k=30, viewpoint=target.positions.mean(axis=0))
        target = target.with_normals(-target.normals)
        return model, target, truth

    def test_fixed_point_at_ground_truth(self, rng):
        model, target, truth = self.make_pair(rng)
        result = icp_refine(model, target, truth, IcpParams(max_correspondence_distance=0.0125))
        assert geo.rotation_geodesic(result.transform, truth) < 1e-10
        assert np.linalg.norm(result.transform.translation - truth.translation) < 1e-10
        assert result.inlier_rmse < 1e-10
        assert result.converged

    def test_converges_from_small_perturbation(self, rng):
        for variant in ("point_to_plane", "point_to_point"):
            model, target, truth = self.make_pair(rng, n=5000)
            nudge = geo.compose(
                geo.rotation_about_axis(rng.normal(size=3), math.radians(5.0)),
                geo.RigidTransform(np.eye(3), rng.normal(size=3) * 0.01 / math.sqrt(3)),
            )
            init = geo.compose(truth, nudge)
            result = icp_refine(
                model, target, init,
                IcpParams(max_correspondence_distance=0.0125, variant=variant),
            )
            assert np.linalg.norm(result.transform.translation - truth.translation) < 1e-4
            assert geo.rotation_geodesic(result.transform, truth) < math.radians(0.1)

    def test_bad_init_flagged(self, rng):
        model, target, truth = self.make_pair(rng, n=1500)
        flipped = geo.compose(truth, geo.rotation_about_axis((1, 0, 0), math.pi))
        result = icp_refine(
            model, target, flipped, IcpParams(max_correspondence_distance=0.004, max_iterations=15)
        )
        assert result.fitness < 0.9

    def test_no_correspondences_gives_flagged_zero(self, rng):
        model = PointCloud(rng.random((50, 3)) * 0.01)
        target = PointCloud(rng.random((50, 3)) * 0.01 + 10.0)
        result = icp_refine(
            model, target, geo.identity(), IcpParams(max_correspondence_distance=0.05)
        )
        assert result.fitness == 0.0
        assert result.inlier_rmse == 0.0
        assert not result.converged

    def test_monotone_descent_over_correspondence_set(self, rng):
        # every accepted step must not increase the step metric on its own set
        for _ in range(5):
            model, target, truth = self.make_pair(rng, n=1200)
            nudge = geo.compose(
                geo.rotation_about_axis(rng.normal(size=3), math.radians(8.0)),
                geo.RigidTransform(np.eye(3), rng.normal(size=3) * 0.01),
            )
            result = icp_refine(
                model, target, geo.compose(truth, nudge),
                IcpParams(max_correspondence_distance=0.02),
            )
            assert result.history  # at least one iteration recorded
            for before, after in result.history[: result.iterations]:
                assert after <= before + 1e-15

    def test_missing_normals_for_point_to_plane(self, rng):
        cloud = PointCloud(rng.random((30, 3)))
        with pytest.raises(MissingNormalsError):
            icp_refine(
                cloud, cloud, geo.identity(),
                IcpParams(max_correspondence_distance=0.1, variant="point_to_plane"),
            )


class TestGlobalRegister:
    def test_refinement_does_not_degrade_fitness(self, rng):
        # statistical: over 50 noisy in-distribution trials, ICP fitness may
        # fall below the RANSAC fitness at most twice
        model = sample_uniform(gripper_mesh(symmetric=False), 900, seed=21)
        violations = 0
        for k in range(50):
            truth = random_pose(rng, max_translation=0.2)
            noisy = geo.apply(truth, model.positions) + rng.normal(scale=0.001, size=(900, 3))
            target = PointCloud(noisy)
            params = GlobalRegistrationParams(
                voxel=0.005,
                ransac=RansacParams(inlier_distance=0.0075, seed=k),
                icp=IcpParams(max_correspondence_distance=0.0125),
            )
            refined, coarse = global_register(model, target, params)
            if refined.fitness < coarse.fitness:
                violations += 1
        assert violations <= 2

    def test_result_serialization_fields(self):
        r = RegistrationResult(geo.identity(), 0.5, 0.001, 7)
        d = r.to_json_dict()
        assert sorted(d) == ["fitness", "inlier_rmse", "iterations", "q", "t"]
        assert d["q"] == [1.0, 0.0, 0.0, 0.0]
