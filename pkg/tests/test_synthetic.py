"""Renderer, demo generation, membership labels, and pose-error metrics."""

import math

import numpy as np
import pytest

from poselabel import geometry as geo
from poselabel.cloud import merge
from poselabel.mesh import TriangleMesh, sample_uniform
from poselabel.segmentation import ColorFilter, color_mask
from poselabel.synthetic import (
    GRIPPER_GREEN,
    PoseError,
    ScenarioConfig,
    ScenarioError,
    box_mesh,
    generate_synthetic_demo,
    gripper_mesh,
    lookat_camera,
    orbit_trajectory,
    pose_error,
    render_depth_image,
    render_point_splats,
    ring_cameras,
)
from poselabel.tracking import SymmetryGroup

from oracles import point_mesh_distance


def facing_square(z=2.0, half=0.5) -> TriangleMesh:
    v = np.array(
        [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]]
    )
    return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def simple_cam(fx=100.0, w=100, h=100, extrinsic=None):
    return geo.CameraModel(
        fx, fx, (w - 1) / 2.0, (h - 1) / 2.0, w, h, extrinsic or geo.identity()
    )


class TestRenderDepthImage:
    def test_mesh_behind_camera_all_missing(self):
        img = render_depth_image(facing_square(z=-2.0), geo.identity(), simple_cam())
        assert not img.valid_mask().any()

    def test_facing_square_depth_and_silhouette(self):
        cam = simple_cam()
        img = render_depth_image(facing_square(), geo.identity(), cam, seed=1)
        valid = img.valid_mask()
        assert valid.any()
        # all covered depths are exactly the plane depth (no noise requested)
        np.testing.assert_allclose(img.depth[valid], 2.0, atol=1e-12)
        # analytic silhouette: u = fx*x/z + cx for x=+-0.5 -> [24.5, 74.5]
        vs, us = np.nonzero(valid)
        assert us.min() >= 24 and us.max() <= 75
        assert vs.min() >= 24 and vs.max() <= 75
        # interior fully covered at 20 splats per pixel
        assert valid[30:70, 30:70].all()

    def test_noise_and_dropout_applied(self):
        cam = simple_cam()
        img = render_depth_image(
            facing_square(), geo.identity(), cam, depth_noise_sigma=0.005, dropout=0.3, seed=2
        )
        valid = img.valid_mask()
        frac = valid[30:70, 30:70].mean()
        assert 0.6 <= frac <= 0.8  # ~30% dropped
        spread = img.depth[valid].std()
        assert 0.003 < spread < 0.008

    def test_facing_square_backprojects_onto_plane_exactly(self):
        # camera-facing plane: stored depth equals the plane depth, so the
        # backprojected points lie on the surface to machine precision
        cam = simple_cam()
        img = render_depth_image(facing_square(), geo.identity(), cam, seed=3)
        cloud = geo.backproject_frame(cam, img)
        mesh = facing_square()
        for p in cloud.positions[::37]:
            assert point_mesh_distance(p, mesh.vertices, mesh.triangles) < 1e-9

    def test_gripper_backprojects_within_pixel_footprint(self, rng):
        cam = lookat_camera((0.4, 0.1, 0.3), (0, 0, 0.06), fx=280.0, width=160, height=120)
        pose = geo.rotation_about_axis((0, 1, 0), 0.4, translation=(0.0, 0.0, 0.02))
        mesh = gripper_mesh()
        img = render_depth_image(mesh, pose, cam, seed=4)
        cloud = geo.backproject_frame(cam, img)
        assert len(cloud) > 200
        world_to_model = geo.invert(pose)
        depths = img.depth[img.valid_mask()]
        footprint = float(depths.max()) * math.sqrt(2.0) / cam.fx
        for i in range(0, len(cloud), 23):
            p = geo.apply(world_to_model, cloud.positions[i])
            assert point_mesh_distance(p, mesh.vertices, mesh.triangles) <= footprint


class TestRenderPointSplats:
    def test_known_cloud_round_trip_exact(self, rng):
        # points constructed on pixel-center rays: the render stores their
        # exact depth, so backprojection recovers them within 1e-6
        cam = simple_cam(fx=150.0, w=64, h=64, extrinsic=geo.RigidTransform(
            geo.rotation_about_axis((0, 1, 0), 0.3).rotation, np.array([0.1, -0.2, 0.05])))
        us = rng.integers(0, 64, size=300)
        vs = rng.integers(0, 64, size=300)
        ds = rng.uniform(0.5, 3.0, size=300)
        pts = np.array([
            geo.backproject_pixel(cam, float(u), float(v), float(d))
            for u, v, d in zip(us, vs, ds)
        ])
        img, winner = render_point_splats(cam, pts, np.tile([0.0, 1.0, 0.0], (300, 1)))
        cloud = geo.backproject_frame(cam, img)
        registry = pts[winner[winner >= 0]]
        # row-major winner order matches backproject_frame's point order
        assert len(cloud) == len(registry)
        np.testing.assert_allclose(cloud.positions, registry, atol=1e-6)

    def test_nearest_depth_wins(self):
        cam = simple_cam()
        p_near = geo.backproject_pixel(cam, 50, 50, 1.0)
        p_far = geo.backproject_pixel(cam, 50, 50, 2.0)
        img, winner = render_point_splats(
            cam, np.array([p_far, p_near]), np.array([[1.0, 0, 0], [0, 1.0, 0]])
        )
        assert img.depth[50, 50] == pytest.approx(1.0)
        assert winner[50, 50] == 1
        np.testing.assert_allclose(img.color[50, 50], [0, 1, 0])

    def test_empty_points(self):
        img, winner = render_point_splats(simple_cam(), np.zeros((0, 3)), np.zeros((0, 3)))
        assert not img.valid_mask().any()
        assert (winner == -1).all()


def small_scenario(frames=2, clutter=3000, **kw):
    cams = ring_cameras(2, radius=0.5, height=0.35, fx=200.0, width=160, image_height=120)
    defaults = dict(
        trajectory=orbit_trajectory(frames, radius=0.04),
        cameras=cams,
        clutter_points=clutter,
        seed=5,
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)


class TestGenerateSyntheticDemo:
    def test_noiseless_green_subset_on_mesh(self):
        mesh = gripper_mesh()
        config = small_scenario(frames=1, clutter=0)
        demo, truth, members = generate_synthetic_demo(mesh, config)
        assert len(demo) == 1 and len(demo.frames[0]) == 2
        clouds = [
            geo.backproject_frame(cam, img)
            for cam, img in zip(demo.cameras, demo.frames[0])
        ]
        merged = merge(clouds)
        green = merged.select(np.flatnonzero(color_mask(merged.colors, ColorFilter())))
        assert len(green) == len(merged)  # no clutter: everything is gripper
        world_to_model = geo.invert(truth[0])
        footprint = 0.7 * math.sqrt(2.0) / 200.0  # max depth ~0.7m at fx=200
        for i in range(0, len(green), 41):
            p = geo.apply(world_to_model, green.positions[i])
            assert point_mesh_distance(p, mesh.vertices, mesh.triangles) <= footprint

    def test_membership_partitions_pixels(self):
        demo, truth, members = generate_synthetic_demo(gripper_mesh(), small_scenario())
        for views, imgs in zip(members, demo.frames):
            for member, img in zip(views, imgs):
                valid = img.valid_mask()
                assert ((member >= 0) == valid).all()
                assert set(np.unique(member)).issubset({-1, 0, 1})

    def test_clutter_present_and_labeled(self):
        demo, truth, members = generate_synthetic_demo(gripper_mesh(), small_scenario())
        gripper_px = sum(int((m == 0).sum()) for m in members[0])
        clutter_px = sum(int((m == 1).sum()) for m in members[0])
        assert gripper_px > 500
        assert clutter_px > 500

    def test_green_speck_points_are_clutter(self):
        config = small_scenario(clutter=2000, green_speck=True)
        demo, truth, members = generate_synthetic_demo(gripper_mesh(), config)
        img = demo.frames[0][0]
        member = members[0][0]
        green = color_mask(img.color.reshape(-1, 3), ColorFilter()).reshape(member.shape)
        speck_pixels = green & (member == 1)
        assert speck_pixels.any()  # speck visible yet labeled clutter

    def test_seed_determinism(self):
        mesh = gripper_mesh()
        config = small_scenario(depth_noise_sigma=0.002, color_noise_sigma=0.01, dropout=0.05)
        a, _, am = generate_synthetic_demo(mesh, config)
        b, _, bm = generate_synthetic_demo(mesh, config)
        for fa, fb in zip(a.frames, b.frames):
            for va, vb in zip(fa, fb):
                np.testing.assert_array_equal(va.depth, vb.depth)
                np.testing.assert_array_equal(va.color, vb.color)
        for ma, mb in zip(am, bm):
            for xa, xb in zip(ma, mb):
                np.testing.assert_array_equal(xa, xb)

    def test_dropout_fraction_roughly_respected(self):
        base = generate_synthetic_demo(gripper_mesh(), small_scenario(frames=1))[0]
        dropped = generate_synthetic_demo(
            gripper_mesh(), small_scenario(frames=1, dropout=0.4)
        )[0]
        n_base = int(base.frames[0][0].valid_mask().sum())
        n_drop = int(dropped.frames[0][0].valid_mask().sum())
        assert 0.5 <= n_drop / n_base <= 0.7


class TestScenarioValidation:
    def test_negative_sigma_rejected(self):
        with pytest.raises(ScenarioError, match="depth_noise_sigma"):
            small_scenario(depth_noise_sigma=-1.0)

    def test_dropout_bounds(self):
        with pytest.raises(ScenarioError, match="dropout"):
            small_scenario(dropout=1.0)

    def test_empty_trajectory(self):
        with pytest.raises(ScenarioError, match="trajectory"):
            small_scenario(trajectory=[])


class TestPoseError:
    def test_exact_match(self, rng):
        t = geo.random_rotation(rng)
        err = pose_error(t, t)
        assert err.translation == 0.0
        assert err.rotation < 1e-12

    def test_symmetry_aware_rotation(self, rng):
        truth = geo.random_rotation(rng)
        est = geo.compose(truth, geo.rotation_about_axis((0, 0, 1), math.pi))
        group = SymmetryGroup.rotational((0, 0, 1), 2)
        assert pose_error(est, truth, group).rotation < 1e-7
        assert pose_error(est, truth).rotation == pytest.approx(math.pi, abs=1e-6)

    def test_pythagorean_translation(self):
        a = geo.identity()
        b = geo.RigidTransform(np.eye(3), [0.003, 0.004, 0.0])
        assert pose_error(b, a).translation == pytest.approx(0.005)


class TestTrajectoriesAndCameras:
    def test_orbit_motion_bounds(self):
        traj = orbit_trajectory(50, radius=0.06, angle_step_deg=4.0, rot_step_deg=2.0)
        for a, b in zip(traj, traj[1:]):
            assert np.linalg.norm(a.translation - b.translation) <= 0.01
            assert geo.rotation_geodesic(a, b) <= math.radians(2.0) + 1e-9

    def test_lookat_points_camera_at_target(self):
        cam = lookat_camera((0.5, 0.2, 0.4), (0, 0, 0.05), fx=280.0, width=320, height=240)
        u, v, z = geo.project_points(cam, np.array([[0.0, 0.0, 0.05]]))
        assert z[0] > 0
        assert u[0] == pytest.approx(cam.cx, abs=1e-9)
        assert v[0] == pytest.approx(cam.cy, abs=1e-9)

    def test_ring_cameras_see_workspace(self):
        for cam in ring_cameras(3, radius=0.55, height=0.35):
            u, v, z = geo.project_points(cam, np.array([[0.05, -0.05, 0.1]]))
            assert z[0] > 0
            assert 0 <= u[0] < cam.width
            assert 0 <= v[0] < cam.height

    def test_box_mesh_area(self):
        mesh = box_mesh((0, 0, 0), (2.0, 3.0, 4.0))
        from poselabel.mesh import triangle_areas

        assert triangle_areas(mesh).sum() == pytest.approx(2 * (6 + 8 + 12))
