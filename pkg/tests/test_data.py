import json
import math

import numpy as np
import pytest
import torch

from scenegrid.data import (
    DatasetFormatError,
    RgbdFrame,
    ToyScene,
    generate_dataset,
    generate_toy_scene,
    random_walk_trajectory,
    raycast_ground_truth,
    raycast_rays,
    read_dataset,
    sample_subsequence,
    write_dataset,
)
from scenegrid.geometry import CameraPose, Intrinsics, relative_pose, upright_pose

INTR = Intrinsics(fx=8.0, fy=8.0, cx=8.5, cy=8.5, width=17, height=17,
                  near=0.1, far=12.0)


def empty_room(n=8, extent=4.0, height=2.5) -> ToyScene:
    occ = np.zeros((n, n), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    colors = np.zeros((n, n, 3))
    colors[occ] = np.array([0.5, 0.25, 0.75])
    return ToyScene(occupancy=occ, wall_colors=colors,
                    floor_color=np.array([0.1, 0.2, 0.3]),
                    ceiling_color=np.array([0.9, 0.8, 0.7]),
                    extent=extent, ceiling_height=height, seed=0)


# ----------------------------------------------------------------------------
# Scene generation


def test_toy_scene_deterministic():
    a = generate_toy_scene(42)
    b = generate_toy_scene(42)
    np.testing.assert_array_equal(a.occupancy, b.occupancy)
    np.testing.assert_array_equal(a.wall_colors, b.wall_colors)
    np.testing.assert_array_equal(a.floor_color, b.floor_color)


def test_toy_scene_boundary_walled():
    for seed in range(20):
        s = generate_toy_scene(seed)
        assert s.occupancy[0, :].all() and s.occupancy[-1, :].all()
        assert s.occupancy[:, 0].all() and s.occupancy[:, -1].all()


def test_toy_scene_seed_diversity():
    layouts = {generate_toy_scene(seed).occupancy.tobytes() for seed in range(100)}
    assert len(layouts) >= 90


def test_toy_scene_has_free_region():
    for seed in range(10):
        s = generate_toy_scene(seed)
        assert len(s.free_cells()) > 0


# ----------------------------------------------------------------------------
# Raycasting


def test_raycast_center_pixel_exact_depth():
    scene = empty_room()
    # facing -z; nearest wall face of the z-boundary row is at z = -3
    pose = upright_pose(np.array([0.5, 1.2, -2.0]), yaw=0.0)
    frame = raycast_ground_truth(scene, pose, INTR)
    assert frame.depth[8, 8] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(frame.rgb[:, 8, 8], [0.5, 0.25, 0.75], atol=1e-12)


def test_raycast_fronto_parallel_wall_symmetry():
    scene = empty_room()
    pose = upright_pose(np.array([0.5, 1.25, -1.0]), yaw=0.0)
    frame = raycast_ground_truth(scene, pose, INTR)
    # symmetric about the principal point along the central row and column
    row = frame.depth[8, :]
    col = frame.depth[:, 8]
    np.testing.assert_allclose(row, row[::-1], atol=1e-9)
    np.testing.assert_allclose(col, col[::-1], atol=1e-9)


def test_raycast_rejects_pose_in_wall():
    scene = empty_room()
    with pytest.raises(ValueError):
        raycast_ground_truth(scene, upright_pose(np.array([-3.7, 1.0, 0.0]), 0.0), INTR)
    with pytest.raises(ValueError):  # above the ceiling
        raycast_ground_truth(scene, upright_pose(np.array([0.0, 3.5, 0.0]), 0.0), INTR)


def march_oracle(scene, origin, direction, dt=2.5e-4, t_max=14.0):
    """Brute-force fine-step first-hit finder."""
    t = np.arange(dt, t_max, dt)
    p = origin[None, :] + t[:, None] * direction[None, :]
    n = scene.n_cells
    w = scene.cell_size
    iz = np.floor((p[:, 2] + scene.extent) / w).astype(int)
    ix = np.floor((p[:, 0] + scene.extent) / w).astype(int)
    inside = (iz >= 0) & (iz < n) & (ix >= 0) & (ix < n)
    wall = np.zeros(len(t), dtype=bool)
    wall[inside] = scene.occupancy[iz[inside], ix[inside]]
    vert = (p[:, 1] <= 0) | (p[:, 1] >= scene.ceiling_height)
    hits = np.nonzero(wall | vert | ~inside)[0]
    return t[hits[0]] if len(hits) else np.inf


def test_raycast_matches_marching_oracle():
    rng = np.random.default_rng(1)
    scene = generate_toy_scene(7)
    free = scene.free_cells()
    w = scene.cell_size
    checked = 0
    for trial in range(6):
        i, j = free[rng.integers(len(free))]
        pos = np.array([-scene.extent + (j + 0.5) * w, rng.uniform(0.5, 2.0),
                        -scene.extent + (i + 0.5) * w])
        pose = upright_pose(pos, rng.uniform(0, 2 * math.pi))
        frame = raycast_ground_truth(scene, pose, INTR, res_w=5, res_h=5)
        from scenegrid.geometry import generate_rays
        rays = generate_rays(pose, INTR, 5, 5, dtype=torch.float64)
        for v in range(0, 5, 2):
            for u in range(0, 5, 2):
                t_oracle = march_oracle(scene, pos, rays.directions[v, u].numpy())
                assert abs(frame.depth[v, u] - t_oracle) < 1e-3
                checked += 1
    assert checked >= 50


def test_raycast_first_hit_is_minimal():
    # no free point along the ray before the reported depth lies in a wall
    scene = generate_toy_scene(3)
    free = scene.free_cells()
    w = scene.cell_size
    i, j = free[0]
    pos = np.array([-scene.extent + (j + 0.5) * w, 1.0, -scene.extent + (i + 0.5) * w])
    pose = upright_pose(pos, 0.7)
    frame = raycast_ground_truth(scene, pose, INTR, res_w=3, res_h=3)
    from scenegrid.geometry import generate_rays
    rays = generate_rays(pose, INTR, 3, 3, dtype=torch.float64)
    for v in range(3):
        for u in range(3):
            d = rays.directions[v, u].numpy()
            t = np.linspace(1e-3, frame.depth[v, u] - 1e-3, 200)
            p = pos[None, :] + t[:, None] * d[None, :]
            inside_room = (p[:, 1] > 0) & (p[:, 1] < scene.ceiling_height)
            iz = np.floor((p[:, 2] + scene.extent) / w).astype(int)
            ix = np.floor((p[:, 0] + scene.extent) / w).astype(int)
            ok = (iz >= 0) & (iz < scene.n_cells) & (ix >= 0) & (ix < scene.n_cells)
            assert ok.all()
            assert inside_room.all()
            assert not scene.occupancy[iz, ix].any()


# ----------------------------------------------------------------------------
# Random walks


def test_random_walk_poses_in_free_space():
    scene = generate_toy_scene(11)
    poses = random_walk_trajectory(scene, 50, seed=2)
    assert len(poses) == 50
    for p in poses:
        assert scene.is_free(p.position())


def test_random_walk_step_and_turn_bounds():
    scene = generate_toy_scene(12)
    step_max, turn_max = 0.6, 0.6
    poses = random_walk_trajectory(scene, 60, seed=3, step_max=step_max,
                                   turn_max=turn_max)
    for a, b in zip(poses, poses[1:]):
        assert np.linalg.norm(b.position() - a.position()) <= step_max + 1e-9
        rel = relative_pose(a, b)
        angle = math.acos(np.clip((np.trace(rel.rotation) - 1) / 2, -1, 1))
        assert angle <= turn_max + 1e-6


def test_random_walk_coverage():
    fracs = []
    for seed in range(20):
        scene = generate_toy_scene(seed + 100)
        free = {tuple(c) for c in scene.free_cells()}
        poses = random_walk_trajectory(scene, 100, seed=seed)
        visited = {scene.cell_of(p.position()) for p in poses}
        fracs.append(len(visited & free) / len(free))
    assert np.mean(fracs) >= 0.25


# ----------------------------------------------------------------------------
# Dataset IO


def small_dataset():
    return generate_dataset(n_scenes=1, seqs_per_scene=2, steps=3, seed=5,
                            intr=INTR, n_cells=8)


def test_write_read_roundtrip(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    assert len(back.sequences) == len(ds.sequences)
    for seq_a, seq_b in zip(ds.sequences, back.sequences):
        for fa, fb in zip(seq_a, seq_b):
            np.testing.assert_allclose(fb.pose.matrix(), fa.pose.matrix(), atol=1e-6)
            np.testing.assert_array_equal(
                np.round(fa.rgb * 255).astype(np.uint8),
                np.round(fb.rgb * 255).astype(np.uint8))
            np.testing.assert_allclose(fb.depth, fa.depth, atol=0.5 / 1000 + 1e-9)


def test_read_write_read_fixed_point(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "a")
    once = read_dataset(tmp_path / "a")
    write_dataset(once, tmp_path / "b")
    twice = read_dataset(tmp_path / "b")
    for seq_a, seq_b in zip(once.sequences, twice.sequences):
        for fa, fb in zip(seq_a, seq_b):
            np.testing.assert_array_equal(fa.rgb, fb.rgb)
            np.testing.assert_array_equal(fa.depth, fb.depth)
            np.testing.assert_allclose(fa.pose.matrix(), fb.pose.matrix(), atol=1e-12)


def test_dataset_file_counts(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "ds")
    root = tmp_path / "ds"
    rgb = list(root.rglob("rgb_*.png"))
    depth = list(root.rglob("depth_*.png"))
    poses = list(root.rglob("poses.json"))
    assert len(rgb) == 6 and len(depth) == 6 and len(poses) == 2


def test_missing_poses_is_parse_error(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "ds")
    victim = next((tmp_path / "ds").rglob("poses.json"))
    victim.unlink()
    with pytest.raises(DatasetFormatError) as err:
        read_dataset(tmp_path / "ds")
    assert "poses" in str(err.value)


def test_malformed_poses_named_in_error(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "ds")
    victim = next((tmp_path / "ds").rglob("poses.json"))
    victim.write_text("{not json")
    with pytest.raises(DatasetFormatError) as err:
        read_dataset(tmp_path / "ds")
    assert victim.name in str(err.value) or str(victim) in str(err.value)


def test_rgb_quantization_exact_for_palette_colors():
    # generated scenes use 8-bit palettes, so PNG quantization is lossless
    scene = generate_toy_scene(9, n_cells=8)
    vals = np.concatenate([scene.wall_colors.reshape(-1), scene.floor_color,
                           scene.ceiling_color])
    np.testing.assert_array_equal(np.round(vals * 255) / 255, vals)


# ----------------------------------------------------------------------------
# Subsequence sampling


def test_sample_subsequence_full_length():
    ds = small_dataset()
    frames, poses = sample_subsequence(ds, 3, seed=6)
    assert len(frames) == 3 and len(poses) == 3
    np.testing.assert_allclose(poses[1].matrix(), np.eye(4), atol=1e-9)


def test_sample_subsequence_length_one_identity():
    ds = small_dataset()
    frames, poses = sample_subsequence(ds, 1, seed=7)
    np.testing.assert_allclose(poses[0].matrix(), np.eye(4), atol=1e-9)


def test_sample_subsequence_too_long_rejected():
    ds = small_dataset()
    with pytest.raises(ValueError):
        sample_subsequence(ds, 99, seed=8)


def test_sample_subsequence_preserves_relative_poses():
    ds = small_dataset()
    frames, poses = sample_subsequence(ds, 3, seed=9)
    raw = [f.pose for f in frames]
    for i in range(3):
        for j in range(3):
            a = relative_pose(raw[i], raw[j]).matrix()
            b = relative_pose(poses[i], poses[j]).matrix()
            np.testing.assert_allclose(a, b, atol=1e-6)
