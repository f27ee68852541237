import numpy as np
import pytest

from _oracles import count_components, point_to_polyline_distance
from usreg_sim.imgvol import inverse, physical_to_voxel, voxel_to_physical
from usreg_sim.phantom import (
    PhantomParams,
    VesselBranch,
    generate_phantom,
    load_scene,
    place_phantom,
    save_scene,
    target_grid,
)


@pytest.fixture(scope="module")
def scene():
    return generate_phantom(seed=0)


def test_generation_is_deterministic(scene):
    again = generate_phantom(seed=0)
    np.testing.assert_array_equal(again.ct.data, scene.ct.data)
    np.testing.assert_array_equal(again.hv_annotation.data, scene.hv_annotation.data)
    np.testing.assert_array_equal(again.hv_branch_annotation.data, scene.hv_branch_annotation.data)
    different = generate_phantom(seed=1)
    assert not np.array_equal(different.ct.data, scene.ct.data)  # texture changes
    np.testing.assert_array_equal(different.hv_annotation.data, scene.hv_annotation.data)


def test_annotation_is_exactly_the_tube_set(scene):
    """Marked voxels are within a branch radius of its centerline, and vice versa."""
    sp = scene.params.spacing_mm
    ann = scene.hv_annotation.data
    rng = np.random.default_rng(3)

    marked = np.argwhere(ann)
    sample = marked[rng.choice(len(marked), size=300, replace=False)]
    for vox in sample:
        center = vox * sp
        dmin = min(
            point_to_polyline_distance(center, br.points) - br.radius
            for br in scene.tree.branches
        )
        assert dmin <= 1e-9, f"marked voxel {vox} is outside every tube"

    unmarked_checked = 0
    while unmarked_checked < 300:
        vox = rng.integers(0, scene.ct.shape, size=3)
        center = vox * sp
        inside = any(
            point_to_polyline_distance(center, br.points) <= br.radius
            for br in scene.tree.branches
        )
        assert bool(ann[tuple(vox)]) == inside
        unmarked_checked += 1


def test_branch_oracle_is_subset_within_window(scene):
    branch = scene.hv_branch_annotation.data
    ann = scene.hv_annotation.data
    assert (branch <= ann).all()
    assert branch.sum() > 0
    # restricted to the trunk/middle-vein window: extent along x stays within
    # branch_window + radius of the branching point
    sp = scene.params.spacing_mm
    xs = np.argwhere(branch)[:, 0] * sp
    bp_x = scene.tree.branch_point[0]
    limit = scene.params.branch_window_mm + max(scene.params.radius_trunk, scene.params.radius_mhv)
    assert xs.min() >= bp_x - limit - sp and xs.max() <= bp_x + limit + sp


def test_two_lobe_cross_section_near_branch_point(scene):
    """Within two slices of the branching point some axial slice shows >= 2 lobes."""
    sp = scene.params.spacing_mm
    slice_idx = int(round(scene.tree.branch_point[0] / sp))
    found = max(
        count_components(scene.hv_annotation.data[slice_idx + d])
        for d in range(-2, 3)
    )
    assert found >= 2


def test_vessels_stay_below_surface(scene):
    sp = scene.params.spacing_mm
    for vox in np.argwhere(scene.hv_annotation.data)[::17]:
        x, y, z = vox * sp
        top = scene.surface_height(x, y)
        assert z < top


def test_surface_height_values(scene):
    p = scene.params
    assert scene.surface_height(10.0, p.body_center_y) == pytest.approx(p.body_center_z + p.body_semi_z)
    assert np.isnan(scene.surface_height(10.0, p.body_center_y + p.body_semi_y + 1))


def test_ct_intensities(scene):
    p = scene.params
    ann = scene.hv_annotation.data.astype(bool)
    assert scene.ct.data[ann].mean() == pytest.approx(p.vessel_intensity, abs=0.01)
    outside = scene.ct.data[:, 0, 0]
    np.testing.assert_array_equal(outside, 0.0)  # off-body voxels carry no signal


def test_placement_consistency():
    base = generate_phantom(seed=2)
    moved = place_phantom(base, offset=(12.5, -7.0, 3.0), yaw_deg=6.0)
    rng = np.random.default_rng(4)
    idx = rng.integers(0, np.array(base.ct.shape), size=(50, 3))
    np.testing.assert_allclose(
        voxel_to_physical(moved.hv_annotation, idx),
        moved.placement.apply(voxel_to_physical(base.hv_annotation, idx)),
        atol=1e-9,
    )
    np.testing.assert_allclose(
        moved.tree.branch_point,
        moved.placement.apply(base.tree.branch_point),
        atol=1e-12,
    )
    # placed surface: height shifts by t_z and follows the yawed footprint
    p0 = base.tree.branch_point
    top0 = base.surface_height(p0[0], p0[1])
    p1 = moved.placement.apply([p0[0], p0[1], top0])
    assert moved.surface_height(p1[0], p1[1]) == pytest.approx(top0 + 3.0, abs=1e-9)


def test_placement_yaw_limit():
    base = generate_phantom(seed=2)
    with pytest.raises(ValueError):
        place_phantom(base, offset=(0, 0, 0), yaw_deg=11.0)


def test_target_grid_layout(scene):
    targets = target_grid(scene)
    p = scene.params
    assert targets.shape == (p.targets_along * p.targets_across, 3)
    assert len(np.unique(targets[:, 2])) == 1  # single depth
    xs = np.unique(targets[:, 0])
    assert len(xs) == p.targets_along
    steps = np.diff(xs)
    np.testing.assert_allclose(steps, steps[0], atol=1e-9)  # uniform pitch
    assert xs.max() - xs.min() == pytest.approx(p.target_span_x)
    np.testing.assert_allclose(targets[:, :2].mean(axis=0), scene.tree.branch_point[:2], atol=1e-9)


def test_target_grid_is_in_ct_frame_after_placement():
    base = generate_phantom(seed=2)
    moved = place_phantom(base, offset=(20.0, -10.0, 0.0), yaw_deg=4.0)
    np.testing.assert_allclose(target_grid(moved), target_grid(base), atol=1e-9)


def test_target_grid_rejects_overrun():
    params = PhantomParams(target_span_x=400.0)
    scene = generate_phantom(seed=0, params=params)
    with pytest.raises(ValueError):
        target_grid(scene)


def test_generate_rejects_degenerate_params():
    with pytest.raises(ValueError):
        generate_phantom(seed=0, params=PhantomParams(radius_mhv=0.0))
    with pytest.raises(ValueError):
        generate_phantom(seed=0, params=PhantomParams(volume_shape=(8, 8, 8)))


def test_branch_polyline_step_limit():
    pts = np.array([[0.0, 0, 0], [10.0, 0, 0]])  # 10 mm step, radius 2 -> too coarse
    with pytest.raises(ValueError):
        VesselBranch("bad", 2.0, pts)


def test_scene_round_trip(tmp_path, scene):
    moved = place_phantom(scene, offset=(5.0, 2.0, 0.0), yaw_deg=-3.0)
    path = save_scene(moved, tmp_path / "scene")
    back = load_scene(path)
    np.testing.assert_array_equal(back.ct.data, moved.ct.data)
    np.testing.assert_array_equal(back.hv_annotation.data, moved.hv_annotation.data)
    np.testing.assert_allclose(back.ct.origin, moved.ct.origin, atol=1e-12)
    np.testing.assert_allclose(back.ct.axes, moved.ct.axes, atol=1e-12)
    np.testing.assert_allclose(back.placement.rotation, moved.placement.rotation, atol=1e-12)
    np.testing.assert_allclose(back.placement.translation, moved.placement.translation, atol=1e-12)
    np.testing.assert_allclose(back.tree.branch_point, moved.tree.branch_point, atol=1e-12)
    np.testing.assert_allclose(target_grid(back), target_grid(moved), atol=1e-9)
    assert back.surface_height(100.0, 95.0) == pytest.approx(moved.surface_height(100.0, 95.0), abs=1e-9)


def test_branch_point_index_consistency(scene):
    idx = physical_to_voxel(scene.hv_annotation, scene.tree.branch_point)
    assert scene.hv_annotation.data[tuple(np.round(idx).astype(int))] == 1
    ct_frame_bp = inverse(scene.placement).apply(scene.tree.branch_point)
    np.testing.assert_allclose(ct_frame_bp, scene.tree.branch_point)  # identity placement
