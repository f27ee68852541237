"""Registration objective and solver tests.

The MI oracle is computed with plain math.log arithmetic from explicit
joint counts, independent of the library's histogram code.
"""

import math

import numpy as np
import pytest

from usreg_sim.imgvol import (
    RigidTransform3,
    Volume3,
    compose,
    dice,
    inverse,
    rotation_about,
    rotation_z,
    translate_volume,
    translation,
)
from usreg_sim.phantom import generate_phantom
from usreg_sim.registration import (
    RegistrationConfig,
    apply_transform,
    mutual_information,
    register_rigid,
)


def _mi_oracle(n00, n01, n10, n11):
    total = n00 + n01 + n10 + n11
    joint = [[n00 / total, n01 / total], [n10 / total, n11 / total]]
    rows = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]]
    cols = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]]
    mi = 0.0
    for r in (0, 1):
        for c in (0, 1):
            p = joint[r][c]
            if p > 0:
                mi += p * math.log(p / (rows[r] * cols[c]))
    return mi


def _volume_pair_with_counts(n00, n01, n10, n11):
    """Two aligned 8x8x8 volumes whose identity joint histogram is given."""
    f = np.array([0] * (n00 + n01) + [1] * (n10 + n11), dtype=np.uint8)
    m = np.array([0] * n00 + [1] * n01 + [0] * n10 + [1] * n11, dtype=np.uint8)
    assert f.size == 512
    grid = (np.ones(3), np.zeros(3), np.eye(3))
    return (
        Volume3(f.reshape(8, 8, 8), *grid),
        Volume3(m.reshape(8, 8, 8), *grid),
    )


def test_mi_matches_hand_joint_counts():
    fixed, moving = _volume_pair_with_counts(400, 40, 40, 32)
    got = mutual_information(fixed, moving, RigidTransform3.identity())
    assert got == pytest.approx(_mi_oracle(400, 40, 40, 32), abs=1e-12)
    # frozen via the independent identity MI = H(rows) + H(cols) - H(joint)
    assert got == pytest.approx(0.047695803244, abs=1e-9)


def test_mi_self_is_marginal_entropy():
    rng = np.random.default_rng(4)
    data = (rng.random((8, 8, 8)) < 0.3).astype(np.uint8)
    vol = Volume3(data, np.ones(3), np.zeros(3), np.eye(3))
    p1 = data.mean()
    entropy = -(p1 * math.log(p1) + (1 - p1) * math.log(1 - p1))
    got = mutual_information(vol, vol, RigidTransform3.identity())
    assert got == pytest.approx(entropy, abs=1e-12)
    assert got > 0


def test_mi_constant_moving_is_zero():
    fixed, _ = _volume_pair_with_counts(440, 0, 72, 0)
    zeros = Volume3(np.zeros((8, 8, 8), dtype=np.uint8), np.ones(3), np.zeros(3), np.eye(3))
    assert mutual_information(fixed, zeros, RigidTransform3.identity()) == 0.0


def test_mi_empty_overlap_flagged_zero():
    fixed, moving = _volume_pair_with_counts(400, 40, 40, 32)
    far = translation(np.array([1e6, 0.0, 0.0]))
    mi, overlap = mutual_information(fixed, moving, far, return_overlap=True)
    assert mi == 0.0
    assert overlap == 0


@pytest.fixture(scope="module")
def annotation():
    return generate_phantom(seed=5).hv_annotation


def _rotation_angle_deg(transform):
    tr = np.trace(transform.rotation)
    return math.degrees(math.acos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


def test_self_registration_returns_identity(annotation):
    t, score = register_rigid(annotation, annotation, cfg=RegistrationConfig(seed=1))
    assert np.linalg.norm(t.translation) <= 1.0  # half a voxel
    assert _rotation_angle_deg(t) <= 0.5
    assert score > 0


def test_translation_recovery_with_centroid_init(annotation):
    shift = np.array([5.0, 0.0, 0.0])
    moving = translate_volume(annotation, shift)
    init = translation(-shift)  # centroid init: contents share shape exactly
    t, _ = register_rigid(annotation, moving, init=init, cfg=RegistrationConfig(seed=2))
    probe_pt = np.array([64.0, 95.0, 60.0]) + shift
    err = np.linalg.norm(t.apply(probe_pt) - (probe_pt - shift))
    assert err <= 2.0  # one voxel
    assert _rotation_angle_deg(t) <= 1.0


def test_rotation_translation_recovery_resampled(annotation):
    truth_move = compose(
        translation(np.array([3.0, -2.0, 0.0])),
        rotation_about(rotation_z(4.0), np.array([64.0, 95.0, 60.0])),
    )
    moving = apply_transform(annotation, truth_move, annotation)
    # register moving back onto fixed: truth is the inverse motion
    truth = inverse(truth_move)
    g_fixed = _content_centroid(annotation)
    g_moving = _content_centroid(moving)
    init = translation(g_fixed - g_moving)
    t, _ = register_rigid(annotation, moving, init=init, cfg=RegistrationConfig(seed=3))
    for pt in (np.array([64.0, 95.0, 60.0]), np.array([80.0, 95.0, 62.0])):
        src = truth_move.apply(pt)
        assert np.linalg.norm(t.apply(src) - truth.apply(src)) <= 2.0
    assert abs(_rotation_angle_deg(t) - 4.0) <= 1.0


def _content_centroid(vol):
    from usreg_sim.imgvol import centroid

    return centroid(vol)


def test_registration_deterministic(annotation):
    moving = translate_volume(annotation, np.array([4.0, 3.0, -2.0]))
    cfg = RegistrationConfig(seed=9)
    t1, s1 = register_rigid(annotation, moving, cfg=cfg)
    t2, s2 = register_rigid(annotation, moving, cfg=cfg)
    assert np.array_equal(t1.rotation, t2.rotation)
    assert np.array_equal(t1.translation, t2.translation)
    assert s1 == s2


def test_score_trace_monotone_per_level(annotation):
    moving = translate_volume(annotation, np.array([6.0, -4.0, 2.0]))
    _, _, traces = register_rigid(
        annotation, moving, cfg=RegistrationConfig(seed=4), return_trace=True
    )
    assert len(traces) == 2
    for trace in traces:
        assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))


def test_negative_dice_objective_improves(annotation):
    moving = translate_volume(annotation, np.array([5.0, 2.0, 0.0]))
    cfg = RegistrationConfig(objective="negative_dice", seed=6)
    t, score = register_rigid(annotation, moving, cfg=cfg)
    aligned = apply_transform(moving, t, annotation)
    before = dice(moving.data, annotation.data)  # same grid, shifted content
    after = dice(aligned.data, annotation.data)
    assert after >= before
    assert after >= 0.9
    assert 0.0 <= score <= 1.0


def test_zero_noise_misalignments_always_improve(annotation):
    rng = np.random.default_rng(12)
    for _ in range(5):
        delta = rng.uniform(-8, 8, size=3)
        moving = translate_volume(annotation, delta)
        init = translation(_content_centroid(annotation) - _content_centroid(moving))
        t, _ = register_rigid(annotation, moving, init=init, cfg=RegistrationConfig(seed=7))
        before = dice(apply_transform(moving, init, annotation).data, annotation.data)
        after = dice(apply_transform(moving, t, annotation).data, annotation.data)
        assert after >= before


def test_validation_errors(annotation):
    with pytest.raises(ValueError, match="empty"):
        empty = Volume3(
            np.zeros_like(annotation.data), annotation.spacing,
            annotation.origin, annotation.axes,
        )
        register_rigid(annotation, empty)
    with pytest.raises(ValueError, match="harmonized"):
        small = Volume3(np.ones((4, 4, 4), dtype=np.uint8), annotation.spacing,
                        annotation.origin, annotation.axes)
        register_rigid(annotation, small)
    with pytest.raises(ValueError, match="0 and 1"):
        graded = Volume3(annotation.data.astype(np.float32) * 0.5,
                         annotation.spacing, annotation.origin, annotation.axes)
        register_rigid(annotation, graded)
    with pytest.raises(ValueError, match="objective"):
        RegistrationConfig(objective="ssd")
    with pytest.raises(ValueError, match="bins"):
        RegistrationConfig(histogram_bins=1)


def test_apply_transform_identity_roundtrip(annotation):
    out = apply_transform(annotation, RigidTransform3.identity(), annotation)
    assert np.array_equal(out.data, annotation.data)
