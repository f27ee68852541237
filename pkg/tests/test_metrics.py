import numpy as np
import pytest

from usreg_sim.imgvol import dice, omia, precision, recall


from _oracles import brute_force_omia, brute_ratio_metrics


def test_worked_example():
    # prediction of 4 pixels, truth of 6 pixels, overlap 3
    pred = np.zeros((4, 4), dtype=np.uint8)
    truth = np.zeros((4, 4), dtype=np.uint8)
    pred[0, 0:4] = 1
    truth[0, 0:3] = 1
    truth[1, 0:3] = 1
    assert precision(pred, truth) == 0.75
    assert recall(pred, truth) == 0.5
    assert dice(pred, truth) == 0.6


def test_matches_brute_force_randomized():
    rng = np.random.default_rng(5)
    for _ in range(60):
        ndim = rng.choice([2, 3])
        shape = tuple(rng.integers(1, 17, size=ndim))
        pred = (rng.random(shape) < rng.uniform(0, 1)).astype(np.uint8)
        truth = (rng.random(shape) < rng.uniform(0, 1)).astype(np.uint8)
        p, r, d = brute_ratio_metrics(pred, truth)
        assert precision(pred, truth) == pytest.approx(float(p), abs=0)
        assert recall(pred, truth) == pytest.approx(float(r), abs=0)
        assert dice(pred, truth) == pytest.approx(float(d), abs=0)


def test_empty_conventions():
    empty = np.zeros((3, 3), dtype=np.uint8)
    full = np.ones((3, 3), dtype=np.uint8)
    assert precision(empty, empty) == 1.0
    assert recall(empty, empty) == 1.0
    assert dice(empty, empty) == 1.0
    assert precision(empty, full) == 0.0
    assert recall(full, empty) == 0.0
    assert dice(empty, full) == 0.0


def test_precision_recall_duality_and_dice_symmetry():
    rng = np.random.default_rng(6)
    for _ in range(50):
        a = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        b = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        assert precision(a, b) == recall(b, a)
        assert dice(a, b) == dice(b, a)


def test_validation_errors():
    with pytest.raises(ValueError):
        precision(np.zeros((2, 2), dtype=np.uint8), np.zeros((3, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        dice(np.full((2, 2), 2, dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8))


# --------------------------------------------------------------------- omia



def test_omia_hand_example():
    pred = np.array([[1, 1]], dtype=np.uint8)
    truth = np.zeros((5, 6), dtype=np.uint8)
    truth[2, 3:5] = 1
    assert omia(pred, truth) == 2


def test_omia_self_is_count():
    rng = np.random.default_rng(8)
    m = (rng.random((10, 10)) < 0.3).astype(np.uint8)
    assert omia(m, m) == int(m.sum())


def test_omia_single_pixel():
    truth = np.zeros((6, 6), dtype=np.uint8)
    truth[3, 2] = truth[0, 5] = 1
    pred = np.zeros((6, 6), dtype=np.uint8)
    pred[0, 0] = 1
    assert omia(pred, truth) == 1


def test_omia_empty_cases():
    z = np.zeros((5, 5), dtype=np.uint8)
    o = np.ones((5, 5), dtype=np.uint8)
    assert omia(z, o) == 0
    assert omia(o, z) == 0
    assert omia(z, z) == 0


def test_omia_matches_exhaustive_randomized():
    rng = np.random.default_rng(9)
    for _ in range(100):
        th, tw = rng.integers(2, 17, size=2)
        ph, pw = rng.integers(1, th + 1), rng.integers(1, tw + 1)
        pred = (rng.random((ph, pw)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        truth = (rng.random((th, tw)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        assert omia(pred, truth) == brute_force_omia(pred, truth)


def test_omia_bounds_and_translation_invariance():
    rng = np.random.default_rng(10)
    for _ in range(30):
        pred = np.zeros((12, 12), dtype=np.uint8)
        truth = np.zeros((12, 12), dtype=np.uint8)
        pred[2:5, 2:6] = (rng.random((3, 4)) < 0.6).astype(np.uint8)
        truth[4:9, 3:8] = (rng.random((5, 5)) < 0.6).astype(np.uint8)
        score = omia(pred, truth)
        assert score >= int(np.count_nonzero(pred & truth))
        assert score <= min(int(pred.sum()), int(truth.sum()))
        shifted = np.roll(pred, (3, -2), axis=(0, 1))  # content stays inside the frame
        assert omia(shifted, truth) == score


def test_omia_rejects_oversized_pred():
    with pytest.raises(ValueError):
        omia(np.zeros((7, 3), dtype=np.uint8), np.zeros((5, 5), dtype=np.uint8))
