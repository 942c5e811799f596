import numpy as np
import pytest

from saakit.errors import ShapeError
from saakit.losses import pseudo_label, pseudo_labels, sup_loss, total_loss, unsup_loss


def test_pseudo_label():
    assert pseudo_label([0.96, 0.04], 0.95) == (0, 0.96, True)
    assert pseudo_label([0.1, 0.9], 0.95).accepted is False
    # ties go to the lowest class index
    assert pseudo_label([0.5, 0.5], 0.95) == (0, 0.5, False)
    assert pseudo_label([0.25, 0.75], 0.75).accepted


def test_pseudo_labels_batch():
    labels, mask = pseudo_labels(np.array([[0.2, 0.8], [0.99, 0.01], [0.5, 0.5]]), 0.9)
    assert list(labels) == [1, 0, 0]
    assert list(mask) == [False, True, False]


def test_all_rejected_gives_zero():
    weak = np.array([[0.6, 0.4], [0.3, 0.7]])
    strong = np.array([[0.1, 0.9], [0.8, 0.2]])
    loss, raws, mask_rate = unsup_loss(weak, strong, 0.95)
    assert loss == 0.0
    assert mask_rate == 0.0
    # raw losses are still reported for the history
    assert raws[0] == pytest.approx(-np.log(0.1))


def test_zero_threshold_is_unmasked_mean():
    rng = np.random.default_rng(0)
    weak = rng.dirichlet(np.ones(4), size=8)
    strong = rng.dirichlet(np.ones(4), size=8)
    loss, raws, mask_rate = unsup_loss(weak, strong, 0.0)
    assert mask_rate == 1.0
    assert loss == pytest.approx(raws.mean())
    expected = -np.log(strong[np.arange(8), weak.argmax(axis=1)])
    np.testing.assert_allclose(raws, expected)


def test_perfect_strong_prediction_has_near_zero_loss():
    weak = np.array([[0.02, 0.97, 0.01]])
    strong = np.array([[0.0, 1.0, 0.0]])
    loss, raws, _ = unsup_loss(weak, strong, 0.95)
    assert raws[0] < 1e-6
    assert loss < 1e-6


def test_masked_mean_divides_by_full_batch():
    weak = np.array([[0.99, 0.01], [0.5, 0.5]])
    strong = np.array([[0.5, 0.5], [0.5, 0.5]])
    loss, _, mask_rate = unsup_loss(weak, strong, 0.95)
    assert mask_rate == 0.5
    assert loss == pytest.approx(np.log(2) / 2)


def test_unsup_loss_shapes():
    with pytest.raises(ShapeError):
        unsup_loss(np.ones((2, 3)) / 3, np.ones((3, 3)) / 3, 0.5)
    loss, raws, mask_rate = unsup_loss(np.zeros((0, 3)), np.zeros((0, 3)), 0.5)
    assert loss == 0.0 and len(raws) == 0 and mask_rate == 0.0


def test_sup_and_total():
    preds = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert sup_loss(preds, [0, 1]) == pytest.approx((np.log(2) - np.log(0.75)) / 2)
    assert sup_loss(np.zeros((0, 2)), []) == 0.0
    with pytest.raises(ShapeError):
        sup_loss(preds, [0])

    assert total_loss(1.0, 2.0, 0.5) == 2.0
    assert total_loss(1.0, 2.0, 0.0) == 1.0


def test_threshold_above_one_rejects_everything():
    rng = np.random.default_rng(1)
    weak = rng.dirichlet(np.ones(3), size=6)
    weak[0] = [1.0, 0.0, 0.0]
    strong = rng.dirichlet(np.ones(3), size=6)
    loss, raws, mask_rate = unsup_loss(weak, strong, 1.01)
    assert loss == 0.0
    assert mask_rate == 0.0
    assert np.all(raws > 0)


def test_loss_only_sees_label_and_mask_of_the_weak_view():
    rng = np.random.default_rng(2)
    threshold = 0.6
    for _ in range(50):
        weak = rng.dirichlet(np.full(4, 0.3), size=10)
        strong = rng.dirichlet(np.ones(4), size=10)
        labels, mask = pseudo_labels(weak, threshold)

        # new confidence on the same side of the threshold, other classes shrunk below it
        moved = weak.copy()
        for i, label in enumerate(labels):
            old = weak[i, label]
            new = rng.uniform(threshold, 1.0) if mask[i] else rng.uniform(old / 2, threshold)
            others = np.arange(4) != label
            moved[i, others] *= rng.uniform(0.1, 0.9, size=3) * min(1.0, new / old)
            moved[i, label] = new

        moved_labels, moved_mask = pseudo_labels(moved, threshold)
        assert np.array_equal(moved_labels, labels)
        assert np.array_equal(moved_mask, mask)
        assert unsup_loss(moved, strong, threshold)[0] == unsup_loss(weak, strong, threshold)[0]


def test_batched_pseudo_labels_agree_on_float32():
    weak = np.array([[0.95, 0.05], [0.05, 0.95], [0.96, 0.04]], dtype=np.float32)
    labels, mask = pseudo_labels(weak, 0.95)
    single = [pseudo_label(row, 0.95) for row in weak]
    assert list(labels) == [p.label for p in single]
    assert list(mask) == [p.accepted for p in single]
    # 0.95 is not representable in float32 and rounds below the threshold
    assert list(mask) == [False, False, True]
