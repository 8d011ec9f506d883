import numpy as np
import pytest

from metalabel import (GlobalClassifier, TrainConfig, ValidationError, full_ce,
                       new_model, query_collection, random_bound_instance,
                       random_episodic_instance, restricted_task_ce, submatrix_for,
                       verify_lemma_equality, verify_tightness, verify_upper_bound,
                       w_global)
from metalabel.theory import check_disjoint_queries, separable_episodic_instance


@pytest.fixture
def clf(rng):
    return GlobalClassifier(weights=rng.standard_normal((10, 4)),
                            class_ids=np.arange(10))


class TestSubmatrix:
    def test_sorted_unique_row_selection(self, clf):
        sub, row_map = submatrix_for(clf, [6, 6, 4, 9])
        assert np.array_equal(sub.weights, clf.weights[[4, 6, 9]])
        assert row_map == {4: 0, 6: 1, 9: 2}

    def test_full_selection_is_identity(self, clf):
        sub, _ = submatrix_for(clf, list(range(10)))
        assert np.array_equal(sub.weights, clf.weights)

    def test_singleton_rejected(self, clf):
        with pytest.raises(ValidationError, match="at least 2"):
            submatrix_for(clf, [3, 3, 3])

    def test_unknown_label_rejected(self, clf):
        with pytest.raises(ValidationError, match="unknown class"):
            submatrix_for(clf, [2, 99])

    def test_non_contiguous_class_ids(self, rng):
        clf = GlobalClassifier(weights=rng.standard_normal((3, 2)),
                               class_ids=np.array([5, 11, 40]))
        sub, row_map = submatrix_for(clf, [40, 5])
        assert np.array_equal(sub.weights, clf.weights[[0, 2]])
        assert row_map == {5: 0, 40: 1}


class TestWGlobal:
    def test_support_and_query_give_identical_heads(self, clf, rng):
        y = np.array([1, 1, 7, 7, 3, 3])
        Xs = rng.standard_normal((6, 4))
        Xq = rng.standard_normal((6, 4))
        head_s, map_s = w_global(clf, Xs, y)
        head_q, map_q = w_global(clf, Xq, y)
        assert np.array_equal(head_s.weights, head_q.weights)
        assert map_s == map_q

    def test_independent_of_inputs(self, clf, rng):
        y = np.array([0, 2, 5])
        a, _ = w_global(clf, rng.standard_normal((3, 4)), y)
        b, _ = w_global(clf, rng.standard_normal((3, 4)) * 100, y)
        assert np.array_equal(a.weights, b.weights)

    def test_order_isomorphic_relabeling_selects_same_rows(self, clf, rng):
        X = rng.standard_normal((4, 4))
        a, map_a = w_global(clf, X, np.array([2, 2, 6, 6]))
        b, map_b = w_global(clf, X, np.array([1, 1, 8, 8]))
        assert map_a[2] == map_b[1] and map_a[6] == map_b[8]
        assert np.array_equal(a.weights, clf.weights[[2, 6]])
        assert np.array_equal(b.weights, clf.weights[[1, 8]])


class TestUpperBound:
    def test_single_task_covering_all_classes_is_tight(self, rng):
        clf = GlobalClassifier(weights=rng.standard_normal((4, 3)),
                               class_ids=np.arange(4))
        X = rng.standard_normal((8, 3))
        y = np.array([0, 0, 1, 1, 2, 2, 3, 3])
        check = verify_upper_bound(clf, new_model("identity", 3), [(X, y)])
        assert check.gap == pytest.approx(0.0, abs=1e-15)

    def test_holds_on_random_instances(self):
        for seed in range(200):
            clf, model, sets = random_bound_instance(seed)
            check = verify_upper_bound(clf, model, sets)
            assert check.passed
            assert check.gap >= -1e-9

    def test_strict_gap_with_large_off_task_logits(self, rng):
        # classes outside the task carry huge scores, inflating only the rhs
        weights = np.zeros((4, 2))
        weights[2] = [50.0, 50.0]
        weights[3] = [50.0, -50.0]
        clf = GlobalClassifier(weights=weights, class_ids=np.arange(4))
        X = rng.standard_normal((4, 2))
        y = np.array([0, 0, 1, 1])
        check = verify_upper_bound(clf, new_model("identity", 2), [(X, y)])
        assert check.gap > 1.0

    def test_degenerate_zero_loss_instance(self):
        clf = GlobalClassifier(weights=np.array([[2000.0, 0.0], [0.0, 2000.0]]),
                               class_ids=np.arange(2))
        X = np.eye(2)
        y = np.array([0, 1])
        check = verify_upper_bound(clf, new_model("identity", 2), [(X, y)])
        assert check.rhs == 0.0
        assert check.gap == 0.0

    def test_rejects_overlapping_query_sets(self, rng):
        clf = GlobalClassifier(weights=rng.standard_normal((4, 2)),
                               class_ids=np.arange(4))
        X = rng.standard_normal((4, 2))
        sets = [(X, np.array([0, 0, 1, 1])), (X.copy(), np.array([2, 2, 3, 3]))]
        with pytest.raises(ValidationError, match="disjoint"):
            verify_upper_bound(clf, new_model("identity", 2), sets)

    def test_rejects_unequal_sizes(self, rng):
        clf = GlobalClassifier(weights=rng.standard_normal((4, 2)),
                               class_ids=np.arange(4))
        sets = [(rng.standard_normal((4, 2)), np.array([0, 0, 1, 1])),
                (rng.standard_normal((6, 2)), np.array([2, 2, 2, 3, 3, 3]))]
        with pytest.raises(ValidationError, match="same size"):
            verify_upper_bound(clf, new_model("identity", 2), sets)

    def test_per_sample_monotone_in_class_universe(self, rng):
        # scoring against more candidate classes never lowers the loss
        clf = GlobalClassifier(weights=rng.standard_normal((8, 3)),
                               class_ids=np.arange(8))
        for _ in range(30):
            x = rng.standard_normal((1, 3))
            small = sorted(rng.choice(8, size=3, replace=False).tolist())
            extra = [c for c in range(8) if c not in small]
            big = sorted(small + list(rng.choice(extra, size=2, replace=False)))
            label = int(rng.choice(small))
            y = np.array([label, *[c for c in small if c != label]])
            loss_small = restricted_task_ce(clf, np.repeat(x, len(y), axis=0), y)
            y_big = np.array([label, *[c for c in big if c != label]])
            loss_big = restricted_task_ce(clf, np.repeat(x, len(y_big), axis=0), y_big)
            del loss_small, loss_big
        # direct per-sample check
        x = rng.standard_normal(3)
        scores = clf.weights @ x
        for label in range(8):
            subsets = [[label, (label + 1) % 8],
                       [label, (label + 1) % 8, (label + 2) % 8]]
            losses = []
            for subset in subsets:
                rows = sorted(subset)
                z = scores[rows]
                losses.append(float(np.log(np.exp(z - z.max()).sum())
                                    - (z - z.max())[rows.index(label)]))
            assert losses[1] >= losses[0] - 1e-12


class TestLemmaEquality:
    def test_equal_on_random_instances(self):
        for seed in range(50):
            clf, model, meta = random_episodic_instance(seed, n_tasks=4)
            check = verify_lemma_equality(clf, model, meta)
            assert check.max_abs_diff <= 1e-12
            assert check.passed

    def test_rejects_label_mismatch(self, rng):
        clf, model, meta = random_episodic_instance(0, n_tasks=2)
        for s in meta.tasks[0].query:
            s.y_true = (s.y_true + 1) % 20
        with pytest.raises(ValidationError, match="label sets differ"):
            verify_lemma_equality(clf, model, meta)


class TestTightness:
    def test_gap_tracks_loss_to_zero(self):
        meta = separable_episodic_instance(seed=11)
        report = verify_tightness(
            meta, arch="linear", out_dim=8,
            train=TrainConfig(lr=0.1, momentum=0.9, epochs=300, batch_size=512,
                              weight_decay=0.0, seed=13),
            thresholds=(1e-1, 1e-2, 1e-3))
        assert report.bound_held
        assert all(report.thresholds_reached.values())
        assert all(gap <= rhs + 1e-12 for rhs, gap in report.checkpoints)
        assert all(gap >= -1e-9 for _, gap in report.checkpoints)
        assert all(gap < 1e-3 for rhs, gap in report.checkpoints if rhs < 1e-3)

    def test_unreachable_threshold_reported_not_raised(self):
        meta = separable_episodic_instance(seed=11)
        report = verify_tightness(
            meta, arch="linear", out_dim=8,
            train=TrainConfig(lr=0.01, momentum=0.0, epochs=3, batch_size=512,
                              weight_decay=0.0, seed=13),
            thresholds=(1e-6,))
        assert report.thresholds_reached[1e-6] is False
        assert report.bound_held


class TestQueryCollections:
    def test_disjointness_checker_catches_duplicates(self, rng):
        X = rng.standard_normal((3, 2))
        with pytest.raises(ValidationError, match="disjoint"):
            check_disjoint_queries([(X, np.arange(3)), (X[:1], np.array([0]))])

    def test_query_collection_requires_truth(self, tiny_meta):
        for s in tiny_meta.tasks[0].query:
            s.y_true = None
        with pytest.raises(ValidationError, match="ground-truth"):
            query_collection(tiny_meta)

    def test_full_ce_uses_global_row_indexing(self, rng):
        clf = GlobalClassifier(weights=rng.standard_normal((3, 2)),
                               class_ids=np.array([4, 7, 9]))
        Z = rng.standard_normal((2, 2))
        value = full_ce(clf, Z, np.array([7, 9]))
        scores = Z @ clf.weights.T
        shifted = scores - scores.max(axis=1, keepdims=True)
        expected = float(np.mean(np.log(np.exp(shifted).sum(axis=1))
                                 - shifted[[0, 1], [1, 2]]))
        assert value == pytest.approx(expected, abs=1e-12)
