import numpy as np
import pytest

from dpfgl.metrics import accuracy, auc, auc_bruteforce


def test_perfect_separation():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_hand_value_three_quarters():
    # pairs (pos, neg): (0.4, 0.1) win, (0.4, 0.5) lose, (0.9, 0.1) win, (0.9, 0.5) win
    assert auc([0.1, 0.5, 0.4, 0.9], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-15)


def test_interleaved_hand_value():
    # positives 0.9, 0.4 against negatives 0.6, 0.2: three of four pairs ordered
    assert auc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == pytest.approx(0.75, abs=1e-15)


def test_all_tied_is_half():
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_single_class_is_undefined():
    assert auc([0.1, 0.2], [1, 1]) is None
    assert auc_bruteforce([0.1, 0.2], [0, 0]) is None


@pytest.mark.parametrize("seed", range(30))
def test_rank_auc_matches_pair_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    scores = np.round(rng.uniform(size=n), int(rng.integers(1, 4)))  # coarse rounding forces ties
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    assert abs(auc(scores, labels) - auc_bruteforce(scores, labels)) <= 1e-12


def test_accuracy_threshold():
    assert accuracy([0.2, 0.5, 0.7, 0.4], [0, 1, 1, 1]) == 0.75
