import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_align.alignment import collapse
from latent_align.ctc import (
    best_path, constrained_forward_backward, ctc_greedy_decode, ctc_loss, ctc_loss_batch, log_softmax,
)
from latent_align.oracle import brute_force_nll, central_difference, relative_error

A, B, C = 1, 2, 3


def exhaustive_nll(lattice, y):
    """Sum over every length-L sequence, independent of any alignment code."""
    logp = lattice - np.log(np.exp(lattice).sum(axis=1, keepdims=True))
    length, k = lattice.shape
    total = 0.0
    for a in itertools.product(range(k), repeat=length):
        if collapse(a) == tuple(y):
            total += math.exp(sum(logp[t, s] for t, s in enumerate(a)))
    return -math.log(total) if total > 0 else math.inf


def test_uniform_single_path():
    loss, _ = ctc_loss(np.zeros((2, 3)), (A, B))
    assert loss == pytest.approx(-math.log(1 / 9), rel=1e-12)


def test_infeasible_is_inf_with_zero_grad():
    loss, grad = ctc_loss(np.random.default_rng(0).normal(size=(2, 3)), (A, A))
    assert loss == math.inf
    assert np.all(grad == 0)


def test_random_instance_matches_enumeration():
    rng = np.random.default_rng(5)
    lattice = rng.normal(size=(8, 4))
    y = (A, B, B)
    assert relative_error(ctc_loss(lattice, y)[0], brute_force_nll(lattice, y)) < 1e-8


@pytest.mark.parametrize("seed", range(6))
def test_matches_exhaustive_sum(seed):
    rng = np.random.default_rng(seed)
    length = int(rng.integers(1, 6))
    y = tuple(int(t) for t in rng.integers(1, 3, size=int(rng.integers(0, length + 1))))
    lattice = rng.normal(scale=2, size=(length, 3))
    assert relative_error(ctc_loss(lattice, y)[0], exhaustive_nll(lattice, y)) < 1e-10


def test_empty_target_is_all_blank_path():
    lattice = np.random.default_rng(1).normal(size=(4, 3))
    assert ctc_loss(lattice, ())[0] == pytest.approx(-log_softmax(lattice)[:, 0].sum(), rel=1e-12)


def test_gradient_central_difference():
    rng = np.random.default_rng(2)
    lattice = rng.normal(size=(7, 4))
    y = (A, C, C)
    grad = ctc_loss(lattice, y)[1]
    numeric = central_difference(lambda s: ctc_loss(s, y)[0], lattice)
    assert relative_error(grad, numeric, floor=1e-4) < 1e-4


def test_gradient_rows_sum_to_zero():
    # softmax minus a posterior distribution per frame
    grad = ctc_loss(np.random.default_rng(3).normal(size=(6, 3)), (A, B))[1]
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_batch_matches_single_rows():
    rng = np.random.default_rng(4)
    scores = rng.normal(size=(3, 6, 4))
    targets = [(A,), (B, C), (A, A)]
    lengths = [2, 6, 4]
    loss, grad = ctc_loss_batch(scores, targets, lengths)
    singles = [ctc_loss(scores[b, :n], y) for b, (y, n) in enumerate(zip(targets, lengths))]
    assert loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
    for b, n in enumerate(lengths):
        np.testing.assert_allclose(grad[b, :n], singles[b][1] / 3, atol=1e-14)
        assert np.all(grad[b, n:] == 0)


def test_shift_invariance_per_frame():
    rng = np.random.default_rng(6)
    lattice = rng.normal(size=(5, 3))
    shifted = lattice + rng.normal(size=(5, 1)) * 10
    assert ctc_loss(lattice, (A, B))[0] == pytest.approx(ctc_loss(shifted, (A, B))[0], rel=1e-12)


def test_large_scores_stay_finite():
    lattice = np.random.default_rng(7).normal(size=(10, 4)) * 200
    loss, grad = ctc_loss(lattice, (A, B, C))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))


def test_validation_errors():
    with pytest.raises(ValueError):
        constrained_forward_backward(np.zeros((2, 3)), [(A,)])
    with pytest.raises(ValueError):
        constrained_forward_backward(np.zeros((1, 2, 3)), [(5,)])
    with pytest.raises(ValueError):
        constrained_forward_backward(np.zeros((1, 2, 3)), [(A,)], lengths=[3])


def test_greedy_examples():
    rows = (0, A, A, 0, B)
    lattice = np.full((5, 3), -1.0)
    lattice[np.arange(5), rows] = 1.0
    assert ctc_greedy_decode(lattice) == (A, B)
    assert tuple(best_path(lattice)) == rows
    assert ctc_greedy_decode(np.eye(3)[[0, 0, 0]]) == ()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_greedy_is_collapse_of_argmax(seed, length):
    lattice = np.random.default_rng(seed).normal(size=(length, 5))
    expected = []
    prev = None
    for t in range(length):
        s = int(np.argmax(lattice[t]))
        if s != prev and s != 0:
            expected.append(s)
        prev = s
    assert ctc_greedy_decode(lattice) == tuple(expected)
