import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctckit.ctc import (best_path_decode, brute_force_ctc, build_lattice,
                        collapse, ctc_loss, ctc_loss_node, expand_with_blanks,
                        is_feasible, min_frames)
from ctckit.errors import ContractError, SizeError
from ctckit.tensor import Tensor, backward, scale


def random_log_probs(rng, T, n_classes):
    p = rng.dirichlet(np.ones(n_classes), size=T)
    return np.log(p)


def random_feasible_target(rng, T, n_classes, max_len):
    while True:
        L = int(rng.integers(0, max_len + 1))
        target = rng.integers(1, n_classes, size=L).tolist()
        if is_feasible(T, target):
            return target


def test_collapse_examples():
    assert collapse([1, 1, 0, 1, 2, 2]) == [1, 1, 2]
    assert collapse([0, 0, 0]) == []
    assert collapse([1, 0, 1]) == [1, 1]
    assert collapse([]) == []


def test_collapse_order_duplicates_before_blanks():
    # removing blanks first would merge the two runs of 1s
    assert collapse([1, 0, 0, 1]) == [1, 1]


@given(st.lists(st.integers(0, 4), max_size=30))
def test_collapse_output_has_no_blanks(path):
    assert 0 not in collapse(path)


def test_expand_with_blanks():
    np.testing.assert_array_equal(expand_with_blanks([3, 1]), [0, 3, 0, 1, 0])
    np.testing.assert_array_equal(expand_with_blanks([]), [0])


def test_min_frames_counts_adjacent_repeats():
    assert min_frames([]) == 0
    assert min_frames([1, 2]) == 2
    assert min_frames([1, 1]) == 3
    assert min_frames([1, 1, 1, 2]) == 6


@given(st.lists(st.integers(1, 3), max_size=6), st.integers(0, 10))
def test_feasibility_monotone_in_frames(target, T):
    if is_feasible(T, target):
        assert is_feasible(T + 1, target)


def test_uniform_two_frame_single_label():
    # two frames, uniform over {blank, a}: 3 of the 4 paths collapse to [a]
    logp = np.log(np.full((2, 2), 0.5))
    loss, grad = ctc_loss(logp, [1])
    assert loss == pytest.approx(-math.log(0.75), abs=1e-12)
    assert grad.shape == (2, 2)
    p = brute_force_ctc(np.full((2, 2), 0.5), [1])
    assert p == pytest.approx(0.75, abs=1e-15)


def test_repeated_label_infeasible_in_two_frames():
    logp = np.log(np.full((2, 2), 0.5))
    loss, grad = ctc_loss(logp, [1, 1])
    assert loss == np.inf
    np.testing.assert_array_equal(grad, np.zeros((2, 2)))
    # one extra frame makes it reachable
    logp3 = np.log(np.full((3, 2), 0.5))
    loss3, _ = ctc_loss(logp3, [1, 1])
    assert np.isfinite(loss3)


def test_empty_target_probability_is_blank_run(rng):
    logp = random_log_probs(rng, 4, 3)
    loss, grad = ctc_loss(logp, [])
    assert loss == pytest.approx(-logp[:, 0].sum(), abs=1e-12)
    # only the blank column carries gradient
    assert np.all(grad[:, 1:] == 0.0)
    np.testing.assert_allclose(grad[:, 0], -1.0, atol=1e-12)


def test_loss_matches_brute_force_on_random_instances(rng):
    for _ in range(50):
        T = int(rng.integers(1, 6))
        n_classes = int(rng.integers(2, 4))
        target = rng.integers(1, n_classes, size=rng.integers(0, 4)).tolist()
        probs = rng.dirichlet(np.ones(n_classes), size=T)
        loss, _ = ctc_loss(np.log(probs), target)
        assert math.exp(-loss) == pytest.approx(brute_force_ctc(probs, target),
                                                abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(5):
        T = int(rng.integers(2, 7))
        n_classes = int(rng.integers(2, 5))
        logp = random_log_probs(rng, T, n_classes)
        target = random_feasible_target(rng, T, n_classes, max_len=3)
        _, grad = ctc_loss(logp, target)
        h = 1e-6
        for t in range(T):
            for c in range(n_classes):
                bumped = logp.copy()
                bumped[t, c] += h
                up, _ = ctc_loss(bumped, target)
                bumped[t, c] -= 2 * h
                down, _ = ctc_loss(bumped, target)
                fd = (up - down) / (2 * h)
                assert grad[t, c] == pytest.approx(fd, abs=1e-6)


def test_lattice_frame_identity(rng):
    # summing occupancies at any frame recovers the total log probability
    for _ in range(10):
        T = int(rng.integers(1, 7))
        n_classes = int(rng.integers(2, 5))
        logp = random_log_probs(rng, T, n_classes)
        target = random_feasible_target(rng, T, n_classes, max_len=3)
        lat = build_lattice(logp, target)
        for t in range(T):
            combined = lat.alpha[t] + lat.beta[t] - lat.emit[t]
            finite = combined[np.isfinite(combined)]
            total = np.log(np.exp(finite - finite.max()).sum()) + finite.max()
            assert total == pytest.approx(lat.log_total, abs=1e-9)


def test_total_probability_normalizes(rng):
    # over all targets of length <= T the probabilities partition to one
    T, n_classes = 3, 3
    probs = rng.dirichlet(np.ones(n_classes), size=T)
    logp = np.log(probs)
    total = 0.0
    targets = [[]]
    for L in range(1, T + 1):
        targets.extend(np.stack(np.meshgrid(*[range(1, n_classes)] * L),
                                axis=-1).reshape(-1, L).tolist())
    for target in targets:
        loss, _ = ctc_loss(logp, target)
        total += math.exp(-loss)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_target_with_blank_rejected():
    logp = np.log(np.full((3, 3), 1 / 3))
    with pytest.raises(ContractError):
        ctc_loss(logp, [1, 0, 2])
    with pytest.raises(ContractError):
        ctc_loss(logp, [3])


def test_brute_force_guard():
    probs = np.full((9, 2), 0.5)
    with pytest.raises(SizeError):
        brute_force_ctc(probs, [1])
    with pytest.raises(SizeError):
        brute_force_ctc(np.full((8, 8), 1 / 8), [1])


def test_best_path_ties_prefer_lowest_id():
    post = np.array([[0.5, 0.5], [0.2, 0.8]])
    # frame 0 tie resolves to blank, so only frame 1 emits
    assert best_path_decode(post) == [1]


def test_best_path_on_known_matrix():
    post = np.array([
        [0.1, 0.8, 0.1],
        [0.1, 0.8, 0.1],
        [0.8, 0.1, 0.1],
        [0.1, 0.1, 0.8],
    ])
    assert best_path_decode(post) == [1, 2]


def test_loss_node_backward_scales_lattice_gradient(rng):
    logp = Tensor(random_log_probs(rng, 4, 3), requires_grad=True)
    node = ctc_loss_node(logp, [1, 2])
    _, expected = ctc_loss(logp.data, [1, 2])
    backward(scale(node, 2.0))
    np.testing.assert_allclose(logp.grad, 2.0 * expected, atol=1e-12)


def test_loss_node_marks_infeasible(rng):
    logp = Tensor(random_log_probs(rng, 2, 3), requires_grad=True)
    node = ctc_loss_node(logp, [1, 1])
    assert node.item() == np.inf
    assert node.meta["infeasible"]


@settings(max_examples=30)
@given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 3),
       st.integers(0, 2 ** 31 - 1))
def test_loss_vs_brute_force_property(T, n_classes, L, seed):
    gen = np.random.default_rng(seed)
    probs = gen.dirichlet(np.ones(n_classes), size=T)
    target = gen.integers(1, n_classes, size=L).tolist()
    loss, _ = ctc_loss(np.log(probs), target)
    assert math.exp(-loss) == pytest.approx(brute_force_ctc(probs, target),
                                            abs=1e-10)
