import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgocr.ctc import (
    CTCError,
    brute_force_likelihood,
    collapse,
    ctc_forward_backward,
    ctc_loss,
    ctc_loss_tensor,
    greedy_decode,
    min_input_length,
)
from fgocr.nn.tensor import Tensor, log_softmax


def random_instance(rng, t_max=8, c_max=4, l_max=3):
    c = int(rng.integers(2, c_max + 1))
    while True:
        t = int(rng.integers(1, t_max + 1))
        label = list(rng.integers(1, c, size=int(rng.integers(0, l_max + 1))))
        if min_input_length(label) <= t:
            return rng.standard_normal((t, c)) * 2.0, label


def numeric_grad(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = fn(x)
        x[idx] = old - eps
        lo = fn(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def test_loss_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(150):
        x, label = random_instance(rng)
        nll, _ = ctc_loss(x, label)
        assert abs(np.exp(-nll) - brute_force_likelihood(x, label)) < 1e-9


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(30):
        x, label = random_instance(rng)
        _, g = ctc_loss(x, label)
        num = numeric_grad(lambda v: ctc_loss(v, label)[0], x.copy())
        assert np.abs(g - num).max() / max(np.abs(num).max(), 1e-8) < 1e-4


def test_probability_input_gradient():
    rng = np.random.default_rng(2)
    x, label = rng.standard_normal((5, 3)), [1, 2]
    p = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
    nll, g = ctc_loss(p, label, probabilities=True)
    assert nll == pytest.approx(ctc_loss(x, label)[0], abs=1e-12)
    # gradient w.r.t. log p: minus the per-step occupancy, which sums to -1 per step
    np.testing.assert_allclose(g.sum(axis=1), -1.0, atol=1e-12)


def test_batched_ragged_matches_single():
    rng = np.random.default_rng(3)
    lp = log_softmax(Tensor(rng.standard_normal((3, 7, 4)))).data
    labels = [[1, 2], [3], [2, 2]]
    lengths = [7, 4, 5]
    nll, grad = ctc_forward_backward(lp, labels, lengths)
    for b in range(3):
        one, g1 = ctc_forward_backward(lp[b : b + 1, : lengths[b]], [labels[b]])
        assert nll[b] == pytest.approx(one[0], abs=1e-12)
        np.testing.assert_allclose(grad[b, : lengths[b]], g1[0], atol=1e-12)
        assert not grad[b, lengths[b] :].any()


def test_tensor_loss_is_batch_mean():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True, dtype=np.float64)
    loss = ctc_loss_tensor(log_softmax(x), [[1], [2, 1]])
    singles = [ctc_loss(x.data[b], lab)[0] for b, lab in enumerate([[1], [2, 1]])]
    assert float(loss.data) == pytest.approx(np.mean(singles), abs=1e-12)
    loss.backward()
    np.testing.assert_allclose(x.grad[1], ctc_loss(x.data[1], [2, 1])[1] / 2, atol=1e-12)


def test_repeated_label_needs_separating_blank():
    assert min_input_length([1, 1]) == 3
    with pytest.raises(CTCError):
        ctc_loss(np.zeros((2, 3)), [1, 1])
    nll, _ = ctc_loss(np.zeros((3, 3)), [1, 1])
    # only the path 1,0,1 survives
    assert np.exp(-nll) == pytest.approx(1 / 27)


def test_empty_label_is_all_blank_path():
    x = np.log(np.array([[0.5, 0.5], [0.25, 0.75]]))
    assert np.exp(-ctc_loss(x, [])[0]) == pytest.approx(0.125)


def test_blank_in_label_rejected():
    with pytest.raises(ValueError):
        ctc_loss(np.zeros((4, 3)), [0, 1])


def test_collapse_and_greedy_decode():
    assert collapse([0, 1, 1, 0, 1, 2, 2, 0]) == [1, 1, 2]
    scores = np.array([[0.1, 0.9, 0.0], [0.1, 0.9, 0.0], [0.6, 0.2, 0.2], [0.0, 0.5, 0.5]])
    # ties go to the lower class index
    assert greedy_decode(scores) == [1, 1]
    assert greedy_decode(scores, length=2) == [1]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_likelihood_is_a_probability(seed):
    rng = np.random.default_rng(seed)
    x, label = random_instance(rng)
    nll, g = ctc_loss(x, label)
    assert nll >= -1e-12
    # logit gradients sum to zero per step
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-10)
