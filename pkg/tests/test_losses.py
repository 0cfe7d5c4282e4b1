import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvasr.errors import (AlphaOutOfRange, InfeasibleTarget, InvalidDistribution, LengthMismatch,
                          TooLarge)
from pvasr.functional import log_softmax
from pvasr.gradcheck import grad_check
from pvasr.losses import (HybridLossConfig, ctc_brute_force, ctc_log_likelihood, cross_entropy,
                          hybrid_loss, min_frames)
from pvasr.tensor import Tensor


def collapse(path, blank=0):
    return [k for k, _ in itertools.groupby(path) if k != blank]


def enumerate_ctc(lp, target):
    """Plain-Python oracle: sum of exp(path score) over collapsing paths."""
    total = 0.0
    for path in itertools.product(range(lp.shape[1]), repeat=lp.shape[0]):
        if collapse(path) == list(target):
            total += math.exp(sum(lp[t, k] for t, k in enumerate(path)))
    return -math.log(total) if total > 0 else math.inf


def random_instance(rng, t_max=6, v_max=4, l_max=3):
    v = int(rng.integers(1, v_max + 1))
    while True:
        t = int(rng.integers(1, t_max + 1))
        target = [int(k) for k in rng.integers(1, v + 1, size=int(rng.integers(0, l_max + 1)))]
        if min_frames(target) <= t:
            break
    lp = log_softmax(Tensor(rng.normal(size=(t, v + 1)) * 2)).data
    return lp, target


def test_ctc_single_frame_one_hot():
    lp = np.full((1, 3), -np.inf)
    lp[0, 2] = 0.0
    assert ctc_log_likelihood(Tensor(lp), [2], check=False).item() == 0.0


def test_ctc_two_frames_uniform_three_alignments():
    lp = np.full((2, 3), np.log(1 / 3))
    assert ctc_log_likelihood(Tensor(lp), [1]).item() == pytest.approx(-math.log(1 / 3), abs=1e-15)
    assert ctc_brute_force(lp, [1]) == pytest.approx(-math.log(1 / 3), abs=1e-15)


def test_ctc_matches_enumeration_oracles():
    rng = np.random.default_rng(0)
    for _ in range(100):
        lp, target = random_instance(rng)
        fb = ctc_log_likelihood(Tensor(lp), target).item()
        assert abs(fb - ctc_brute_force(lp, target)) <= 1e-9
        assert abs(fb - enumerate_ctc(lp, target)) <= 1e-9


def test_ctc_empty_target_is_all_blank():
    lp = log_softmax(Tensor(np.random.default_rng(1).normal(size=(4, 3)))).data
    assert ctc_log_likelihood(Tensor(lp), []).item() == pytest.approx(-lp[:, 0].sum(), abs=1e-12)


def test_ctc_repeat_needs_separating_blank():
    assert min_frames([1, 1]) == 3 and min_frames([1, 2]) == 2
    lp = np.full((2, 3), np.log(1 / 3))
    with pytest.raises(InfeasibleTarget):
        ctc_log_likelihood(Tensor(lp), [1, 1])


def test_ctc_rejects_bad_rows_and_zero_probability():
    with pytest.raises(InvalidDistribution):
        ctc_log_likelihood(Tensor(np.zeros((2, 3))), [1])
    with np.errstate(divide="ignore"):
        lp = np.log(np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        with pytest.raises(InfeasibleTarget):
            ctc_log_likelihood(Tensor(lp), [1])


def test_ctc_normalize_divides_by_length():
    lp = log_softmax(Tensor(np.random.default_rng(2).normal(size=(6, 4)))).data
    raw = ctc_log_likelihood(Tensor(lp), [1, 2, 3]).item()
    assert ctc_log_likelihood(Tensor(lp), [1, 2, 3], normalize=True).item() == pytest.approx(raw / 3, rel=1e-15)


def test_brute_force_guard():
    with pytest.raises(TooLarge):
        ctc_brute_force(np.zeros((11, 2)), [1])


def test_ctc_gradient_through_log_softmax():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        target = [1, 3, 3] if seed % 2 else [2, 1]
        err = grad_check(lambda a: ctc_log_likelihood(log_softmax(a), target, normalize=True), [x])
        assert err <= 1e-5, (seed, err)


def test_ctc_gradient_wrt_logprobs_is_minus_occupancy():
    # dL/dlp[t,k] = -(posterior mass of label k at frame t); rows sum to -1
    rng = np.random.default_rng(3)
    lp = Tensor(log_softmax(Tensor(rng.normal(size=(6, 4)))).data, requires_grad=True)
    ctc_log_likelihood(lp, [1, 2]).backward()
    np.testing.assert_allclose(lp.grad.sum(axis=1), -1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_ctc_ignores_permutation_of_absent_symbols(seed):
    rng = np.random.default_rng(seed)
    lp = log_softmax(Tensor(rng.normal(size=(5, 6)))).data
    target = [1, 2]
    perm = np.arange(6)
    perm[3:] = rng.permutation(perm[3:])
    a = ctc_log_likelihood(Tensor(lp), target).item()
    b = ctc_log_likelihood(Tensor(lp[:, perm]), target).item()
    assert a == pytest.approx(b, abs=1e-12)


# -- cross-entropy and hybrid -------------------------------------------------------


def test_cross_entropy_reference_values():
    logits = np.full((3, 41), 0.0)
    assert cross_entropy(Tensor(logits), [0, 5, 40]).item() == pytest.approx(math.log(41), abs=1e-14)
    confident = np.full((2, 41), -50.0)
    confident[0, 3] = confident[1, 7] = 50.0
    assert cross_entropy(Tensor(confident), [3, 7]).item() < 1e-40
    with pytest.raises(LengthMismatch):
        cross_entropy(Tensor(logits), [0, 1])


def test_cross_entropy_smoothing_direct_formula():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(4, 7))
    targets = [0, 6, 2, 2]
    s = 0.2
    logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    nll = -logp[np.arange(4), targets]
    expected = np.mean((1 - s) * nll + s * (-logp.mean(1)))
    assert cross_entropy(Tensor(logits), targets, s).item() == pytest.approx(expected, abs=1e-14)


def test_cross_entropy_gradient():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        assert grad_check(lambda a: cross_entropy(a, [1, 4, 0], 0.1), [x]) <= 1e-5


def test_hybrid_examples_and_errors():
    ce, ctc = Tensor(2.0), Tensor(4.0)
    assert hybrid_loss(ce, ctc, HybridLossConfig(0.5)).item() == 3.0
    assert hybrid_loss(ce, ctc, HybridLossConfig(1.0)).item() == 2.0
    assert hybrid_loss(ce, ctc, HybridLossConfig(0.0)).item() == 4.0
    with pytest.raises(AlphaOutOfRange):
        HybridLossConfig(1.5)
    with pytest.raises(ValueError):
        HybridLossConfig(0.5, label_smoothing=1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 20), st.floats(0, 20))
def test_hybrid_is_affine_in_alpha(alpha, ce, ctc):
    got = hybrid_loss(Tensor(ce), Tensor(ctc), HybridLossConfig(alpha)).item()
    assert got == pytest.approx(ctc + alpha * (ce - ctc), abs=1e-12)
