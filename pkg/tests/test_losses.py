import itertools

import numpy as np
import pytest

import oracles
from descatter import autodiff as ad
from descatter import losses
from descatter.autodiff import Tensor
from descatter.errors import ShapeMismatch


def soft_probs(rng, C, N, separation=0.0):
    """Random softmax columns; optional minimum spacing between the error
    values keeps finite differences away from sort ties."""
    while True:
        logits = rng.standard_normal((C, N)) * 2
        p = np.exp(logits)
        p /= p.sum(axis=0, keepdims=True)
        if separation == 0.0:
            return p
        errs = np.concatenate([p[c] for c in range(C)])
        if np.abs(np.subtract.outer(errs, errs)
                  [~np.eye(len(errs), dtype=bool)]).min() > separation:
            return p


def test_ce_perfect_prediction():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = np.array([0, 1])
    loss = losses.cross_entropy(Tensor(p), t)
    assert loss.item() <= 1e-10 + 2 * -np.log(1.0)
    # the floor keeps the zero-probability column finite
    assert np.isfinite(loss.item())


def test_ce_uniform_two_class():
    p = np.full((2, 10), 0.5)
    t = np.zeros(10, np.int64)
    loss = losses.cross_entropy(Tensor(p), t)
    np.testing.assert_allclose(loss.item(), np.log(2.0), atol=1e-12)


def test_ce_matches_scalar_loop():
    rng = np.random.default_rng(0)
    p = soft_probs(rng, 3, 40)
    t = rng.integers(0, 3, size=40)
    w = np.array([0.3, 1.0, 2.0])
    loss = losses.cross_entropy(Tensor(p), t, class_weights=w)
    expect = sum(w[t[i]] * -np.log(max(p[t[i], i], 1e-12))
                 for i in range(40)) / sum(w[t[i]] for i in range(40))
    np.testing.assert_allclose(loss.item(), expect, rtol=1e-12)


def test_ce_gradcheck():
    rng = np.random.default_rng(1)
    p = Tensor(soft_probs(rng, 2, 12), requires_grad=True)
    t = rng.integers(0, 2, size=12)
    assert ad.grad_error(lambda: losses.cross_entropy(p, t), [p]) < 1e-4


def test_ce_shape_checks():
    with pytest.raises(ShapeMismatch):
        losses.cross_entropy(Tensor(np.zeros((2, 3))), np.zeros(4, int))
    with pytest.raises(ShapeMismatch):
        losses.cross_entropy(Tensor(np.zeros((2, 3))),
                             np.array([0, 1, 2]))


def test_lovasz_perfect_hard_predictions_zero():
    p = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    t = np.array([0, 1, 0])
    assert losses.lovasz_softmax(Tensor(p), t).item() == 0.0


def test_lovasz_hard_labels_equal_jaccard_loss():
    # every hard instance of length <= 4: extension == 1 - J_c per class
    for n in range(1, 5):
        for t in itertools.product((0, 1), repeat=n):
            for x in itertools.product((0, 1), repeat=n):
                t_arr = np.array(t)
                x_arr = np.array(x)
                probs = np.stack([1.0 - x_arr, x_arr]).astype(float)
                got = losses.lovasz_softmax(Tensor(probs), t_arr).item()
                present = sorted(set(t))
                expect = np.mean([
                    oracles.jaccard_set_loss(
                        {i for i in range(n) if t[i] == c},
                        {i for i in range(n) if x[i] == c}, n)
                    for c in present])
                np.testing.assert_allclose(got, expect, atol=1e-10)


def test_lovasz_matches_extension_oracle_on_soft_inputs():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        p = soft_probs(rng, 2, n)
        t = rng.integers(0, 2, size=n)
        got = losses.lovasz_softmax(Tensor(p), t).item()
        present = sorted(set(t.tolist()))
        parts = []
        for c in present:
            errors = np.where(t == c, 1.0 - p[c], p[c])
            parts.append(oracles.lovasz_extension(errors, t == c))
        np.testing.assert_allclose(got, np.mean(parts), atol=1e-12)


def test_lovasz_nonnegative_on_random_instances():
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 30))
        p = soft_probs(rng, 2, n)
        t = rng.integers(0, 2, size=n)
        assert losses.lovasz_softmax(Tensor(p), t).item() >= -1e-12


def test_lovasz_permutation_invariant():
    rng = np.random.default_rng(4)
    p = soft_probs(rng, 2, 20)
    t = rng.integers(0, 2, size=20)
    base = losses.lovasz_softmax(Tensor(p), t).item()
    for _ in range(5):
        perm = rng.permutation(20)
        got = losses.lovasz_softmax(Tensor(p[:, perm]), t[perm]).item()
        np.testing.assert_allclose(got, base, atol=1e-12)


def test_lovasz_gradcheck():
    rng = np.random.default_rng(5)
    for seed in range(5):
        p = Tensor(soft_probs(np.random.default_rng(seed), 2, 8,
                              separation=1e-3), requires_grad=True)
        t = rng.integers(0, 2, size=8)
        assert ad.grad_error(lambda: losses.lovasz_softmax(p, t),
                             [p]) < 1e-4


def test_total_loss_is_sum_of_parts():
    rng = np.random.default_rng(6)
    p = soft_probs(rng, 2, 25)
    t = rng.integers(0, 2, size=25)
    total = losses.total_loss(Tensor(p), t).item()
    parts = (losses.lovasz_softmax(Tensor(p), t).item()
             + losses.cross_entropy(Tensor(p), t).item())
    assert total == parts


def test_total_loss_perfect_is_small():
    t = np.array([0, 1, 1, 0])
    p = np.stack([1.0 - t, t]).astype(float)
    assert losses.total_loss(Tensor(p), t).item() < 1e-6


def test_total_loss_gradcheck():
    rng = np.random.default_rng(7)
    p = Tensor(soft_probs(rng, 2, 10, separation=1e-3), requires_grad=True)
    t = rng.integers(0, 2, size=10)
    assert ad.grad_error(lambda: losses.total_loss(p, t), [p]) < 1e-4
