import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tradeopt.optimizer import AdamHyper, AdamState, adam_step, clip_gradient, project

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_clip_examples():
    assert np.allclose(clip_gradient([3.0, 4.0], 1.0), [0.6, 0.8])
    assert np.array_equal(clip_gradient([0.3, 0.4], 1.0), [0.3, 0.4])
    assert np.array_equal(clip_gradient([0.0, 0.0], 1.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        clip_gradient([1.0], 0.0)


@given(arrays(float, st.integers(1, 8), elements=finite), st.floats(1e-3, 1e3))
def test_clip_bounds_norm_and_preserves_direction(g, c):
    out = clip_gradient(g, c)
    assert np.linalg.norm(out) <= c * (1 + 1e-12)
    n = np.linalg.norm(g)
    if n <= c:
        assert np.array_equal(out, g)
    else:
        assert np.allclose(out / np.linalg.norm(out), g / n)


def test_first_step_moments_equal_gradient():
    g = np.array([0.5, -2.0, 3.0])
    s = AdamState.zeros(3)
    _, s1 = adam_step(s, g, np.zeros(3))
    h = s.hyper
    assert s1.t == 1
    assert np.max(np.abs(s1.m / (1 - h.beta1) - g)) < 1e-15
    assert np.max(np.abs(s1.v / (1 - h.beta2) - g * g)) < 1e-15


def test_first_step_is_signed_lr():
    h = AdamHyper(lr=0.1, eps=0.0)
    p, _ = adam_step(AdamState.zeros(3, h), np.array([2.0, -0.5, 7.0]), np.ones(3))
    assert np.allclose(p, [1.1, 0.9, 1.1], atol=1e-15)


def test_zero_moment_decay_gives_sign_step():
    h = AdamHyper(lr=0.25, beta1=0.0, beta2=0.0, eps=0.0)
    s = AdamState.zeros(2, h)
    p = np.zeros(2)
    for g in ([1.0, -3.0], [-0.01, 5.0], [4.0, -1e-6]):
        q, s = adam_step(s, np.array(g), p)
        assert np.array_equal(q - p, 0.25 * np.sign(g))
        p = q


def test_zero_gradient_leaves_params():
    p = np.array([0.1, 0.2])
    q, s = adam_step(AdamState.zeros(2), np.zeros(2), p)
    assert np.array_equal(q, p) and s.t == 1


def test_lr_override():
    s = AdamState.zeros(1, AdamHyper(lr=1.0, eps=0.0))
    q, _ = adam_step(s, np.array([1.0]), np.zeros(1), lr=0.01)
    assert q[0] == pytest.approx(0.01)


def test_concave_quadratic_converges():
    target = np.array([0.3, -1.2, 2.0, 0.0])
    s = AdamState.zeros(4, AdamHyper(lr=0.02))
    p = np.zeros(4)
    for _ in range(1000):
        p, s = adam_step(s, clip_gradient(-2 * (p - target), 10.0), p)
    assert np.max(np.abs(p - target)) < 1e-6


@given(arrays(float, 5, elements=finite), st.permutations(range(5)))
def test_permutation_equivariance(g, perm):
    perm = np.array(perm)
    p0 = np.linspace(-1, 1, 5)
    s = AdamState.zeros(5)
    a, sa = adam_step(s, g, p0)
    b, sb = adam_step(s, g[perm], p0[perm])
    assert np.array_equal(a[perm], b)
    assert np.array_equal(sa.v[perm], sb.v)


def test_step_rejects_bad_gradient():
    s = AdamState.zeros(2)
    with pytest.raises(ValueError):
        adam_step(s, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        adam_step(s, np.array([np.nan, 0.0]), np.zeros(2))


def test_hyper_validation():
    for kw in ({"lr": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": -1.0}, {"max_grad_norm": 0.0}):
        with pytest.raises(ValueError):
            AdamHyper(**kw)


def test_projection_examples():
    assert np.array_equal(project([-0.2, 0.5, 7.0], 0.0, 5.0), [0.0, 0.5, 5.0])
    assert np.array_equal(project([0.0, -2.0], [-1.0, -0.99], [1.0, 0.99]), [0.0, -0.99])
    with pytest.raises(ValueError):
        project([0.0], 1.0, 0.0)


@given(arrays(float, st.integers(1, 6), elements=finite))
def test_projection_is_idempotent_and_inside(x):
    lo, hi = -0.99, 5.0
    y = project(x, lo, hi)
    assert np.all((y >= lo) & (y <= hi))
    assert np.array_equal(project(y, lo, hi), y)
    inside = (x >= lo) & (x <= hi)
    assert np.array_equal(y[inside], x[inside])
