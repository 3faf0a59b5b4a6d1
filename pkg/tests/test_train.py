import numpy as np
import pytest

from strwkv.model import ModelConfig
from strwkv.train import AdamState, adam_step, clip_by_global_norm, toy_pair, train_toy


def test_adam_zero_gradient():
    p = {"a": np.array([1.0, -2.0])}
    out = adam_step(p, {"a": np.zeros(2)}, AdamState(lr=0.1))
    assert np.array_equal(out["a"], p["a"])


def test_adam_first_step_is_lr_sized():
    p = {"a": np.zeros(3)}
    g = np.array([0.5, -3.0, 1e-3])
    out = adam_step(p, {"a": g}, AdamState(lr=0.01))
    assert np.allclose(out["a"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_two_steps_hand_unrolled():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    g = 2.0
    m1, v1 = (1 - b1) * g, (1 - b2) * g * g
    x1 = 1.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2, v2 = b1 * m1 + (1 - b1) * g, b2 * v1 + (1 - b2) * g * g
    x2 = x1 - lr * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
    state = AdamState(lr=lr)
    p = {"x": np.array([1.0])}
    p = adam_step(p, {"x": np.array([g])}, state)
    assert p["x"][0] == pytest.approx(x1, rel=1e-14)
    p = adam_step(p, {"x": np.array([g])}, state)
    assert p["x"][0] == pytest.approx(x2, rel=1e-14)
    with pytest.raises(ValueError):
        adam_step(p, {"x": np.zeros(2)}, state)


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert np.allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same["a"] is grads["a"]


@pytest.fixture(scope="module")
def pair16():
    return toy_pair(16)


def test_zero_steps_and_determinism(pair16):
    c, s = pair16
    r0 = train_toy(ModelConfig.tiny(), c, s, 0)
    assert len(r0.curve) == 1
    a = train_toy(ModelConfig.tiny(), c, s, 3, seed=4).curve
    b = train_toy(ModelConfig.tiny(), c, s, 3, seed=4).curve
    assert a == b and len(a) == 4


def test_zero_lr_is_constant(pair16):
    c, s = pair16
    r = train_toy(ModelConfig.tiny(), c, s, 2, lr=0.0)
    assert r.curve[0] == r.curve[1] == r.curve[2]
    init = train_toy(ModelConfig.tiny(), c, s, 0).model.params
    assert all(np.array_equal(init[k], v) for k, v in r.model.params.items())


def test_rejections(pair16):
    c, s = pair16
    with pytest.raises(ValueError):
        train_toy(ModelConfig.tiny(), np.zeros((3, 80, 80)), np.zeros((3, 80, 80)), 1)
    bad = c.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        train_toy(ModelConfig.tiny(), bad, s, 1)


def test_toy_pair():
    c, s = toy_pair(32)
    assert c.shape == s.shape == (3, 32, 32)
    assert c.min() >= 0 and c.max() <= 1 and s.min() >= 0 and s.max() <= 1
    c2, s2 = toy_pair(32)
    assert np.array_equal(c, c2) and np.array_equal(s, s2)
