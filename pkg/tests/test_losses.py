import numpy as np
import pytest

from strwkv import autodiff as ad
from strwkv.gradcheck import max_rel_error, numeric_grad
from strwkv.losses import (IdentityFeatures, LossWeights, TinyFeatureNet, artfid, content_loss, identity_losses,
                           make_extractor, style_loss, total_loss)

ID = IdentityFeatures()


def test_content_loss(rng):
    a, b = rng.uniform(0, 1, (2, 3, 8, 8))
    fe = TinyFeatureNet()
    assert content_loss(a, a, fe) == 0.0
    assert content_loss(a, b, fe) == pytest.approx(content_loss(b, a, fe), rel=1e-12)
    one_hot = np.zeros((3, 4, 4))
    one_hot[1, 2, 3] = 1.0
    assert content_loss(a[:, :4, :4] + one_hot, a[:, :4, :4], ID) == pytest.approx(1 / np.sqrt(48), rel=1e-12)


def test_style_loss(rng):
    s = rng.uniform(0, 1, (3, 6, 6))
    assert style_loss(s, s, TinyFeatureNet()) == 0.0
    shift = np.array([0.3, -0.1, 0.2])
    expected = np.sqrt(np.mean(shift ** 2))  # RMS of the mean difference, std term exactly zero
    assert style_loss(s + shift[:, None, None], s, ID) == pytest.approx(expected, rel=1e-9)
    out = rng.uniform(0, 1, (3, 6, 6))
    perm = rng.permutation(36)
    shuffled = out.reshape(3, 36)[:, perm].reshape(3, 6, 6)
    assert style_loss(shuffled, s, ID) == pytest.approx(style_loss(out, s, ID), rel=1e-12)


def test_identity_losses(rng):
    c, s = rng.uniform(0, 1, (2, 3, 4, 4))
    assert identity_losses(c, c, s, s, TinyFeatureNet()) == (0.0, 0.0)
    eps = 0.25
    off = c.copy()
    off[0, 1, 1] += eps
    l1, l2 = identity_losses(off, c, s, s, ID)
    assert l1 == pytest.approx(eps / np.sqrt(48), rel=1e-12)
    assert l2 == pytest.approx(l1 / ID.n_layers, rel=1e-12)


def test_total_loss():
    assert total_loss((1.0, 1.0, 1.0, 1.0)) == 124.0
    assert total_loss((0.0, 0.0, 0.0, 0.0)) == 0.0
    assert total_loss((1.0, 0.0, 0.0, 0.0), LossWeights(2, 0, 0, 0)) == 2.0
    with pytest.raises(FloatingPointError):
        total_loss((np.nan, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_total_loss_gradient_wrt_pixels(rng):
    fe = TinyFeatureNet()
    c, s, ic, is_ = rng.uniform(0, 1, (4, 3, 8, 8))
    out = rng.uniform(0, 1, (3, 8, 8))

    def loss(o, icc):
        parts = (content_loss(o, c, fe), style_loss(o, s, fe), *identity_losses(icc, c, is_, s, fe))
        return total_loss(parts)

    tape = ad.Tape()
    ov, iv = tape.var(out), tape.var(ic)
    go, gi = tape.grad(loss(ov, iv), [ov, iv])
    assert max_rel_error(go, numeric_grad(lambda: float(loss(out, ic)), out)) <= 1e-4
    assert max_rel_error(gi, numeric_grad(lambda: float(loss(out, ic)), ic)) <= 1e-4


def test_artfid():
    assert artfid(0.0, 0.0) == 1.0
    assert abs(artfid(16.362, 0.451) - 25.193) <= 1e-3
    assert artfid(16.362, 0.451) < 26.370
    assert artfid(2.0, 0.5) < artfid(2.1, 0.5) and artfid(2.0, 0.5) < artfid(2.0, 0.6)
    assert artfid(3.0, 0.7) == artfid(0.7, 3.0)
    with pytest.raises(ValueError):
        artfid(-1.0, 0.1)


def test_extractors():
    feats = TinyFeatureNet()(np.zeros((3, 16, 16)))
    assert [f.shape for f in feats] == [(8, 8, 8), (16, 4, 4), (32, 2, 2), (64, 1, 1)]
    a, b = TinyFeatureNet(), TinyFeatureNet()
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(a.weights, b.weights))
    assert isinstance(make_extractor("identity"), IdentityFeatures)
    with pytest.raises(ValueError):
        make_extractor("vgg19")
