import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roigan import functional as F
from roigan.gradcheck import max_relative_error, numerical_gradient
from roigan.losses import (
    LossConfig, gan_loss_discriminator, gan_loss_generator, l1_loss, mse_loss, total_loss,
)
from roigan.tensor import Tensor

T = lambda v: Tensor(np.asarray(v, dtype=np.float64))
probs = arrays(np.float64, st.integers(1, 8), elements=st.floats(0.01, 0.99))
vals = arrays(np.float64, 6, elements=st.floats(-10, 10))


def test_l1_examples(f64):
    assert l1_loss(T([1.0, -2.0]), T([0.0, 0.0]), beta=1.0).item() == pytest.approx(1.5, abs=1e-15)
    for n in (1, 7, 100):
        assert l1_loss(T(np.ones(n)), T(np.zeros(n))).item() == pytest.approx(5e-6, rel=1e-12)
    assert l1_loss(T([3.0, 4.0]), T([3.0, 4.0])).item() == 0.0


def test_mse_examples_and_gradient(f64):
    assert mse_loss(T([1.0, 3.0]), T([0.0, 1.0])).item() == pytest.approx(2.5, abs=1e-15)
    rng = np.random.default_rng(0)
    xv, y = rng.standard_normal(10), rng.standard_normal(10)
    x = Tensor(xv.copy(), requires_grad=True)
    mse_loss(x, T(y)).backward()
    np.testing.assert_allclose(x.grad, 2 * (xv - y) / 10, rtol=1e-12)
    num = numerical_gradient(lambda: mse_loss(Tensor(xv), T(y)).item(), [xv])[0]
    assert max_relative_error(x.grad, num) < 1e-6


def test_gan_examples(f64):
    half = T([0.5, 0.5, 0.5])
    assert gan_loss_discriminator(half, half).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert gan_loss_generator(half).item() == pytest.approx(math.log(2), abs=1e-12)
    assert gan_loss_discriminator(T([1 - 1e-12]), T([1e-12])).item() < 1e-10
    assert gan_loss_generator(T([1.0])).item() == 0.0


def test_saturating_flag(f64):
    assert gan_loss_generator(T([0.5]), saturating=True).item() == pytest.approx(math.log(0.5))


def test_log_clamp_keeps_finite(f64):
    assert math.isfinite(gan_loss_discriminator(T([0.0]), T([1.0])).item())
    assert math.isfinite(gan_loss_generator(T([0.0])).item())


def test_total_examples(f64):
    cfg = LossConfig(lam=5e-3, use_gan=True, use_l1=True)
    assert total_loss(T(1.0), T(2.0), T(0.5), cfg).item() == pytest.approx(1.51, abs=1e-15)
    plain = LossConfig(beta=0, lam=0, use_gan=True, use_l1=True)
    assert total_loss(T(0.7), T(3.0), T(0.0), plain).item() == pytest.approx(0.7)
    off = LossConfig()
    assert total_loss(T(0.7), T(3.0), T(9.0), off).item() == pytest.approx(0.7)


@pytest.mark.parametrize("use_gan,use_l1", [(False, False), (True, False), (False, True), (True, True)])
def test_total_drops_disabled_terms(f64, use_gan, use_l1):
    cfg = LossConfig(lam=0.5, use_gan=use_gan, use_l1=use_l1)
    got = total_loss(T(1.0), T(2.0), T(3.0), cfg).item()
    assert got == 1.0 + use_gan * 1.0 + use_l1 * 3.0


def test_total_gradient_is_sum_of_components(f64):
    rng = np.random.default_rng(1)
    yv = rng.random(12)
    dv = rng.uniform(0.1, 0.9, 4)
    cfg = LossConfig(lam=5e-3, beta=0.3, use_gan=True, use_l1=True)

    def grads(which):
        x = Tensor(rng_x.copy(), requires_grad=True)
        d = Tensor(dv.copy(), requires_grad=True)
        m, g, l = mse_loss(x, T(yv)), gan_loss_generator(d), l1_loss(x, T(yv), cfg.beta)
        parts = {"mse": m, "gan": F.scale(g, cfg.lam), "l1": l, "total": total_loss(m, g, l, cfg)}
        parts[which].backward()
        return (np.zeros(12) if x.grad is None else x.grad), (np.zeros(4) if d.grad is None else d.grad)

    rng_x = rng.random(12)
    total = grads("total")
    summed = [sum(grads(k)[i] for k in ("mse", "gan", "l1")) for i in (0, 1)]
    np.testing.assert_allclose(total[0], summed[0], rtol=1e-12)
    np.testing.assert_allclose(total[1], summed[1], rtol=1e-12)


def test_shape_errors():
    with pytest.raises(ValueError, match="shape"):
        l1_loss(T([1.0, 2.0]), T([1.0]))
    with pytest.raises(ValueError, match="shape"):
        mse_loss(T(np.zeros((2, 2))), T(np.zeros(4)))


@pytest.mark.parametrize("bad", [[1.5], [-0.1]])
def test_probabilities_out_of_range(bad):
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        gan_loss_discriminator(T(bad), T([0.5]))
    with pytest.raises(ValueError):
        gan_loss_generator(T(bad))


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossConfig(beta=-1.0)
    with pytest.raises(ValueError):
        LossConfig(lam=-1e-3)


# -- properties ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(vals, vals, st.floats(0, 10))
def test_nonnegative_and_zero_iff_equal(x, y, beta):
    m = mse_loss(T(x), T(y)).item()
    l = l1_loss(T(x), T(y), beta).item()
    assert m >= 0 and l >= 0
    assert (m == 0) == np.array_equal(x, y) or m < 1e-300
    assert mse_loss(T(x), T(x)).item() == 0 and l1_loss(T(x), T(x), beta).item() == 0


@settings(max_examples=60, deadline=None)
@given(probs, st.data())
def test_gan_nonnegative_and_permutation_invariant(real, data):
    fake = data.draw(arrays(np.float64, real.shape, elements=st.floats(0.01, 0.99)))
    perm = data.draw(st.permutations(range(real.size)))
    dl = gan_loss_discriminator(T(real), T(fake)).item()
    assert dl >= 0 and gan_loss_generator(T(fake)).item() >= 0
    assert gan_loss_discriminator(T(real[perm]), T(fake[perm])).item() == pytest.approx(dl, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(probs, st.data())
def test_generator_loss_monotone_decreasing(fake, data):
    i = data.draw(st.integers(0, fake.size - 1))
    bumped = fake.copy()
    bumped[i] = min(bumped[i] + 0.005, 0.999)
    assert gan_loss_generator(T(bumped)).item() < gan_loss_generator(T(fake)).item()


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0, 1))
def test_total_linear(m, g, l, lam):
    cfg = LossConfig(lam=lam, use_gan=True, use_l1=True)
    assert total_loss(T(m), T(g), T(l), cfg).item() == pytest.approx(m + lam * g + l, rel=1e-12, abs=1e-12)
