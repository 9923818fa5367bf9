import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roigan import functional as F
from roigan.checks import _gru_cell, gradcheck_module, gru_candidate_oracle
from roigan.losses import mse_loss
from roigan.networks import (
    ConvGRUCell, DiscriminatorSpec, GeneratorSpec, SharingSpec, are_linked, build_discriminator, build_generator,
    conv_gru_step, discriminator_forward, fcnn_forward, generator_parameter_count, link_shared_parameters,
    rfcnn_forward,
)
from roigan.tensor import Tensor, no_grad

SMALL = (4, 4, 8, 8, 8, 8)


def small_gen(seed=0, recurrent=False, size=(64, 64), widths=SMALL, p=0.0):
    return build_generator(GeneratorSpec(size, 1, widths, recurrent, noise_dropout_p=p), np.random.default_rng(seed))


def run(gen, x, **kw):
    with no_grad():
        return gen(Tensor(x), **kw).data


# -- generator ----------------------------------------------------------------

@pytest.fixture(scope="module")
def big_generator():
    return small_gen(size=(256, 256), widths=(64, 128, 256, 512, 512, 512))


def test_256_bottleneck_is_4x4(big_generator):
    x = np.random.default_rng(0).random((1, 1, 256, 256)).astype(np.float32)
    big_generator.eval()
    with no_grad():
        feats = big_generator.encode(Tensor(x))
    assert feats[-1].shape == (1, 512, 4, 4)


def test_256_forward_shape_and_range(big_generator):
    x = np.random.default_rng(1).random((1, 1, 256, 256)).astype(np.float32)
    with no_grad():
        y = fcnn_forward(big_generator, Tensor(x), "eval").data
    assert y.shape == (1, 1, 256, 256)
    assert ((y > 0) & (y < 1)).all()


def _closed_form_count(widths, k=4, gru=False, gru_k=3):
    w = list(widths)
    blk = lambda cin, cout: k * k * cin * cout + cout + 2 * cout
    total = sum(blk(a, b) for a, b in zip([1] + w[:-1], w))
    dec_out = [w[4], w[3], w[2], w[1], w[0], w[0]]
    dec_in = [w[5], dec_out[0] + w[4], dec_out[1] + w[3], dec_out[2] + w[2], dec_out[3] + w[1], dec_out[4] + w[0]]
    total += sum(blk(a, b) for a, b in zip(dec_in, dec_out))
    total += 3 * 3 * w[0] * 1 + 1  # head
    if gru:
        d = w[-1]
        total += 3 * (gru_k * gru_k * d * d + gru_k * gru_k * d * d + d)
    return total


@pytest.mark.parametrize("widths,recurrent", [((64, 128, 256, 512, 512, 512), False), (SMALL, True), ((3, 5, 7, 9, 11, 13), False)])
def test_parameter_count_closed_form(widths, recurrent):
    spec = GeneratorSpec((64, 64), 1, widths, recurrent)
    assert generator_parameter_count(spec) == _closed_form_count(widths, gru=recurrent)


def test_indivisible_size_rejected():
    with pytest.raises(ValueError, match="divisible"):
        small_gen(size=(96, 64))


def test_wrong_width_count_rejected():
    with pytest.raises(ValueError):
        small_gen(widths=(4, 4, 4))


@settings(max_examples=5, deadline=None)
@given(h=st.sampled_from([64, 128]), w=st.sampled_from([64, 128]))
def test_output_size_round_trip(h, w):
    gen = small_gen(size=(h, w), widths=(2, 2, 2, 2, 2, 2))
    gen.eval()
    assert run(gen, np.zeros((1, 1, h, w), np.float32)).shape == (1, 1, h, w)


def test_fcnn_slice_independence_and_determinism():
    gen = small_gen()
    gen.eval()
    x = np.random.default_rng(2).random((4, 1, 64, 64)).astype(np.float32)
    a = run(gen, x)
    perm = [2, 0, 3, 1]
    np.testing.assert_allclose(run(gen, x[perm]), a[perm], rtol=0, atol=1e-6)
    np.testing.assert_array_equal(run(gen, x), a)
    assert ((a > 0) & (a < 1)).all()


@pytest.mark.parametrize("i", [1, 2, 3, 4, 5])
def test_skip_ablation_changes_output(i, f64):
    # deep skips move the output by ~1e-12 at the 0.02 init, so float64
    gen = small_gen(seed=4)
    gen.eval()
    x = np.random.default_rng(3).random((1, 1, 64, 64))
    assert not np.array_equal(run(gen, x), run(gen, x, ablate_skips=[i]))


def test_decoder_noise_only_in_training():
    gen = small_gen(p=0.5)
    x = np.random.default_rng(0).random((2, 1, 64, 64)).astype(np.float32)
    gen.eval()
    np.testing.assert_array_equal(run(gen, x), run(gen, x))
    gen.train()
    assert not np.array_equal(run(gen, x), run(gen, x))


# -- ConvGRU ------------------------------------------------------------------

def _gru_inputs(rng, c=2, d=3, hw=6):
    return rng.standard_normal((1, c, hw, hw)), rng.standard_normal((1, d, hw, hw))


def test_gru_update_gate_open_gives_candidate(f64):
    rng = np.random.default_rng(0)
    cell = _gru_cell(rng, 2, 3, scale=0.02)
    cell.b_z.data[...] = 20.0
    x, h = _gru_inputs(rng)
    out = conv_gru_step(cell, Tensor(x), Tensor(h)).data[0]
    np.testing.assert_allclose(out, gru_candidate_oracle(cell, x[0], h[0]), rtol=0, atol=1e-6)


def test_gru_update_gate_closed_keeps_memory(f64):
    rng = np.random.default_rng(1)
    cell = _gru_cell(rng, 2, 3, scale=0.02)
    cell.b_z.data[...] = -20.0
    x, h = _gru_inputs(rng)
    out = conv_gru_step(cell, Tensor(x), Tensor(h)).data
    assert np.abs(out - h).max() < 1e-8


def test_gru_matches_equations(f64):
    rng = np.random.default_rng(2)
    cell = _gru_cell(rng, 2, 3)
    x, h = _gru_inputs(rng)
    sig = lambda v: 1 / (1 + np.exp(-v))
    from roigan.checks import _conv_same_oracle as conv
    z = sig(conv(h[0], cell.W_hz.data) + conv(x[0], cell.W_xz.data) + cell.b_z.data[:, None, None])
    expect = (1 - z) * h[0] + z * gru_candidate_oracle(cell, x[0], h[0])
    np.testing.assert_allclose(conv_gru_step(cell, Tensor(x), Tensor(h)).data[0], expect, atol=1e-12)


def test_gru_nine_parameter_groups():
    names = [n for n, _ in ConvGRUCell(2, 3).named_parameters()]
    assert sorted(names) == sorted(["W_hr", "W_xr", "b_r", "W_hz", "W_xz", "b_z", "W_h", "W_x", "b"])


@pytest.mark.parametrize("k", [3, 8])
def test_gru_hidden_shape_preserved(k):
    rng = np.random.default_rng(3)
    cell = _gru_cell(rng, 2, 3, k=k)
    x = Tensor(rng.standard_normal((1, 2, 4, 4)).astype(np.float32))
    h = cell.initial_state(x)
    for _ in range(3):
        h = conv_gru_step(cell, x, h)
    assert h.shape == (1, 3, 4, 4)


def test_gru_shape_mismatch():
    cell = ConvGRUCell(2, 3)
    with pytest.raises(ValueError):
        conv_gru_step(cell, Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 5, 5))))


def test_gru_five_step_gradcheck(f64):
    rng = np.random.default_rng(4)
    cell = _gru_cell(rng, 2, 3)
    xs = Tensor(rng.standard_normal((5, 1, 2, 5, 5)))
    w = rng.standard_normal((1, 3, 5, 5))

    def loss():
        h = cell.initial_state(xs[0])
        for s in range(5):
            h = conv_gru_step(cell, xs[s], h)
        return F.sum(F.hadamard(h, Tensor(w)))

    err, _ = gradcheck_module(cell, loss)
    assert err < 1e-3


# -- R-FCNN -------------------------------------------------------------------

def test_rfcnn_single_slice_is_gru_from_zero(f64):
    gen = small_gen(seed=5, recurrent=True)
    gen.eval()
    x = Tensor(np.random.default_rng(5).random((1, 1, 64, 64)))
    with no_grad():
        feats = gen.encode(x)
        h = conv_gru_step(gen.gru, feats[-1], Tensor(np.zeros(feats[-1].shape)))
        manual = gen.decode(h, feats).data
        auto = rfcnn_forward(gen, x).data
    np.testing.assert_array_equal(auto, manual)


def test_rfcnn_causality_and_forward_flow(f64):
    gen = small_gen(seed=6, recurrent=True)
    gen.eval()
    rng = np.random.default_rng(6)
    x = rng.random((6, 1, 64, 64))
    base = run(gen, x)
    for s in range(5):
        bumped = x.copy()
        bumped[s + 1:] = rng.random(bumped[s + 1:].shape)
        np.testing.assert_array_equal(run(gen, bumped)[: s + 1], base[: s + 1])
    first = x.copy()
    first[0] = rng.random(first[0].shape)
    assert not np.array_equal(run(gen, first)[-1], base[-1])


def test_rfcnn_lengths_reset_state(f64):
    gen = small_gen(seed=7, recurrent=True)
    gen.eval()
    rng = np.random.default_rng(7)
    a, b = rng.random((3, 1, 64, 64)), rng.random((4, 1, 64, 64))
    joint = run(gen, np.concatenate([a, b]), lengths=[3, 4])
    np.testing.assert_allclose(joint[3:], run(gen, b), atol=1e-12)
    with pytest.raises(ValueError):
        run(gen, np.concatenate([a, b]), lengths=[3, 3])


def test_rfcnn_rejects_empty_and_plain():
    with pytest.raises(ValueError):
        rfcnn_forward(small_gen(recurrent=True), Tensor(np.zeros((0, 1, 64, 64))))
    with pytest.raises(ValueError):
        rfcnn_forward(small_gen(recurrent=False), Tensor(np.zeros((1, 1, 64, 64))))


# -- discriminator ------------------------------------------------------------

def small_disc(seed=0, size=(64, 64)):
    return build_discriminator(DiscriminatorSpec(size, 1, (4, 4, 8, 8, 8)), np.random.default_rng(seed))


def test_discriminator_range_shape_and_order():
    d = small_disc()
    d.eval()
    x = np.random.default_rng(0).random((5, 1, 64, 64)).astype(np.float32)
    with no_grad():
        out = discriminator_forward(d, Tensor(x)).data
        single = [discriminator_forward(d, Tensor(x[i : i + 1])).data[0] for i in range(5)]
    assert out.shape == (5,)
    assert ((out > 0) & (out < 1)).all()
    np.testing.assert_allclose(out, single, rtol=1e-6)


def test_discriminator_gradient_reaches_input():
    d = small_disc(1)
    x = Tensor(np.random.default_rng(1).random((2, 1, 64, 64)).astype(np.float32), requires_grad=True)
    F.sum(discriminator_forward(d, x)).backward()
    assert np.linalg.norm(x.grad) > 0


# -- sharing ------------------------------------------------------------------

def test_sharing_aliases_storage():
    a, b = small_gen(0), small_gen(1)
    paths = link_shared_parameters(a, b, SharingSpec())
    assert paths and all(p.startswith(("decoder.0.", "decoder.1.", "decoder.2.")) for p in paths)
    a.decoder[1].deconv.weight.data[0, 0, 0, 0] = 0.5
    assert b.decoder[1].deconv.weight.data[0, 0, 0, 0] == 0.5
    assert are_linked(a, b, {1, 2, 3}) and are_linked(b, a, {1, 2, 3})
    assert not are_linked(a, b, {4})


def test_shared_gradients_sum_over_networks(f64):
    a, b = small_gen(0), small_gen(1)
    link_shared_parameters(a, b, SharingSpec(generator_shared_layers={1}))
    shared = a.decoder[0].deconv.weight
    x = Tensor(np.random.default_rng(0).random((2, 1, 64, 64)))
    y = Tensor(np.zeros((2, 1, 64, 64)))
    a.train(), b.train()
    mse_loss(a(x), y).backward()
    ga = shared.grad.copy()
    shared.grad = None
    mse_loss(b(x), y).backward()
    gb = shared.grad.copy()
    shared.grad = None
    mse_loss(a(x), y).backward()
    mse_loss(b(x), y).backward()
    np.testing.assert_allclose(shared.grad, ga + gb, rtol=1e-12)


def test_one_parameter_two_path_sum(f64):
    # toy: loss_a = 3w, loss_b = w^2 at w = 2 -> 3 + 4
    a, b = small_gen(0), small_gen(1)
    link_shared_parameters(a, b, SharingSpec(generator_shared_layers={2}))
    wa = a.decoder[1].bn.beta
    wb = b.decoder[1].bn.beta
    wa.data[...] = 2.0
    F.scale(F.sum(wa), 3.0).backward()
    F.sum(F.square(wb)).backward()
    np.testing.assert_allclose(wa.grad, 3.0 + 4.0)


def test_unshared_layers_independent():
    a, b = small_gen(0), small_gen(1)
    link_shared_parameters(a, b, SharingSpec())
    before = b.decoder[3].deconv.weight.data.copy()
    a.decoder[3].deconv.weight.data += 1.0
    np.testing.assert_array_equal(b.decoder[3].deconv.weight.data, before)
    assert a.decoder[3].bn.running_mean is not b.decoder[3].bn.running_mean


def test_sharing_shape_mismatch_names_layer():
    a = small_gen(0, widths=(4, 4, 8, 8, 8, 8))
    b = small_gen(1, widths=(4, 4, 8, 8, 16, 8))
    with pytest.raises(ValueError, match="decoder.0.deconv"):
        link_shared_parameters(a, b, SharingSpec())


def test_discriminator_sharing_needs_shared_mode():
    a, b = small_disc(0), small_disc(1)
    with pytest.raises(ValueError):
        link_shared_parameters(a, b, SharingSpec(discriminator_mode="independent"))
    paths = link_shared_parameters(a, b, SharingSpec(discriminator_mode="shared"))
    assert {p.split(".")[1] for p in paths} == {"0", "1", "2"}


def test_shared_layer_index_out_of_range():
    with pytest.raises(ValueError):
        link_shared_parameters(small_gen(0), small_gen(1), SharingSpec(generator_shared_layers={7}))


# -- init ---------------------------------------------------------------------

def test_init_deterministic_and_statistics():
    a, b = small_gen(11), small_gen(11)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    big = build_generator(GeneratorSpec((64, 64), 1, (64, 128, 256, 512, 512, 512)), np.random.default_rng(0))
    w = big.encoder[1].conv.weight.data  # 131072 draws
    assert w.size >= 10_000
    assert abs(float(w[:10_000].mean())) < 3 * 0.02 / 100
    assert float(w.std()) == pytest.approx(0.02, rel=0.02)
    for name, p in big.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("bias", "beta"):
            assert not p.data.any(), name
        if leaf == "gamma":
            assert abs(float(p.data.mean()) - 1.0) < 0.01
