import dataclasses

import numpy as np
import pytest

from roigan.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from roigan.checks import sharing_run, tiny_train_config
from roigan.data import FormatError, make_phantom_dataset
from roigan.losses import LossConfig
from roigan.networks import DiscriminatorSpec, SharingSpec, build_discriminator, build_generator, link_shared_parameters
from roigan.optim import Adam
from roigan.training import (
    HISTORY_HEADER, Optimizers, TrainConfig, Trainer, fit, make_batch, make_roi_batch, read_history, train_step_gan,
    train_step_roigan,
)


def _snapshot(net):
    return {k: v.copy() for k, v in net.state_dict().items()}


def _same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def _params_equal(a, b):
    pa, pb = dict(a.named_parameters()), dict(b.named_parameters())
    return all(np.array_equal(pa[k].data, pb[k].data) for k in pa)


# -- config -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(learning_rate=0.0), dict(epochs=0), dict(variant="bogus"), dict(roi_size=(32, 32)),
    dict(generator_kind="unet"), dict(variant="plain", loss=LossConfig(use_gan=True)),
])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_config_dict_round_trip():
    cfg = tiny_train_config("roigan_c", "rfcnn")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("use_gan,use_l1", [(False, False), (False, True), (True, False), (True, True)])
def test_every_ablation_row_expressible(use_gan, use_l1):
    variant = "gan" if use_gan else "plain"
    cfg = TrainConfig(variant=variant, loss=LossConfig(use_gan=use_gan, use_l1=use_l1))
    assert cfg.loss.use_gan == use_gan and cfg.loss.use_l1 == use_l1


# -- single-generator steps ----------------------------------------------------

def _gan_parts(seed=0, lam=5e-3, beta=5e-6):
    cfg = dataclasses.replace(tiny_train_config("gan", seed=seed), loss=LossConfig(beta, lam, True, True))
    t = Trainer(cfg)
    return cfg, t.global_gen, t.discs[0], t.opt


def test_zero_weights_reduce_to_mse_descent(small_dataset):
    pair = small_dataset.pairs("train")[:1]
    batch = make_batch(pair)
    cfg, gen, disc, opt = _gan_parts(lam=0.0, beta=0.0)
    plain_cfg = dataclasses.replace(cfg, variant="plain", loss=LossConfig(0.0, 0.0))
    plain = Trainer(plain_cfg)
    plain.global_gen.load_state_dict(_snapshot(gen))
    plain.set_rng(np.random.default_rng(1))
    for g in (gen,):
        g.set_rng(np.random.default_rng(1))
    for _ in range(3):
        a = train_step_gan(gen, disc, batch, cfg, opt)
        b = train_step_gan(plain.global_gen, None, batch, plain_cfg, plain.opt)
        assert a["g_mse"] == b["g_mse"]
    assert a["g_gan"] > 0  # reported, unused
    assert _params_equal(gen, plain.global_gen)


def test_step_isolation(small_dataset):
    batch = make_batch(small_dataset.pairs("train")[:1])
    cfg, gen, disc, opt = _gan_parts()
    train_step_gan(gen, disc, batch, cfg, opt)  # so the GAN term is live

    d_before, g_before = _snapshot(disc), _snapshot(gen)
    # D sub-step alone
    from roigan.training import _discriminator_update, _generator_update
    x, y = batch.tensors()
    fake = gen(x, lengths=batch.lengths).detach()
    _discriminator_update([(disc, y, fake)], opt)
    assert all(np.array_equal(v, g_before[k]) for k, v in gen.state_dict().items() if "running" not in k)
    assert not _same(d_before, _snapshot(disc))

    # G sub-step alone: D parameters untouched even though the GAN term backprops through D
    from roigan.losses import gan_loss_generator
    d_params = {k: p.data.copy() for k, p in disc.named_parameters()}
    _generator_update(gan_loss_generator(disc(gen(x, lengths=batch.lengths))), opt)
    assert all(np.array_equal(p.data, d_params[k]) for k, p in disc.named_parameters())


def test_toy_mse_decreases():
    # one 128x128 slice: the smallest single-sample input whose bottleneck has 2x2 values for batch-norm
    ds = make_phantom_dataset(3, (128, 128), 8, seed=9)
    stack, mask = ds.pairs("train")[0]
    pair = [(dataclasses.replace(stack, slices=stack.slices[4:5]), dataclasses.replace(mask, masks=mask.masks[4:5]))]
    cfg = dataclasses.replace(tiny_train_config("gan", seed=2), image_size=(128, 128), learning_rate=2e-3)
    t = Trainer(cfg)
    mses = [t.step(pair)["g_mse"] for _ in range(50)]
    assert all(np.isfinite(mses))
    assert np.mean(mses[-5:]) < 0.5 * np.mean(mses[:5])


# -- ROI-GAN ------------------------------------------------------------------

def test_variant_a_without_roi_matches_gan_step(small_dataset, f64):
    batch = make_batch(small_dataset.pairs("train")[:1], dtype=np.float64)
    cfg = tiny_train_config("roigan_a")
    gan_cfg = dataclasses.replace(cfg, variant="gan")
    rng = np.random.default_rng(0)
    spec = cfg.generator_spec(cfg.image_size)
    g1 = build_generator(spec, rng)
    d1 = build_discriminator(cfg.discriminator_spec(cfg.image_size), rng)
    local = build_generator(spec, rng)
    g2 = build_generator(spec, np.random.default_rng(5))
    d2 = build_discriminator(cfg.discriminator_spec(cfg.image_size), np.random.default_rng(5))
    g2.load_state_dict(_snapshot(g1))
    d2.load_state_dict(_snapshot(d1))
    link_shared_parameters(g2, local, cfg.sharing_spec())
    opt1 = Optimizers(Adam(list(g1.named_parameters())), Adam(list(d1.named_parameters())))
    opt2 = Optimizers(
        Adam(list(g2.named_parameters("g.")) + list(local.named_parameters("l."))), Adam(list(d2.named_parameters()))
    )
    g1.set_rng(np.random.default_rng(7))
    g2.set_rng(np.random.default_rng(7))
    for _ in range(3):
        a = train_step_gan(g1, d1, batch, gan_cfg, opt1, d_first=False)
        b = train_step_roigan(local, g2, [d2], batch, None, cfg, opt2)
        for k in ("d_loss", "g_mse", "g_gan", "g_l1"):
            assert abs(a[k] - b[k]) < 1e-6, k
    assert a["g_gan"] > 0


def test_roigan_errors(small_dataset):
    pairs = small_dataset.pairs("train")[:1]
    batch = make_batch(pairs)
    t = Trainer(tiny_train_config("roigan_b"))
    roi = make_roi_batch(pairs, t.cfg.roi_size)
    with pytest.raises(ValueError, match="discriminator"):
        train_step_roigan(t.local_gen, t.global_gen, t.discs[:1], batch, roi, t.cfg, t.opt)
    stranger = build_generator(t.cfg.generator_spec(t.cfg.roi_size), np.random.default_rng(3))
    with pytest.raises(ValueError, match="not linked"):
        train_step_roigan(stranger, t.global_gen, t.discs, batch, roi, t.cfg, t.opt)
    c = Trainer(tiny_train_config("roigan_c"))
    unlinked = [c.discs[0], build_discriminator(c.cfg.discriminator_spec(c.cfg.roi_size), np.random.default_rng(1))]
    with pytest.raises(ValueError, match="roigan_c"):
        train_step_roigan(c.local_gen, c.global_gen, unlinked, batch, roi, c.cfg, c.opt)


@pytest.mark.parametrize("variant", ["roigan_a", "roigan_b", "roigan_c"])
def test_shared_parameters_equal_after_steps(variant):
    r = sharing_run(variant, steps=5)
    assert r["shared_equal"] and r["n_shared"] > 0


def test_variant_b_discriminators_independent():
    t = Trainer(tiny_train_config("roigan_b"))
    before = _snapshot(t.discs[0])
    for p in t.discs[1].parameters():
        p.data += 1.0
    assert _same(before, _snapshot(t.discs[0]))


def test_variant_c_discriminators_share_first_three():
    t = Trainer(tiny_train_config("roigan_c"))
    t.discs[1].convs[0].weight.data[...] = 0.25
    assert (t.discs[0].convs[0].weight.data == 0.25).all()
    assert not np.array_equal(t.discs[0].convs[3].weight.data, t.discs[1].convs[3].weight.data)


def test_local_adversarial_flag(small_dataset):
    pairs = small_dataset.pairs("train")[:1]
    for flag in (True, False):
        t = Trainer(dataclasses.replace(tiny_train_config("roigan_b"), local_adversarial=flag))
        first = t.step(pairs)
        second = t.step(pairs)
        assert first["local_gan"] == 0.0  # D has not trained yet
        assert (second["local_gan"] > 0) == flag
        assert second["g_gan"] > 0


def test_empty_roi_stream_skipped(small_dataset):
    stack, mask = small_dataset.pairs("train")[0]
    empty = mask.__class__(mask.id, np.zeros_like(mask.masks))
    assert make_roi_batch([(stack, empty)], (64, 64)) is None
    t = Trainer(tiny_train_config("roigan_a"))
    out = t.step([(stack, empty)])
    assert "local_mse" not in out and np.isfinite(out["d_loss"])


# -- fit, history, checkpoints -------------------------------------------------

def test_fit_one_epoch_two_stacks(tmp_path):
    ds = make_phantom_dataset(3, (64, 64), 8, seed=1)
    ids = list(ds.manifest.train)
    ds.manifest.train[:], ds.manifest.val[:] = ids[:2], ids[2:]
    hist = fit(ds, tiny_train_config("gan"), tmp_path)
    assert len(hist) == 1
    rows = read_history(tmp_path / "history.csv")
    assert list(rows[0]) == HISTORY_HEADER and rows[0]["epoch"] == 1
    assert all(np.isfinite(v) for v in rows[0].values())
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()


def test_fit_empty_split():
    ds = make_phantom_dataset(3, (64, 64), 8, seed=1)
    ds.manifest.val.clear()
    with pytest.raises(ValueError, match="validation"):
        fit(ds, tiny_train_config("plain"))


def test_fit_deterministic(tmp_path, small_dataset):
    cfg = tiny_train_config("roigan_c", epochs=2)
    fit(small_dataset, cfg, tmp_path / "a")
    fit(small_dataset, cfg, tmp_path / "b")
    assert (tmp_path / "a/history.csv").read_bytes() == (tmp_path / "b/history.csv").read_bytes()
    assert (tmp_path / "a/last.ckpt").read_bytes() == (tmp_path / "b/last.ckpt").read_bytes()


def test_plain_val_dice_improves_over_ten_epochs():
    ds = make_phantom_dataset(12, (64, 64), 8, seed=4)
    cfg = TrainConfig(epochs=10, block_widths=(8, 8, 16, 16, 16, 16), learning_rate=1e-3)
    hist = fit(ds, cfg)
    assert hist[-1]["val_dice_mean"] > hist[0]["val_dice_mean"]


def test_checkpoint_round_trip(tmp_path, small_dataset):
    t = Trainer(tiny_train_config("roigan_c", "rfcnn"))
    t.step(small_dataset.pairs("train")[:1])
    t.save(tmp_path / "a.ckpt")
    back = Trainer.from_checkpoint(tmp_path / "a.ckpt")
    for name, net in t.networks().items():
        assert _same(_snapshot(net), _snapshot(back.networks()[name])), name
    assert back.opt.d_steps == t.opt.d_steps and back.epoch == t.epoch
    assert back.rng.bit_generator.state == t.rng.bit_generator.state
    back.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes()[:8] == MAGIC


@pytest.mark.parametrize("variant", ["gan", "roigan_b"])
def test_resume_matches_continuous(tmp_path, small_dataset, variant):
    pairs = small_dataset.pairs("train")
    cont = Trainer(tiny_train_config(variant))
    for i in range(2):
        cont.step(pairs[i : i + 1])
    cont.save(tmp_path / "mid.ckpt")
    resumed = Trainer.from_checkpoint(tmp_path / "mid.ckpt")
    for i in range(2, 5):
        a, b = cont.step(pairs[i : i + 1]), resumed.step(pairs[i : i + 1])
        assert a == b
    for name, net in cont.networks().items():
        assert _same(_snapshot(net), _snapshot(resumed.networks()[name])), name


def test_fit_resume_history_matches(tmp_path, small_dataset):
    cfg = tiny_train_config("gan", epochs=3)
    fit(small_dataset, cfg, tmp_path / "full")
    fit(small_dataset, dataclasses.replace(cfg, epochs=2), tmp_path / "part")
    t = Trainer.from_checkpoint(tmp_path / "part/last.ckpt")
    fit(small_dataset, cfg, tmp_path / "part", trainer=t)
    assert (tmp_path / "full/history.csv").read_bytes() == (tmp_path / "part/history.csv").read_bytes()
    assert (tmp_path / "full/last.ckpt").read_bytes() == (tmp_path / "part/last.ckpt").read_bytes()


def test_corrupt_magic_rejected(tmp_path):
    Trainer(tiny_train_config("plain")).save(tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[:8] = b"NOTACKPT"
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(tmp_path / "a.ckpt")


def test_version_mismatch_rejected(tmp_path):
    Trainer(tiny_train_config("plain")).save(tmp_path / "a.ckpt")
    raw = bytearray((tmp_path / "a.ckpt").read_bytes())
    raw[8:12] = (99).to_bytes(4, "little")
    (tmp_path / "a.ckpt").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version 99"):
        load_checkpoint(tmp_path / "a.ckpt")


def test_truncated_checkpoint_rejected(tmp_path):
    Trainer(tiny_train_config("plain")).save(tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "a.ckpt").write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="truncated") as e:
        load_checkpoint(tmp_path / "a.ckpt")
    assert e.value.offset is not None


def test_shape_mismatch_names_first_entry(tmp_path):
    t = Trainer(tiny_train_config("plain"))
    ck = t.to_checkpoint()
    first = next(k for k in ck.params if k.startswith("global_gen."))
    ck.params[first] = np.zeros((1, 2, 3), np.float32)
    save_checkpoint(tmp_path / "a.ckpt", ck)
    fresh = Trainer(tiny_train_config("plain"))
    with pytest.raises(ValueError, match=first.split(".", 1)[1].replace(".", r"\.")):
        fresh.load_checkpoint(load_checkpoint(tmp_path / "a.ckpt"))
