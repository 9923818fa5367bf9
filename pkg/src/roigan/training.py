"""Supervised, adversarial and ROI-GAN training loops.

ROI-GAN couples a *global* generator (full image) and a *local* generator
(ground-truth bounding-box crops) that share their first decoder blocks.
One iteration runs three steps in order: local generator update, global
generator update (seeing the freshly updated shared weights), then the
discriminator update. The adversarial term enters the generator losses once
the discriminator has been trained at least once.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint, load_checkpoint, rng_from_json, rng_state_to_json, save_checkpoint
from .data import Dataset, MaskStack, SliceStack, resize_nearest, roi_stream
from .losses import LossConfig, as_float, gan_loss_discriminator, gan_loss_generator, l1_loss, mse_loss, total_loss
from .metrics import dice
from .networks import (
    DiscriminatorSpec, Generator, GeneratorSpec, SharingSpec, are_linked, build_discriminator, build_generator,
    link_shared_parameters,
)
from .optim import Adam
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

VARIANTS = ("plain", "gan", "roigan_a", "roigan_b", "roigan_c")
DISC_MODES = {"roigan_a": "single", "roigan_b": "independent", "roigan_c": "shared"}
HISTORY_HEADER = ["epoch", "train_mse", "train_gan_g", "train_gan_d", "train_l1", "val_dice_mean"]
VARIANT_A_RESIZE_NOTE = (
    "variant A feeds ROI masks to the full-size discriminator: ground truth resized nearest-neighbour, "
    "generator output resized bilinearly"
)


@dataclass
class TrainConfig:
    variant: str = "plain"
    generator_kind: str = "fcnn"
    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 10
    batch_stacks: int = 1
    seed: int = 0
    image_size: tuple[int, int] = (64, 64)
    roi_size: tuple[int, int] = (64, 64)
    roi_margin: int = 4
    block_widths: tuple[int, ...] = (64, 128, 256, 512, 512, 512)
    disc_widths: tuple[int, ...] = (64, 128, 256, 512, 512)
    noise_dropout_p: float = 0.5
    noise: str = "bernoulli"
    gru_kernel: int = 3
    conditional_discriminator: bool = False
    generator_shared_layers: tuple[int, ...] = (1, 2, 3)
    discriminator_shared_layers: tuple[int, ...] = (1, 2, 3)
    local_adversarial: bool = True  # local generator also gets the GAN term once D has trained

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.generator_kind not in ("fcnn", "rfcnn"):
            raise ValueError(f"unknown generator kind {self.generator_kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_stacks < 1:
            raise ValueError("batch_stacks must be at least 1")
        for name in ("image_size", "roi_size"):
            h, w = getattr(self, name)
            if h % 64 or w % 64 or h <= 0 or w <= 0:
                raise ValueError(f"{name} {(h, w)} must be divisible by 64")
        if self.variant == "plain" and self.loss.use_gan:
            raise ValueError("variant 'plain' has no discriminator; set use_gan false")

    @property
    def adversarial(self) -> bool:
        return self.variant != "plain"

    @property
    def is_roigan(self) -> bool:
        return self.variant.startswith("roigan")

    def generator_spec(self, size: tuple[int, int]) -> GeneratorSpec:
        return GeneratorSpec(
            tuple(size), 1, tuple(self.block_widths), self.generator_kind == "rfcnn",
            self.noise_dropout_p, self.noise, self.gru_kernel,
        )

    def discriminator_spec(self, size: tuple[int, int]) -> DiscriminatorSpec:
        return DiscriminatorSpec(tuple(size), 2 if self.conditional_discriminator else 1, tuple(self.disc_widths))

    def sharing_spec(self) -> SharingSpec:
        return SharingSpec(
            frozenset(self.generator_shared_layers),
            DISC_MODES.get(self.variant, "single"),
            frozenset(self.discriminator_shared_layers),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossConfig(**d["loss"])
        for k in ("image_size", "roi_size", "block_widths", "disc_widths", "generator_shared_layers",
                  "discriminator_shared_layers"):
            d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Batch:
    images: np.ndarray  # (N, 1, H, W)
    masks: np.ndarray  # (N, 1, H, W) float {0, 1}
    lengths: list[int]

    def tensors(self) -> tuple[Tensor, Tensor]:
        return Tensor(self.images), Tensor(self.masks)


def make_batch(pairs: Sequence[tuple[SliceStack, MaskStack]], dtype=np.float32) -> Batch:
    imgs = np.concatenate([s.slices for s, _ in pairs]).astype(dtype)
    msks = np.concatenate([m.masks for _, m in pairs]).astype(dtype)
    return Batch(imgs, msks, [s.slices.shape[0] for s, _ in pairs])


def make_roi_batch(pairs, target, margin: int = 4, dtype=np.float32) -> Optional[Batch]:
    """ROI crops of every non-empty slice; empty slices stay out of the local stream."""
    imgs, msks, lengths = [], [], []
    for stack, mask in pairs:
        crops = roi_stream(stack, mask, target, margin)
        if crops is None:
            continue
        imgs.append(crops[0])
        msks.append(crops[1])
        lengths.append(len(crops[2]))
    if not lengths:
        return None
    return Batch(np.concatenate(imgs).astype(dtype), np.concatenate(msks).astype(dtype), lengths)


@dataclass
class Optimizers:
    gen: Adam
    disc: Optional[Adam] = None
    d_steps: int = 0  # discriminator updates so far; gates the generators' adversarial term


def _disc_input(mask: Tensor, image: Optional[Tensor], conditional: bool) -> Tensor:
    return F.concat_channels(mask, image) if conditional else mask


def _supervised_terms(fake: Tensor, target: Tensor, cfg: LossConfig):
    mse = mse_loss(fake, target)
    l1 = l1_loss(fake, target, cfg.beta)
    return mse, l1


def _discriminator_update(disc_pairs, opt: Optimizers) -> float:
    """One discriminator step on summed losses of (disc, real, fake) triples."""
    opt.disc.zero_grad()
    total = None
    for disc, real, fake in disc_pairs:
        d_loss = gan_loss_discriminator(disc(real), disc(fake))
        total = d_loss if total is None else F.add(total, d_loss)
    total.backward()
    opt.disc.step()
    opt.disc.zero_grad()
    opt.d_steps += 1
    return as_float(total)


def _generator_update(gen_loss: Tensor, opt: Optimizers) -> None:
    opt.gen.zero_grad()
    gen_loss.backward()
    opt.gen.step()
    opt.gen.zero_grad()
    if opt.disc is not None:
        opt.disc.zero_grad()


def train_step_gan(gen: Generator, disc, batch: Batch, cfg: TrainConfig, opt: Optimizers, d_first: bool = True) -> dict:
    """One iteration of (optionally adversarial) training of a single generator.

    With ``disc`` given: discriminator update on detached fakes, then the
    generator update on MSE + lambda*GAN + L1. ``d_first=False`` swaps the two.
    Without ``disc`` this is plain supervised descent.
    """
    gen.train()
    x, y = batch.tensors()
    fake = gen(x, lengths=batch.lengths)
    out = {"d_loss": 0.0}
    conditional = cfg.conditional_discriminator
    adversarial = disc is not None
    if adversarial:
        disc.train()
        d_real, d_fake_in = _disc_input(y, x, conditional), _disc_input(fake.detach(), x, conditional)
    if adversarial and d_first:
        out["d_loss"] = _discriminator_update([(disc, d_real, d_fake_in)], opt)
    mse, l1 = _supervised_terms(fake, y, cfg.loss)
    if adversarial and opt.d_steps > 0:
        gan_g = gan_loss_generator(disc(_disc_input(fake, x, conditional)), cfg.loss.saturating_generator)
    else:
        gan_g = Tensor(np.zeros((), dtype=fake.dtype))
    _generator_update(total_loss(mse, gan_g, l1, cfg.loss), opt)
    if adversarial and not d_first:
        out["d_loss"] = _discriminator_update([(disc, d_real, d_fake_in)], opt)
    out.update(g_mse=as_float(mse), g_gan=as_float(gan_g), g_l1=as_float(l1))
    return out


def train_step_roigan(
    local_gen: Generator,
    global_gen: Generator,
    discs: Sequence,
    batch_full: Batch,
    batch_roi: Optional[Batch],
    cfg: TrainConfig,
    opt: Optimizers,
) -> dict:
    """One three-step ROI-GAN iteration.

    ``discs`` is ``[D]`` for variant A, ``[D_global, D_local]`` for B and C.
    ``batch_roi=None`` disables the local stream.
    """
    if not are_linked(local_gen, global_gen, cfg.generator_shared_layers):
        raise ValueError("local and global generators are not linked on the declared shared layers")
    n_disc = 1 if cfg.variant == "roigan_a" else 2
    if len(discs) != n_disc:
        raise ValueError(f"variant {cfg.variant} needs {n_disc} discriminator(s), got {len(discs)}")
    if cfg.variant == "roigan_c" and not are_linked(discs[0], discs[1], cfg.discriminator_shared_layers):
        raise ValueError("variant roigan_c needs discriminators linked on the declared shared layers")
    d_global = discs[0]
    d_local = discs[0] if n_disc == 1 else discs[1]
    full_size = tuple(batch_full.images.shape[-2:])
    conditional = cfg.conditional_discriminator
    adversarial_ready = opt.d_steps > 0

    def local_view(t: Tensor) -> Tensor:
        # variant A judges both streams with one full-size discriminator
        if n_disc == 1 and tuple(t.shape[-2:]) != full_size:
            return F.resize_bilinear(t, full_size)
        return t

    def local_view_np(a: np.ndarray, nearest: bool) -> np.ndarray:
        if n_disc == 1 and tuple(a.shape[-2:]) != full_size:
            return resize_nearest(a, full_size) if nearest else F.resize_bilinear(Tensor(a), full_size).data
        return a

    for d in discs:
        d.train()
    out = {}
    disc_terms = []

    # step 1: local generator on ROI crops
    if batch_roi is not None:
        local_gen.train()
        xl, yl = batch_roi.tensors()
        fake_l = local_gen(xl, lengths=batch_roi.lengths)
        mse_l, l1_l = _supervised_terms(fake_l, yl, cfg.loss)
        xl_d = Tensor(local_view_np(batch_roi.images, nearest=False))
        if adversarial_ready and cfg.local_adversarial:
            gan_l = gan_loss_generator(
                d_local(_disc_input(local_view(fake_l), xl_d, conditional)), cfg.loss.saturating_generator
            )
        else:
            gan_l = Tensor(np.zeros((), dtype=fake_l.dtype))
        _generator_update(total_loss(mse_l, gan_l, l1_l, cfg.loss), opt)
        out.update(local_mse=as_float(mse_l), local_gan=as_float(gan_l), local_l1=as_float(l1_l))
        real_l = Tensor(local_view_np(batch_roi.masks, nearest=True))
        fake_l_d = Tensor(local_view_np(fake_l.data, nearest=False))
        disc_terms.append((d_local, _disc_input(real_l, xl_d, conditional), _disc_input(fake_l_d, xl_d, conditional)))

    # step 2: global generator, already carrying the updated shared decoder weights
    global_gen.train()
    x, y = batch_full.tensors()
    fake_g = global_gen(x, lengths=batch_full.lengths)
    mse_g, l1_g = _supervised_terms(fake_g, y, cfg.loss)
    if adversarial_ready:
        gan_g = gan_loss_generator(d_global(_disc_input(fake_g, x, conditional)), cfg.loss.saturating_generator)
    else:
        gan_g = Tensor(np.zeros((), dtype=fake_g.dtype))
    _generator_update(total_loss(mse_g, gan_g, l1_g, cfg.loss), opt)
    disc_terms.insert(0, (d_global, _disc_input(y, x, conditional), _disc_input(fake_g.detach(), x, conditional)))

    # step 3: discriminator(s)
    out["d_loss"] = _discriminator_update(disc_terms, opt)
    out.update(g_mse=as_float(mse_g), g_gan=as_float(gan_g), g_l1=as_float(l1_g))
    return out


# -- orchestration ------------------------------------------------------------

class Trainer:
    """Owns the networks, optimizers and RNG of one training run."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.epoch = 0
        self.global_gen = build_generator(cfg.generator_spec(cfg.image_size), self.rng)
        self.local_gen: Optional[Generator] = None
        self.discs: list = []
        gen_params = list(self.global_gen.named_parameters("global_gen."))
        if cfg.is_roigan:
            self.local_gen = build_generator(cfg.generator_spec(cfg.roi_size), self.rng)
            sharing = cfg.sharing_spec()
            link_shared_parameters(self.global_gen, self.local_gen, sharing)
            gen_params += list(self.local_gen.named_parameters("local_gen."))
            self.discs.append(build_discriminator(cfg.discriminator_spec(cfg.image_size), self.rng))
            if cfg.variant != "roigan_a":
                self.discs.append(build_discriminator(cfg.discriminator_spec(cfg.roi_size), self.rng))
                if cfg.variant == "roigan_c":
                    link_shared_parameters(self.discs[0], self.discs[1], sharing)
        elif cfg.adversarial:
            self.discs.append(build_discriminator(cfg.discriminator_spec(cfg.image_size), self.rng))
        disc_params = [kv for i, d in enumerate(self.discs) for kv in d.named_parameters(f"disc.{i}.")]
        kw = dict(lr=cfg.learning_rate, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
        self.opt = Optimizers(Adam(gen_params, **kw), Adam(disc_params, **kw) if disc_params else None)
        self.set_rng(self.rng)

    def set_rng(self, rng: np.random.Generator) -> None:
        self.rng = rng
        for g in self.generators().values():
            g.set_rng(rng)

    def generators(self) -> dict[str, Generator]:
        out = {"global_gen": self.global_gen}
        if self.local_gen is not None:
            out["local_gen"] = self.local_gen
        return out

    def networks(self) -> dict:
        nets = dict(self.generators())
        for i, d in enumerate(self.discs):
            nets[f"disc.{i}"] = d
        return nets

    def step(self, pairs: Sequence[tuple[SliceStack, MaskStack]]) -> dict:
        batch = make_batch(pairs)
        if self.cfg.is_roigan:
            roi = make_roi_batch(pairs, self.cfg.roi_size, self.cfg.roi_margin)
            return train_step_roigan(self.local_gen, self.global_gen, self.discs, batch, roi, self.cfg, self.opt)
        return train_step_gan(self.global_gen, self.discs[0] if self.discs else None, batch, self.cfg, self.opt)

    def train_epoch(self, pairs: Sequence[tuple[SliceStack, MaskStack]]) -> dict:
        order = self.rng.permutation(len(pairs))
        bs = self.cfg.batch_stacks
        sums = {"train_mse": 0.0, "train_gan_g": 0.0, "train_gan_d": 0.0, "train_l1": 0.0}
        n = 0
        for start in range(0, len(order), bs):
            losses = self.step([pairs[i] for i in order[start : start + bs]])
            sums["train_mse"] += losses["g_mse"]
            sums["train_gan_g"] += losses["g_gan"]
            sums["train_gan_d"] += losses["d_loss"]
            sums["train_l1"] += losses["g_l1"]
            n += 1
        self.epoch += 1
        return {k: v / max(n, 1) for k, v in sums.items()}

    # -- persistence ----------------------------------------------------------
    def to_checkpoint(self) -> Checkpoint:
        ck = Checkpoint()
        for net_name, net in self.networks().items():
            for name, arr in net.state_dict().items():
                ck.params[f"{net_name}.{name}"] = arr.copy()
        for opt_name, opt in (("gen", self.opt.gen), ("disc", self.opt.disc)):
            if opt is None:
                continue
            for name, st in opt.state.items():
                ck.optimizer[f"{opt_name}.{name}.m"] = st.m.copy()
                ck.optimizer[f"{opt_name}.{name}.v"] = st.v.copy()
                ck.optimizer[f"{opt_name}.{name}.step"] = np.array(st.step, dtype=np.int64)
        ck.set_meta_json("config", self.cfg.to_dict())
        ck.set_meta_json("rng", rng_state_to_json(self.rng))
        ck.meta["epoch"] = np.array(self.epoch, dtype=np.int64)
        ck.meta["d_steps"] = np.array(self.opt.d_steps, dtype=np.int64)
        return ck

    def load_checkpoint(self, ck: Checkpoint) -> None:
        for net_name, net in self.networks().items():
            prefix = f"{net_name}."
            net.load_state_dict({k[len(prefix):]: v for k, v in ck.params.items() if k.startswith(prefix)})
        for opt_name, opt in (("gen", self.opt.gen), ("disc", self.opt.disc)):
            if opt is None:
                continue
            for name, st in opt.state.items():
                key = f"{opt_name}.{name}"
                if f"{key}.m" not in ck.optimizer:
                    raise KeyError(f"checkpoint lacks optimizer state for {key!r}")
                m, v = ck.optimizer[f"{key}.m"], ck.optimizer[f"{key}.v"]
                if m.shape != st.m.shape:
                    raise ValueError(f"optimizer state {key!r}: shape {m.shape} != {st.m.shape}")
                st.m[...] = m
                st.v[...] = v
                st.step = int(ck.optimizer[f"{key}.step"])
        self.epoch = int(ck.meta["epoch"])
        self.opt.d_steps = int(ck.meta["d_steps"])
        self.set_rng(rng_from_json(ck.meta_json("rng")))

    def save(self, path) -> None:
        save_checkpoint(path, self.to_checkpoint())

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        ck = load_checkpoint(path)
        trainer = cls(TrainConfig.from_dict(ck.meta_json("config")))
        trainer.load_checkpoint(ck)
        return trainer


def predict_probabilities(gen: Generator, stack: SliceStack) -> np.ndarray:
    gen.eval()
    with no_grad():
        x = Tensor(stack.slices.astype(gen.head.weight.dtype))
        return gen(x, lengths=[x.shape[0]]).data


def predict_masks(gen: Generator, stack: SliceStack, threshold: float = 0.5) -> np.ndarray:
    return (predict_probabilities(gen, stack) >= threshold).astype(np.uint8)


def mean_dice(gen: Generator, pairs: Sequence[tuple[SliceStack, MaskStack]]) -> float:
    scores = []
    for stack, mask in pairs:
        pred = predict_masks(gen, stack)
        scores.extend(dice(pred[s], mask.masks[s]) for s in range(pred.shape[0]))
    return float(np.mean(scores))


def fit(
    dataset: Dataset,
    cfg: TrainConfig,
    out_dir=None,
    trainer: Optional[Trainer] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> list[dict]:
    """Train for ``cfg.epochs`` epochs over the train split, validating each epoch.

    With ``out_dir`` writes ``history.csv``, ``best.ckpt`` (best validation Dice)
    and ``last.ckpt``. Pass ``trainer`` to resume.
    """
    train_pairs = dataset.pairs("train")
    val_pairs = dataset.pairs("val")
    if not train_pairs:
        raise ValueError("empty training split")
    if not val_pairs:
        raise ValueError("empty validation split")
    if trainer is None:
        trainer = Trainer(cfg)
    elif dataclasses.replace(trainer.cfg, epochs=cfg.epochs) != cfg:
        raise ValueError("resumed trainer was built with a different config")
    trainer.cfg = cfg  # only the epoch budget may change on resume
    out = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if trainer.epoch > 0 and (out / "history.csv").exists():
            history = [r for r in read_history(out / "history.csv") if r["epoch"] <= trainer.epoch]
    best = max((r["val_dice_mean"] for r in history), default=-1.0)
    for _ in range(trainer.epoch, cfg.epochs):
        row = trainer.train_epoch(train_pairs)
        row["val_dice_mean"] = mean_dice(trainer.global_gen, val_pairs)
        row["epoch"] = trainer.epoch
        history.append(row)
        log.info("epoch %d: %s", trainer.epoch, row)
        if on_epoch is not None:
            on_epoch(row)
        if out is not None:
            write_history(history, out / "history.csv")
            if row["val_dice_mean"] > best:
                best = row["val_dice_mean"]
                trainer.save(out / "best.ckpt")
            trainer.save(out / "last.ckpt")
    return history


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_HEADER)
        for row in history:
            w.writerow([row["epoch"]] + [f"{row[k]:.8g}" for k in HISTORY_HEADER[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]
