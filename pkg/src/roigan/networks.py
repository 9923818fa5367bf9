"""Segmentation generators, the convolutional GRU, discriminators and weight sharing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .layers import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, init_parameters, set_parameter
from .tensor import Parameter, Tensor, get_default_dtype

N_BLOCKS = 6
DEFAULT_WIDTHS = (64, 128, 256, 512, 512, 512)


@dataclass
class GeneratorSpec:
    input_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    block_widths: tuple[int, ...] = DEFAULT_WIDTHS
    recurrent: bool = False
    noise_dropout_p: float = 0.5
    noise: str = "bernoulli"  # or "gaussian"
    gru_kernel: int = 3

    def validate(self) -> None:
        if len(self.block_widths) != N_BLOCKS:
            raise ValueError(f"need exactly {N_BLOCKS} block widths, got {len(self.block_widths)}")
        h, w = self.input_size
        if h % 2**N_BLOCKS or w % 2**N_BLOCKS:
            raise ValueError(f"input size {self.input_size} must be divisible by {2**N_BLOCKS}")
        if not 0 <= self.noise_dropout_p < 1:
            raise ValueError(f"noise_dropout_p must be in [0, 1), got {self.noise_dropout_p}")


@dataclass
class DiscriminatorSpec:
    input_size: tuple[int, int] = (64, 64)
    in_channels: int = 1
    widths: tuple[int, ...] = (64, 128, 256, 512, 512)


@dataclass
class SharingSpec:
    """Which layers two generators (and, in mode ``shared``, two discriminators) share.

    ``discriminator_mode``: ``single`` (ROI-GAN-A), ``independent`` (B) or ``shared`` (C).
    Layer indices are 1-based.
    """

    generator_shared_layers: frozenset = field(default_factory=lambda: frozenset({1, 2, 3}))
    discriminator_mode: str = "single"
    discriminator_shared_layers: frozenset = field(default_factory=lambda: frozenset({1, 2, 3}))

    def __post_init__(self):
        if self.discriminator_mode not in ("single", "independent", "shared"):
            raise ValueError(f"unknown discriminator mode {self.discriminator_mode!r}")
        self.generator_shared_layers = frozenset(self.generator_shared_layers)
        self.discriminator_shared_layers = frozenset(self.discriminator_shared_layers)


class EncoderBlock(Module):
    """conv (stride 2) -> BN -> ReLU"""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel=4, stride=2, padding=1)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class DecoderBlock(Module):
    """transposed conv (stride 2) -> BN -> LeakyReLU(0.2) [-> noise]"""

    def __init__(self, in_ch: int, out_ch: int, noise_p: float = 0.0, noise: str = "bernoulli"):
        super().__init__()
        self.deconv = ConvTranspose2d(in_ch, out_ch, kernel=4, stride=2, padding=1)
        self.bn = BatchNorm2d(out_ch)
        self.noise_p = noise_p
        self.noise = noise
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x):
        y = F.leaky_relu(self.bn(self.deconv(x)), 0.2)
        if self.noise_p > 0 and self.training:
            if self.rng is None:
                raise RuntimeError("decoder noise needs an rng; call Generator.set_rng first")
            y = F.dropout(y, self.noise_p, True, self.rng, noise=self.noise)
        return y


def _same_conv(x: Tensor, weight: Parameter, bias: Optional[Parameter] = None) -> Tensor:
    k = weight.shape[-1]
    lo = (k - 1) // 2
    hi = k - 1 - lo
    if lo == hi:
        return F.conv2d(x, weight, bias, 1, lo)
    return F.conv2d(F.crop_pad(x, lo, hi, lo, hi), weight, bias, 1, 0)


class ConvGRUCell(Module):
    """Convolutional GRU with separate input and hidden kernels for each gate."""

    def __init__(self, in_channels: int, hidden_channels: int, kernel: int = 3):
        super().__init__()
        dt = get_default_dtype()
        D, C, k = hidden_channels, in_channels, kernel

        def w(cin):
            return Parameter(np.zeros((D, cin, k, k), dtype=dt))

        self.W_hr, self.W_xr, self.b_r = w(D), w(C), Parameter(np.zeros(D, dtype=dt))
        self.W_hz, self.W_xz, self.b_z = w(D), w(C), Parameter(np.zeros(D, dtype=dt))
        self.W_h, self.W_x, self.b = w(D), w(C), Parameter(np.zeros(D, dtype=dt))
        self.hidden_channels = D
        self.kernel = k

    def forward(self, x: Tensor, h_prev: Tensor) -> Tensor:
        return conv_gru_step(self, x, h_prev)

    def initial_state(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        return Tensor(np.zeros((n, self.hidden_channels, h, w), dtype=x.dtype))


def conv_gru_step(cell: ConvGRUCell, x: Tensor, h_prev: Tensor) -> Tensor:
    if x.shape[0] != h_prev.shape[0] or x.shape[2:] != h_prev.shape[2:] or h_prev.shape[1] != cell.hidden_channels:
        raise ValueError(f"conv_gru_step: input {x.shape} and hidden state {h_prev.shape} are not aligned")
    r = F.sigmoid(_same_conv(h_prev, cell.W_hr) + _same_conv(x, cell.W_xr, cell.b_r))
    z = F.sigmoid(_same_conv(h_prev, cell.W_hz) + _same_conv(x, cell.W_xz, cell.b_z))
    cand = F.tanh(_same_conv(F.hadamard(r, h_prev), cell.W_h) + _same_conv(x, cell.W_x, cell.b))
    return F.hadamard(1.0 - z, h_prev) + F.hadamard(z, cand)


class Generator(Module):
    """Encoder/decoder segmentation network with skip connections.

    Encoder block ``i`` output is concatenated onto the output of decoder block
    ``6 - i``, which then feeds the next decoder block. With ``spec.recurrent``
    a ConvGRU runs across the slices at the bottleneck.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        w = list(spec.block_widths)
        enc_in = [spec.in_channels] + w[:-1]
        self.encoder = [EncoderBlock(a, b) for a, b in zip(enc_in, w)]
        self.gru = ConvGRUCell(w[-1], w[-1], spec.gru_kernel) if spec.recurrent else None
        dec_out = [w[4], w[3], w[2], w[1], w[0], w[0]]
        dec_in = [w[5]] + [dec_out[j - 1] + w[5 - j] for j in range(1, 5)] + [dec_out[4] + w[0]]
        self.decoder = [
            DecoderBlock(a, b, spec.noise_dropout_p if j < 3 else 0.0, spec.noise)
            for j, (a, b) in enumerate(zip(dec_in, dec_out))
        ]
        self.head = Conv2d(dec_out[-1], 1, kernel=3, stride=1, padding=1)

    def set_rng(self, rng: np.random.Generator) -> None:
        for block in self.decoder:
            block.rng = rng

    def encode(self, x: Tensor) -> list[Tensor]:
        feats = []
        for block in self.encoder:
            x = block(x)
            feats.append(x)
        return feats

    def decode(self, bottleneck: Tensor, feats: Sequence[Tensor], ablate_skips: Sequence[int] = ()) -> Tensor:
        y = bottleneck
        for j, block in enumerate(self.decoder):
            if j > 0:
                i = N_BLOCKS - j  # 1-based encoder index joined here
                skip = feats[i - 1]
                if i in ablate_skips:
                    skip = Tensor(np.zeros_like(skip.data))
                y = F.concat_channels(y, skip)
            y = block(y)
        return F.sigmoid(self.head(y))

    def forward(self, x: Tensor, lengths: Optional[Sequence[int]] = None, ablate_skips: Sequence[int] = ()) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels or tuple(x.shape[2:]) != tuple(self.spec.input_size):
            raise ValueError(f"generator expects (N, {self.spec.in_channels}, {self.spec.input_size}), got {x.shape}")
        feats = self.encode(x)
        bottleneck = feats[-1]
        if self.gru is not None:
            bottleneck = self._recur(bottleneck, lengths or [x.shape[0]])
        return self.decode(bottleneck, feats, ablate_skips)

    def _recur(self, feats: Tensor, lengths: Sequence[int]) -> Tensor:
        if sum(lengths) != feats.shape[0] or min(lengths) < 1:
            raise ValueError(f"stack lengths {list(lengths)} do not partition a batch of {feats.shape[0]}")
        outs = []
        start = 0
        for n in lengths:
            h = None
            for s in range(start, start + n):
                x_s = feats[s : s + 1]
                if h is None:
                    h = self.gru.initial_state(x_s)
                h = conv_gru_step(self.gru, x_s, h)
                outs.append(h)
            start += n
        return F.concat(outs, axis=0)


def build_generator(spec: GeneratorSpec, rng: np.random.Generator) -> Generator:
    gen = Generator(spec)
    init_parameters(gen, rng)
    gen.set_rng(rng)
    return gen


def _set_mode(net: Module, mode: str) -> None:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    net.train(mode == "train")


def fcnn_forward(gen: Generator, slice_batch: Tensor, mode: str = "eval") -> Tensor:
    """Segment each slice independently."""
    _set_mode(gen, mode)
    return gen(slice_batch)


def rfcnn_forward(gen: Generator, stack: Tensor, mode: str = "eval", lengths: Optional[Sequence[int]] = None) -> Tensor:
    """Segment base-to-apex stacks; ``lengths`` splits a batch holding several stacks."""
    if stack.shape[0] == 0:
        raise ValueError("rfcnn_forward: empty stack")
    if gen.gru is None:
        raise ValueError("rfcnn_forward needs a recurrent generator")
    _set_mode(gen, mode)
    return gen(stack, lengths=lengths)


class Discriminator(Module):
    """Strided conv blocks (conv -> LeakyReLU(0.2) -> BN), then affine + sigmoid."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        h, w = spec.input_size
        n = len(spec.widths)
        if h % 2**n or w % 2**n:
            raise ValueError(f"discriminator input {spec.input_size} must be divisible by {2**n}")
        self.spec = spec
        chans = [spec.in_channels] + list(spec.widths)
        self.convs = [Conv2d(a, b, kernel=4, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:])]
        self.bns = [BatchNorm2d(b) for b in spec.widths]
        self.fc = Linear(spec.widths[-1] * (h >> n) * (w >> n), 1)

    def forward(self, mask: Tensor) -> Tensor:
        y = mask
        for conv, bn in zip(self.convs, self.bns):
            y = bn(F.leaky_relu(conv(y), 0.2))
        logits = self.fc(F.flatten(y))
        return F.reshape(F.sigmoid(logits), (mask.shape[0],))


def build_discriminator(spec: DiscriminatorSpec, rng: np.random.Generator) -> Discriminator:
    disc = Discriminator(spec)
    init_parameters(disc, rng)
    return disc


def discriminator_forward(disc: Discriminator, mask: Tensor) -> Tensor:
    return disc(mask)


# -- weight sharing -----------------------------------------------------------

def shared_layer_paths(net: Module, layers) -> list[str]:
    """Parameter paths of the 1-based shared ``layers`` of a generator or discriminator."""
    if isinstance(net, Generator):
        prefixes = [f"decoder.{i - 1}." for i in sorted(layers)]
        count = len(net.decoder)
    elif isinstance(net, Discriminator):
        prefixes = [f"convs.{i - 1}." for i in sorted(layers)]
        count = len(net.convs)
    else:
        raise TypeError(f"cannot share layers of {type(net).__name__}")
    bad = [i for i in layers if not 1 <= i <= count]
    if bad:
        raise ValueError(f"shared layer indices {sorted(bad)} out of range 1..{count}")
    return [name for name, _ in net.named_parameters() if any(name.startswith(p) for p in prefixes)]


def link_shared_parameters(net_a: Module, net_b: Module, spec: SharingSpec) -> list[str]:
    """Make the declared layers of ``net_b`` use ``net_a``'s parameter objects.

    Returns the linked parameter paths. Values, gradients and optimizer
    updates are then common to both networks.
    """
    if isinstance(net_a, Generator):
        layers = spec.generator_shared_layers
    elif isinstance(net_a, Discriminator):
        if spec.discriminator_mode != "shared":
            raise ValueError(f"discriminator mode {spec.discriminator_mode!r} declares no discriminator sharing")
        layers = spec.discriminator_shared_layers
    else:
        raise TypeError(f"cannot share layers of {type(net_a).__name__}")
    if type(net_a) is not type(net_b):
        raise TypeError("can only link networks of the same kind")
    paths = shared_layer_paths(net_a, layers)
    params_a = dict(net_a.named_parameters())
    params_b = dict(net_b.named_parameters())
    for path in paths:
        if path not in params_b:
            raise ValueError(f"layer {path!r} missing from second network")
        if params_a[path].shape != params_b[path].shape:
            layer = path.rsplit(".", 1)[0]
            raise ValueError(
                f"cannot share layer {layer!r}: shapes {params_a[path].shape} and {params_b[path].shape} differ"
            )
    for path in paths:
        set_parameter(net_b, path, params_a[path])
    return paths


def are_linked(net_a: Module, net_b: Module, layers) -> bool:
    params_a = dict(net_a.named_parameters())
    params_b = dict(net_b.named_parameters())
    return all(params_a[p] is params_b[p] for p in shared_layer_paths(net_a, layers))


def generator_parameter_count(spec: GeneratorSpec) -> int:
    return sum(p.size for p in Generator(spec).parameters())
