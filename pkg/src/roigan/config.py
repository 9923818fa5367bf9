"""Flat ``key = value`` run configuration.

Every key has a default and a help string; the CLI exposes each one as
``--key-name``. Precedence: defaults, then the config file, then flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .losses import LossConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _auto_bool(text: str):
    t = str(text).strip().lower()
    return "auto" if t == "auto" else _bool(t)


def _ints(text: str) -> tuple[int, ...]:
    parts = [p for p in str(text).replace(",", " ").split() if p]
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = str(text).strip()
        if t not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {text!r}")
        return t
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: str
    help: str


KEYS: tuple[Key, ...] = (
    Key("data", str, "data", "dataset directory holding .rvs files and manifest.txt"),
    Key("variant", _choice("plain", "gan", "roigan_a", "roigan_b", "roigan_c"), "plain", "training variant"),
    Key("generator", _choice("fcnn", "rfcnn"), "fcnn", "generator kind (rfcnn adds the ConvGRU bottleneck)"),
    Key("use_gan", _auto_bool, "auto", "adversarial generator term; auto = on for every variant but plain"),
    Key("use_l1", _auto_bool, "auto", "L1 term; auto = on for every variant but plain"),
    Key("beta", float, "5e-06", "L1 weight"),
    Key("lam", float, "0.005", "GAN term weight"),
    Key("saturating_generator", _bool, "false", "use log(1 - D(G(x))) instead of -log D(G(x))"),
    Key("local_adversarial", _bool, "true", "ROI-GAN local generator gets the GAN term once D has trained"),
    Key("learning_rate", float, "0.0002", "Adam learning rate"),
    Key("adam_beta1", float, "0.5", "Adam first-moment decay"),
    Key("adam_beta2", float, "0.999", "Adam second-moment decay"),
    Key("epochs", int, "10", "training epochs"),
    Key("batch_stacks", int, "1", "whole stacks per batch"),
    Key("seed", int, "0", "RNG seed for init, shuffling and dropout"),
    Key("roi_size", _ints, "64,64", "ROI crop size H,W for the local stream"),
    Key("roi_margin", int, "4", "pixels added around the ground-truth bounding box"),
    Key("block_widths", _ints, "64,128,256,512,512,512", "encoder block widths (6 values)"),
    Key("disc_widths", _ints, "64,128,256,512,512", "discriminator conv widths (5 values)"),
    Key("noise_dropout_p", float, "0.5", "dropout rate in decoder blocks 1-3"),
    Key("noise", _choice("bernoulli", "gaussian"), "bernoulli", "decoder noise kind"),
    Key("gru_kernel", int, "3", "ConvGRU kernel size"),
    Key("conditional_discriminator", _bool, "false", "feed the image alongside the mask to D"),
    Key("generator_shared_layers", _ints, "1,2,3", "decoder blocks shared by local and global generators"),
    Key("discriminator_shared_layers", _ints, "1,2,3", "conv layers shared by the two discriminators (roigan_c)"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def defaults() -> dict[str, Any]:
    return {k.name: k.parse(k.default) for k in KEYS}


def parse_value(name: str, text: str) -> Any:
    if name not in KEY_INDEX:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        return KEY_INDEX[name].parse(text)
    except ConfigError as e:
        raise ConfigError(f"{name}: {e}") from None
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return out


def load_config_file(path) -> dict[str, Any]:
    return parse_config_text(Path(path).read_text(), str(path))


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(values: dict[str, Any]) -> str:
    return "".join(f"{k.name} = {format_value(values[k.name])}\n" for k in KEYS)


def to_train_config(values: dict[str, Any], image_size: tuple[int, int]) -> TrainConfig:
    v = {**defaults(), **values}
    adversarial = v["variant"] != "plain"
    use_gan = adversarial if v["use_gan"] == "auto" else v["use_gan"]
    use_l1 = adversarial if v["use_l1"] == "auto" else v["use_l1"]
    loss = LossConfig(beta=v["beta"], lam=v["lam"], use_l1=use_l1, use_gan=use_gan,
                      saturating_generator=v["saturating_generator"])
    for name, n in (("block_widths", 6), ("disc_widths", 5), ("roi_size", 2)):
        if len(v[name]) != n:
            raise ConfigError(f"{name} needs {n} values, got {len(v[name])}")
    try:
        return TrainConfig(
            variant=v["variant"], generator_kind=v["generator"], loss=loss,
            learning_rate=v["learning_rate"], adam_beta1=v["adam_beta1"], adam_beta2=v["adam_beta2"],
            epochs=v["epochs"], batch_stacks=v["batch_stacks"], seed=v["seed"],
            image_size=tuple(image_size), roi_size=v["roi_size"], roi_margin=v["roi_margin"],
            block_widths=v["block_widths"], disc_widths=v["disc_widths"],
            noise_dropout_p=v["noise_dropout_p"], noise=v["noise"], gru_kernel=v["gru_kernel"],
            conditional_discriminator=v["conditional_discriminator"],
            generator_shared_layers=v["generator_shared_layers"],
            discriminator_shared_layers=v["discriminator_shared_layers"],
            local_adversarial=v["local_adversarial"],
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
