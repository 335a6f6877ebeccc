"""Flat ``section.key=value`` configuration for the command-line pipeline."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError
from .heatmap_post import PostConfig
from .sampler import AugmentSpec, SamplerConfig
from .segnet.train import TrainConfig
from .segnet.unet import NetConfig
from .slide_classify import ForestParams
from .synth import SynthProfile


@dataclass(frozen=True)
class SegmentConfig:
    tile_overlap: int = 16
    batch: int = 8


@dataclass(frozen=True)
class RunConfig:
    patients: int = 20
    test_patients: int | None = None
    channel: str = "saturation"
    schema: str = "ext20"


# Desk-scale pipeline defaults: the network sees 512 px windows shrunk
# eightfold (mpp 4.0 on 20X slides), and a short run switches to the low
# learning rate for its final epoch.
PIPELINE_DEFAULTS = {
    "sampler.out_px": "64",
    "net.input_px": "64",
    "segment.tile_overlap": "16",
    "train.epochs": "6",
    "train.lr_switch_epoch": "5",
    "train.precision": "32",
    "train.batch_size": "8",
}


@dataclass
class PipelineConfig:
    synth: SynthProfile = field(default_factory=SynthProfile)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    post: PostConfig = field(default_factory=PostConfig)
    forest: ForestParams = field(default_factory=ForestParams)
    run: RunConfig = field(default_factory=RunConfig)
    seed: int = 0

    @property
    def scale(self) -> int:
        return self.sampler.patch_px // self.sampler.out_px


SECTIONS = {
    "synth": SynthProfile, "sampler": SamplerConfig, "augment": AugmentSpec, "net": NetConfig,
    "train": TrainConfig, "segment": SegmentConfig, "post": PostConfig, "forest": ForestParams,
    "run": RunConfig,
}


def _coerce(text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        return _coerce(text, inner[0])
    if origin is tuple:
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(p, args[0]) for p in parts)
        if len(parts) != len(args):
            raise ParameterError(f"expected {len(args)} comma-separated values, got {text!r}")
        return tuple(_coerce(p, a) for p, a in zip(parts, args))
    if tp is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        return float(text)
    return text


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line without '=': {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(values: dict[str, str]) -> PipelineConfig:
    """Apply ``section.key`` overrides to the defaults and validate them."""
    grouped: dict[str, dict] = {name: {} for name in SECTIONS}
    seed = 0
    for key, value in values.items():
        if key == "seed":
            seed = int(value)
            continue
        if "." not in key:
            raise ParameterError(f"config key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ParameterError(f"unknown config section {section!r}")
        cls = SECTIONS[section]
        hints = typing.get_type_hints(cls)
        if name not in {f.name for f in dataclasses.fields(cls)}:
            raise ParameterError(f"unknown config key {key!r}")
        grouped[section][name] = _coerce(value, hints[name])
    augment = AugmentSpec(**grouped["augment"])
    sampler = SamplerConfig(**{"seed": seed, **grouped["sampler"], "augment": augment})
    train = TrainConfig(**{"seed": seed, **grouped["train"], "augment": augment})
    forest = ForestParams(**{"seed": seed, **grouped["forest"]})
    return PipelineConfig(
        synth=SynthProfile(**grouped["synth"]),
        sampler=sampler,
        augment=augment,
        net=NetConfig(**grouped["net"]),
        train=train,
        segment=SegmentConfig(**grouped["segment"]),
        post=PostConfig(**grouped["post"]),
        forest=forest,
        run=RunConfig(**grouped["run"]),
        seed=seed,
    )


def load_config(path=None, overrides: dict[str, str] | None = None, pipeline_defaults: bool = True) -> PipelineConfig:
    values = dict(PIPELINE_DEFAULTS) if pipeline_defaults else {}
    if path is not None:
        values.update(parse_lines(Path(path).read_text(encoding="utf-8").splitlines()))
    values.update(overrides or {})
    return build_config(values)


def dump_config(cfg: PipelineConfig) -> str:
    lines = [f"seed={cfg.seed}"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name}={value}")
    return "\n".join(lines) + "\n"
