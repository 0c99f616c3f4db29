"""Configuration dataclasses and the flat ``key = value`` config-file format.

Resolution order everywhere is: built-in defaults < config file < explicit
overrides (CLI flags).  ``settings_to_text`` renders the fully resolved
settings back into the file format so every run can echo what it used.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

ASM_MODES = ("full", "substitute", "no_attention")
LOSSES = ("charbonnier", "l1")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``width`` is the single calibration knob for the parameter budget; the
    default lands the full model at ~0.87M parameters, under the 1M budget.
    It must be divisible by 3 (temporal attention slots) and by
    ``attention_reduction`` (channel-attention bottleneck).
    """

    width: int = 39
    scale: int = 4
    recon_channels: int = 48
    recon_resblocks: int = 3
    supplement_resblocks: int = 3
    substitute_depth: int = 6
    slope: float = 0.1
    attention_reduction: int = 3
    share_directions: bool = False

    def __post_init__(self):
        if self.width < 3 or self.width % 3 != 0:
            raise ConfigError(f"width must be a positive multiple of 3, got {self.width}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.recon_channels != 3 * self.scale**2:
            raise ConfigError(
                f"recon_channels must equal 3*scale^2 = {3 * self.scale**2}, got {self.recon_channels}"
            )
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"slope must lie in (0, 1), got {self.slope}")
        if self.attention_reduction < 1 or self.width % self.attention_reduction != 0:
            raise ConfigError(
                f"attention_reduction {self.attention_reduction} must divide width {self.width}"
            )
        if self.recon_resblocks < 0 or self.supplement_resblocks < 0:
            raise ConfigError("residual block counts must be non-negative")
        if self.substitute_depth < 1:
            raise ConfigError("substitute_depth must be >= 1")


@dataclass(frozen=True)
class AblationSpec:
    """Which optional components are active.

    ``asm_mode``: "full" keeps the attention supplement, "substitute" swaps it
    for a plain residual chain, "no_attention" keeps the supplement but strips
    the channel-attention stage from its modulation blocks.
    """

    reference_group: bool = True
    tam: bool = True
    asm_mode: str = "full"

    def __post_init__(self):
        if self.asm_mode not in ASM_MODES:
            raise ConfigError(f"asm_mode must be one of {ASM_MODES}, got {self.asm_mode!r}")

    @property
    def label(self) -> str:
        parts = []
        if not self.reference_group:
            parts.append("no_rg")
        if not self.tam:
            parts.append("no_tam")
        if self.asm_mode != "full":
            parts.append(f"asm_{self.asm_mode}")
        return "_".join(parts) if parts else "full"


def ablation_grid() -> dict[str, AblationSpec]:
    """The six studied variants, keyed by label."""
    specs = [
        AblationSpec(),
        AblationSpec(reference_group=True, tam=False),
        AblationSpec(reference_group=False, tam=True),
        AblationSpec(reference_group=False, tam=False),
        AblationSpec(asm_mode="substitute"),
        AblationSpec(asm_mode="no_attention"),
    ]
    return {s.label: s for s in specs}


@dataclass(frozen=True)
class DegradationConfig:
    """Blur-then-decimate degradation parameters."""

    sigma: float = 1.6
    scale: int = 4
    kernel_size: int = 13
    decimation_offset: int = 2

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if not 0 <= self.decimation_offset < self.scale:
            raise ConfigError(
                f"decimation_offset must lie in [0, scale), got {self.decimation_offset}"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and loop parameters."""

    base_lr: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 25
    total_epochs: int = 75
    batch_size: int = 8
    clip_length: int = 7
    loss: str = "charbonnier"
    loss_eps: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patch_size: int = 256
    steps_per_epoch: int | None = None
    deterministic: bool = True

    def __post_init__(self):
        for name in ("base_lr", "decay_factor", "loss_eps", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("decay_every", "total_epochs", "batch_size", "clip_length", "patch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("moment coefficients must lie in [0, 1)")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1 when set")


@dataclass(frozen=True)
class Settings:
    """Bundle of all resolved configuration."""

    model: ModelConfig
    ablation: AblationSpec
    degradation: DegradationConfig
    train: TrainConfig


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


# Exact key set of the config-file format; parsing rejects anything else.
FILE_KEYS: dict[str, type] = {
    "width": int,
    "scale": int,
    "sigma": float,
    "kernel_size": int,
    "decim_offset": int,
    "base_lr": float,
    "decay_factor": float,
    "decay_every": int,
    "total_epochs": int,
    "batch_size": int,
    "clip_length": int,
    "loss": str,
    "loss_eps": float,
    "seed": int,
    "ablation.rg": bool,
    "ablation.tam": bool,
    "ablation.asm_mode": str,
}


def parse_config_file(path: str | Path) -> dict[str, object]:
    """Parse a flat ``key = value`` file into a typed dict of known keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, object] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        kind = FILE_KEYS[key]
        try:
            values[key] = _parse_bool(value) if kind is bool else kind(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def resolve_settings(
    file_values: Mapping[str, object] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> Settings:
    """Merge defaults, config-file values, and overrides into a Settings bundle.

    ``overrides`` uses the same key names as the file format; entries whose
    value is None are ignored (unset CLI flags).
    """
    merged: dict[str, object] = {}
    for source in (file_values, overrides):
        if source:
            for key, value in source.items():
                if key not in FILE_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                if value is not None:
                    merged[key] = value

    def pick(key, default):
        return merged.get(key, default)

    model = ModelConfig(
        width=pick("width", ModelConfig.width),
        scale=pick("scale", ModelConfig.scale),
        recon_channels=3 * int(pick("scale", ModelConfig.scale)) ** 2,
    )
    ablation = AblationSpec(
        reference_group=pick("ablation.rg", AblationSpec.reference_group),
        tam=pick("ablation.tam", AblationSpec.tam),
        asm_mode=pick("ablation.asm_mode", AblationSpec.asm_mode),
    )
    scale = int(pick("scale", DegradationConfig.scale))
    degradation = DegradationConfig(
        sigma=pick("sigma", DegradationConfig.sigma),
        scale=scale,
        kernel_size=pick("kernel_size", DegradationConfig.kernel_size),
        # sample near blurred-pixel centers by default
        decimation_offset=pick("decim_offset", scale // 2),
    )
    train = TrainConfig(
        base_lr=pick("base_lr", TrainConfig.base_lr),
        decay_factor=pick("decay_factor", TrainConfig.decay_factor),
        decay_every=pick("decay_every", TrainConfig.decay_every),
        total_epochs=pick("total_epochs", TrainConfig.total_epochs),
        batch_size=pick("batch_size", TrainConfig.batch_size),
        clip_length=pick("clip_length", TrainConfig.clip_length),
        loss=pick("loss", TrainConfig.loss),
        loss_eps=pick("loss_eps", TrainConfig.loss_eps),
        seed=pick("seed", TrainConfig.seed),
    )
    return Settings(model=model, ablation=ablation, degradation=degradation, train=train)


def settings_to_text(settings: Settings) -> str:
    """Render resolved settings in the config-file format (stable key order)."""
    values = {
        "width": settings.model.width,
        "scale": settings.model.scale,
        "sigma": settings.degradation.sigma,
        "kernel_size": settings.degradation.kernel_size,
        "decim_offset": settings.degradation.decimation_offset,
        "base_lr": settings.train.base_lr,
        "decay_factor": settings.train.decay_factor,
        "decay_every": settings.train.decay_every,
        "total_epochs": settings.train.total_epochs,
        "batch_size": settings.train.batch_size,
        "clip_length": settings.train.clip_length,
        "loss": settings.train.loss,
        "loss_eps": settings.train.loss_eps,
        "seed": settings.train.seed,
        "ablation.rg": settings.ablation.reference_group,
        "ablation.tam": settings.ablation.tam,
        "ablation.asm_mode": settings.ablation.asm_mode,
    }
    lines = [f"{key} = {values[key]}" for key in FILE_KEYS]
    return "\n".join(lines) + "\n"


def config_as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
