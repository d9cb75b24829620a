"""Run configuration: every hyperparameter in one serializable record.

Defaults follow the training protocol where it pins a value (window size,
partition sizes, token dimension, learning-rate schedule, batching, repeat
count); everything the protocol leaves open is an implementation default
and is flagged as such in the serialized form so provenance stays visible
in run outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

__all__ = ["RunConfig", "BRANCH_MODES"]

BRANCH_MODES = ("spectral_only", "spatial_only", "spectral_spatial")

_IMPL_DEFAULT = "implementation default (not fixed by the training protocol)"


def _f(default, protocol):
    return field(default=default, metadata={"protocol": protocol})


@dataclass
class RunConfig:
    window: int = _f(27, True)          # spatial window H = W
    p_spa: int = _f(3, True)            # spatial partition size
    p_spe: int = _f(2, True)            # spectral partition size
    d: int = _f(64, True)               # token dimension
    d_prime: int = _f(32, False)        # tokenizer MLP output dimension
    l_blocks: int = _f(2, False)        # stacked spectral-spatial blocks
    s_center: int = _f(3, False)        # center crop side for the spectral branch
    n_state: int = _f(16, False)        # SSM states per channel
    expand: int = _f(2, False)          # d_inner = expand * d
    k_conv: int = _f(4, False)          # depthwise conv width
    lr0: float = _f(5e-4, True)         # initial learning rate
    lr_halve_every: int = _f(80, True)  # epochs between halvings
    epochs: int = _f(180, True)
    batch_size: int = _f(256, True)
    seed: int = _f(0, False)
    branch_mode: str = _f("spectral_spatial", True)
    enhancement: bool = _f(True, True)
    train_per_class: int = _f(20, True)
    train_count_overrides: str = _f("", True)  # "class:count,..." exceptions
    adam_beta1: float = _f(0.9, False)
    adam_beta2: float = _f(0.999, False)
    adam_eps: float = _f(1e-8, False)
    normalize: str = _f("minmax-band", False)  # per-band min-max to [0, 1]
    eval_every: int = _f(0, False)      # test metrics every k epochs (0 = final only)
    repeats: int = _f(10, True)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.branch_mode not in BRANCH_MODES:
            raise ValueError(f"branch_mode must be one of {BRANCH_MODES}")
        if self.window % self.p_spa:
            raise ValueError(f"window {self.window} not divisible by p_spa {self.p_spa}")
        if self.s_center % 2 == 0:
            raise ValueError("s_center must be odd")
        grid = self.window // self.p_spa
        if self.branch_mode == "spectral_spatial" and self.enhancement and grid % 2 == 0:
            raise ValueError(
                f"feature enhancement needs an odd patch grid; window/p_spa = {grid}"
            )
        for v in ("window", "p_spa", "p_spe", "d", "d_prime", "l_blocks", "n_state",
                  "expand", "k_conv", "batch_size", "lr_halve_every"):
            if getattr(self, v) < 1:
                raise ValueError(f"{v} must be >= 1")
        if self.epochs < 0:  # a zero-epoch run returns the initialization
            raise ValueError("epochs must be >= 0")
        if self.d % 2:
            raise ValueError("d must be even (2-D positional table splits it in half)")

    # -- per-class counts ----------------------------------------------------

    def class_counts(self, n_classes):
        """Training draw per class (1-based class ids)."""
        counts = {c: self.train_per_class for c in range(1, n_classes + 1)}
        if self.train_count_overrides:
            for item in self.train_count_overrides.split(","):
                cls, _, cnt = item.partition(":")
                counts[int(cls)] = int(cnt)
        return counts

    @property
    def d_inner(self):
        return self.expand * self.d

    # -- serialization: human-readable key = value lines ----------------------

    def to_text(self):
        lines = ["# ssmamba run configuration"]
        for f_ in fields(self):
            value = getattr(self, f_.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            line = f"{f_.name} = {value}"
            if not f_.metadata.get("protocol", False):
                line += f"  # {_IMPL_DEFAULT}"
            lines.append(line)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ValueError(f"bad config line: {raw!r}")
            values[key.strip()] = value.strip()
        return cls().replaced(values)

    def replaced(self, values):
        """New config with string values coerced per field type; unknown keys rejected."""
        known = {f_.name: f_ for f_ in fields(self)}
        kwargs = {f_.name: getattr(self, f_.name) for f_ in fields(self)}
        for key, value in values.items():
            if key not in known:
                raise ValueError(f"unknown config key: {key}")
            kwargs[key] = _coerce(value, type(kwargs[key]))
        return RunConfig(**kwargs)

    def with_overrides(self, pairs):
        """Apply 'key=value' override strings."""
        values = {}
        for pair in pairs:
            key, eq, value = pair.partition("=")
            if not eq:
                raise ValueError(f"override must look like key=value, got {pair!r}")
            values[key.strip()] = value.strip()
        return self.replaced(values)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _coerce(value, target_type):
    if isinstance(value, target_type) and not isinstance(value, str):
        return value
    if target_type is bool:
        if isinstance(value, bool):
            return value
        lowered = str(value).lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    return target_type(value)
