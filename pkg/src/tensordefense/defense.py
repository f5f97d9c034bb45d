"""Low-rank activation filtering with a residual blend, applied through hooks.

The filtered activation is ``alpha * t + (1 - alpha) * reconstruct(t)``;
``alpha`` weighs the ORIGINAL tensor, so ``alpha = 1`` disables the defense
and smaller values filter harder.

By default a hooked (batch, tokens, width) activation is decomposed as one
order-3 tensor. With ``per_sample`` each (tokens, width) slice is
decomposed on its own as a matrix.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .decomp import DecompSettings, Method, decompose, reconstruct
from .errors import ConfigurationError, InvalidArgumentError, NumericalFailureError

log = logging.getLogger(__name__)

_JSON_KEYS = {
    "method", "rank", "alpha", "layers", "max_iters", "tolerance", "seed",
    "per_sample", "fail_open",
}


@dataclass(frozen=True)
class DefenseConfig:
    method: Method = Method.TT
    rank: int = 32
    alpha: float = 0.2
    target_layers: tuple[str, ...] = ("final_norm",)
    max_iters: int = 50
    tolerance: float = 1e-4
    seed: int = 0
    per_sample: bool = False
    fail_open: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        object.__setattr__(self, "target_layers", tuple(self.target_layers))
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.target_layers:
            raise ConfigurationError("target_layers must not be empty")
        if len(set(self.target_layers)) != len(self.target_layers):
            raise ConfigurationError("target_layers contains duplicates")
        self.decomp_settings  # validates rank / iteration settings

    @property
    def decomp_settings(self) -> DecompSettings:
        return DecompSettings(self.method, self.rank, self.max_iters, self.tolerance, self.seed)

    def replace(self, **changes) -> "DefenseConfig":
        doc = asdict(self)
        doc.update(changes)
        return DefenseConfig(**doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "DefenseConfig":
        unknown = set(doc) - _JSON_KEYS
        if unknown:
            raise ConfigurationError(f"unknown defense keys: {sorted(unknown)}")
        doc = dict(doc)
        if "layers" in doc:
            layers = doc.pop("layers")
            if isinstance(layers, str) or not isinstance(layers, list):
                raise ConfigurationError("'layers' must be an array of layer identifiers")
            doc["target_layers"] = tuple(layers)
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "DefenseConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "rank": self.rank,
            "alpha": self.alpha,
            "layers": list(self.target_layers),
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
            "seed": self.seed,
            "per_sample": self.per_sample,
            "fail_open": self.fail_open,
        }


def blend(t: np.ndarray, t_hat: np.ndarray, alpha: float) -> np.ndarray:
    """Residual connection ``alpha * t + (1 - alpha) * t_hat``."""
    return alpha * t + (1.0 - alpha) * t_hat


def low_rank_view(t: np.ndarray, cfg: DefenseConfig) -> np.ndarray:
    """Reconstruction of ``t`` under ``cfg`` (whole tensor or per sample)."""
    settings = cfg.decomp_settings
    if cfg.per_sample:
        if t.ndim < 3:
            raise InvalidArgumentError("per-sample mode needs a batched tensor of order >= 3")
        return np.stack([reconstruct(decompose(s, settings)) for s in t])
    return reconstruct(decompose(t, settings))


def apply_defense(t, cfg: DefenseConfig, layer: str | None = None) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 2:
        raise InvalidArgumentError(f"defense needs an activation of order >= 2, got {t.ndim}")
    if cfg.alpha == 1.0:
        return t.copy()
    try:
        t_hat = low_rank_view(t, cfg)
    except NumericalFailureError as exc:
        if cfg.fail_open:
            log.warning("decomposition failed on %s, passing through: %s", layer, exc)
            return t.copy()
        raise NumericalFailureError(str(exc), layer=layer) from exc
    return blend(t, t_hat, cfg.alpha)


@dataclass
class HookRegistry:
    """Layer name -> transform bindings attached to one model."""

    bindings: dict = field(default_factory=dict)
    model: object = None

    def bind(self, layer: str, fn) -> None:
        if layer in self.bindings:
            raise ConfigurationError(f"layer {layer!r} already bound")
        self.bindings[layer] = fn

    def remove(self) -> None:
        if self.model is not None:
            self.model.detach(self)
            self.model = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.remove()


def _defense_hook(cfg, layer, value):
    return apply_defense(value, cfg, layer=layer)


def build_registry(layers, cfg: DefenseConfig, catalog) -> HookRegistry:
    layers = list(layers)
    if not layers:
        raise ConfigurationError("no target layers given")
    unknown = [name for name in layers if name not in catalog]
    if unknown:
        raise ConfigurationError(
            f"unknown layers {unknown}; valid identifiers: {', '.join(catalog)}"
        )
    registry = HookRegistry()
    for name in layers:
        registry.bind(name, partial(_defense_hook, cfg))
    return registry


def install_hooks(model, cfg: DefenseConfig) -> HookRegistry:
    """Route every targeted layer of ``model`` through :func:`apply_defense`.

    Call ``registry.remove()`` (or use it as a context manager) to restore
    the undefended model.
    """
    registry = build_registry(cfg.target_layers, cfg, model.layer_names)
    model.attach(registry)
    registry.model = model
    return registry
