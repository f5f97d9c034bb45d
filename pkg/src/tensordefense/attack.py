"""PGD attack under an l-infinity budget on the negative-cosine loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 6 / 255
    steps: int = 10
    clamp_min: float = 0.0
    clamp_max: float = 1.0
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        # epsilon = 0 is allowed and returns the input unchanged.
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.step_size <= 0:
            raise ConfigurationError("step_size must be > 0")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if not self.clamp_min < self.clamp_max:
            raise ConfigurationError("clamp_min must be below clamp_max")

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown attack keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def project(x_adv, x, cfg: AttackConfig) -> np.ndarray:
    """l-infinity projection around ``x`` followed by the pixel clamp."""
    out = np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon)
    return np.clip(out, cfg.clamp_min, cfg.clamp_max)


def pgd_attack(model, x, text_embedding, cfg: AttackConfig = AttackConfig(), callback=None):
    """Push ``f_I(x)`` away from ``text_embedding``.

    Each iterate adds ``step_size * sign(grad L)`` where ``L = -cos(f_I, t)``
    (ascent on L, i.e. descent on similarity), projects back onto the
    epsilon ball and clamps to the pixel range. Works on one image or a
    batch with one text embedding per image. ``callback(step, x_adv)`` sees
    every iterate.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < cfg.clamp_min) or np.any(x > cfg.clamp_max):
        raise InvalidArgumentError("input pixels outside the clamp range")
    if cfg.epsilon == 0:
        return x.copy()
    x_adv = x.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        x_adv = project(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg)
    for step in range(cfg.steps):
        grad = model.grad_wrt_image(x_adv, text_embedding)
        x_adv = project(x_adv + cfg.step_size * np.sign(grad), x, cfg)
        if callback is not None:
            callback(step, x_adv)
    return x_adv


def perturbation_stats(x, x_adv) -> tuple[float, float, float]:
    """(l-inf norm, l2 norm, fraction of entries changed) of ``x_adv - x``."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise InvalidArgumentError(f"shape mismatch {x.shape} vs {x_adv.shape}")
    diff = x_adv - x
    return (
        float(np.abs(diff).max()),
        float(np.sqrt(np.sum(diff * diff))),
        float(np.count_nonzero(diff) / diff.size),
    )
