"""Low-rank tensor decomposition defenses for vision-language encoders."""

__version__ = "0.1.0"

from .attack import AttackConfig, perturbation_stats, pgd_attack  # noqa: E402
from .decomp import (  # noqa: E402
    CPFactors,
    DecompSettings,
    Method,
    TTCores,
    TuckerFactors,
    cp_decompose,
    decompose,
    reconstruct,
    tt_decompose,
    tucker_decompose,
)
from .defense import DefenseConfig, HookRegistry, apply_defense, install_hooks  # noqa: E402
from .model import ToyEncoder, ToyEncoderConfig, similarity  # noqa: E402
