"""Parameter sweeps: clean / attacked / defended retrieval per swept value.

Attacks are generated once per sweep against the undefended model; every
row then re-encodes the same adversarial images with a different defense.
Besides the fixed report columns each row carries

* ``def_clean_r1``: Recall@1 when the defense runs on clean images, and
* ``def_clean_fidelity``: mean cosine between defended-clean and clean
  image embeddings (1.0 means the defense left clean inputs untouched).

With ``harness.text_to_image`` the text-to-image Recall@1 columns
``clean_t2i_r1``, ``adv_t2i_r1`` and ``def_t2i_r1`` are added.
"""

from __future__ import annotations

import datetime as _dt
import enum
import time
from dataclasses import dataclass

import numpy as np

from .. import __version__
from ..attack import pgd_attack
from ..config import ExperimentConfig
from ..decomp import Method
from ..defense import DefenseConfig, build_registry
from ..errors import ConfigurationError, FormatError, InvalidArgumentError, NumericalFailureError
from ..model import ToyEncoder, last_norm_layers
from .corpus import RetrievalCorpus, build_corpus
from .report import SweepReport
from .retrieval import RECALL_KS, recall_table


class Axis(str, enum.Enum):
    ALPHA = "alpha"
    RANK = "rank"
    METHOD = "method"
    LAYER = "layer"
    MULTILAYER = "multilayer"

    @classmethod
    def parse(cls, value) -> "Axis":
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown axis {value!r}; expected one of {[a.value for a in cls]}"
            ) from None


def defense_for(axis: Axis, value, base: DefenseConfig, depth: int) -> DefenseConfig:
    """``base`` with the swept parameter set to ``value``."""
    if axis is Axis.ALPHA:
        return base.replace(alpha=float(value))
    if axis is Axis.RANK:
        return base.replace(rank=int(value))
    if axis is Axis.METHOD:
        return base.replace(method=Method.parse(value))
    if axis is Axis.LAYER:
        return base.replace(target_layers=(str(value),))
    return base.replace(target_layers=tuple(last_norm_layers(depth, int(value))))


_MODELS: dict = {}


def get_model(cfg) -> ToyEncoder:
    """Build (or reuse) the encoder for a model config; weights are immutable."""
    if cfg not in _MODELS:
        _MODELS[cfg] = ToyEncoder(cfg)
    return _MODELS[cfg]


@dataclass
class Evaluation:
    """Everything a sweep row needs that does not depend on the defense."""

    model: ToyEncoder
    corpus: RetrievalCorpus
    text: np.ndarray
    clean: np.ndarray
    adv_images: np.ndarray
    adv: np.ndarray
    baseline_ms: float


def encode_batched(model, images, batch_size, hooks=None):
    """Encode in batches; returns (embeddings, per-batch seconds)."""
    out, times = [], []
    for start in range(0, len(images), batch_size):
        t0 = time.perf_counter()
        out.append(model.encode_image(images[start:start + batch_size], hooks=hooks))
        times.append(time.perf_counter() - t0)
    return np.concatenate(out), times


def prepare(cfg: ExperimentConfig, model: ToyEncoder | None = None) -> Evaluation:
    model = model or get_model(cfg.model)
    h = cfg.harness
    corpus = build_corpus(model, h.corpus_size, h.corpus_seed, h.noise_std)
    text = model.encode_text(corpus.captions)
    clean, times = encode_batched(model, corpus.images, h.batch_size)
    adv_images = np.concatenate([
        pgd_attack(model, corpus.images[s:s + h.batch_size], text[s:s + h.batch_size], cfg.attack)
        for s in range(0, len(corpus), h.batch_size)
    ])
    adv, _ = encode_batched(model, adv_images, h.batch_size)
    return Evaluation(model, corpus, text, clean, adv_images, adv, float(np.median(times)) * 1e3)


def _recalls(prefix, emb, text, ks):
    return {f"{prefix}_r{k}": v for k, v in recall_table(emb, text, ks).items()}


def _mean_sim(a, b) -> float:
    return float(np.mean(np.sum(a * b, axis=1)))


def evaluate_row(ev: Evaluation, defense: DefenseConfig, cfg: ExperimentConfig) -> dict:
    h = cfg.harness
    registry = build_registry(defense.target_layers, defense, ev.model.layer_names)
    defended, times = encode_batched(ev.model, ev.adv_images, h.batch_size, hooks=registry)
    def_clean, _ = encode_batched(ev.model, ev.corpus.images, h.batch_size, hooks=registry)
    ms = float(np.median(times)) * 1e3
    row = {
        "method": defense.method.value,
        "rank": defense.rank,
        "alpha": defense.alpha,
        "layers": list(defense.target_layers),
        **_recalls("clean", ev.clean, ev.text, RECALL_KS),
        **_recalls("adv", ev.adv, ev.text, RECALL_KS),
        **_recalls("def", defended, ev.text, RECALL_KS),
        "mean_sim_clean": _mean_sim(ev.clean, ev.text),
        "mean_sim_adv": _mean_sim(ev.adv, ev.text),
        "mean_sim_def": _mean_sim(defended, ev.text),
        "ms_per_batch": ms,
        "images_per_s": len(ev.adv_images) / sum(times),
        "overhead": ms / ev.baseline_ms,
        "def_clean_r1": recall_table(def_clean, ev.text, (1,))[1],
        "def_clean_fidelity": _mean_sim(def_clean, ev.clean),
    }
    if h.text_to_image:
        for name, emb in (("clean", ev.clean), ("adv", ev.adv), ("def", defended)):
            row[f"{name}_t2i_r1"] = recall_table(emb, ev.text, (1,), text_to_image=True)[1]
    return row


def _metadata(kind: str, cfg: ExperimentConfig, **extra) -> dict:
    return {
        "kind": kind,
        "config": cfg.to_dict(),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **extra,
    }


def _row_error(exc, label):
    if isinstance(exc, (InvalidArgumentError, NumericalFailureError, ConfigurationError, FormatError)):
        return type(exc)(f"sweep row {label}: {exc}")
    return RuntimeError(f"sweep row {label}: {exc}")


def run_sweep(axis, values, base: ExperimentConfig = ExperimentConfig(),
              evaluation: Evaluation | None = None) -> SweepReport:
    """One report row per value of ``axis``; all else held at ``base``."""
    axis = Axis.parse(axis)
    values = list(values)
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    ev = evaluation or prepare(base)
    rows = []
    for value in values:
        try:
            defense = defense_for(axis, value, base.defense, base.model.depth)
            row = evaluate_row(ev, defense, base)
        except Exception as exc:
            raise _row_error(exc, f"{axis.value}={value!r}") from exc
        rows.append({"axis": axis.value, "value": value, **row})
    return SweepReport(rows, _metadata("sweep", base, axis=axis.value, values=values))
