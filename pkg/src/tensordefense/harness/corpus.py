"""Seeded synthetic image/caption corpus and its on-disk layout.

On disk a corpus is a directory::

    corpus.json      {"seed", "size", "noise_std", "model": {...}}
    captions.json    {"<pair id>": [token ids]}
    manifest.json    [{"image": "images/00000.tdf", "caption_id": 0}, ...]
    images/NNNNN.tdf one (C, H, W) TDF1 tensor per pair
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tdf
from ..errors import ConfigurationError, InvalidArgumentError
from ..model import ToyEncoder, sub_seed


@dataclass
class RetrievalCorpus:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    captions: np.ndarray  # (N, L) token ids
    pair_ids: np.ndarray  # (N,)
    seed: int = 0

    def __post_init__(self):
        n = len(self.pair_ids)
        if self.images.shape[0] != n or self.captions.shape[0] != n:
            raise InvalidArgumentError("images, captions and pair ids differ in length")
        if len(set(self.pair_ids.tolist())) != n:
            raise InvalidArgumentError("pair ids must be unique")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise InvalidArgumentError("images must lie in [0, 1]")

    def __len__(self):
        return len(self.pair_ids)


def build_corpus(model: ToyEncoder, size: int = 200, seed: int = 0,
                 noise_std: float = 0.02) -> RetrievalCorpus:
    """Random captions rendered to images plus seeded pixel noise."""
    rng = np.random.default_rng(sub_seed(seed, "captions"))
    noise_rng = np.random.default_rng(sub_seed(seed, "pixels"))
    captions = model.random_captions(size, rng)
    images = model.render(captions, noise_rng, noise_std)
    return RetrievalCorpus(images, captions, np.arange(size), seed)


def save_corpus(corpus: RetrievalCorpus, out_dir, model_config=None, noise_std=None) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    manifest, captions = [], {}
    for pid, img, cap in zip(corpus.pair_ids, corpus.images, corpus.captions):
        rel = f"images/{int(pid):05d}.tdf"
        tdf.save_tensor(out / rel, img)
        manifest.append({"image": rel, "caption_id": int(pid)})
        captions[str(int(pid))] = [int(t) for t in cap]
    meta = {"seed": corpus.seed, "size": len(corpus), "noise_std": noise_std}
    if model_config is not None:
        meta["model"] = model_config.to_dict()
    (out / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "captions.json").write_text(json.dumps(captions, indent=1, sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_captions(path) -> dict[int, list[int]]:
    doc = json.loads(Path(path).read_text())
    return {int(k): list(v) for k, v in doc.items()}


def load_manifest(path) -> list[dict]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list) or not all(
        isinstance(e, dict) and "image" in e and "caption_id" in e for e in doc
    ):
        raise ConfigurationError(f"{path}: manifest must be an array of {{image, caption_id}}")
    return doc


def load_corpus(corpus_dir) -> RetrievalCorpus:
    root = Path(corpus_dir)
    meta = json.loads((root / "corpus.json").read_text())
    captions = load_captions(root / "captions.json")
    manifest = load_manifest(root / "manifest.json")
    images = np.stack([tdf.load_tensor(root / e["image"]) for e in manifest])
    ids = np.array([int(e["caption_id"]) for e in manifest])
    caps = np.array([captions[i] for i in ids])
    return RetrievalCorpus(images, caps, ids, int(meta.get("seed", 0)))
