"""Recall@K for paired image/text embeddings.

Row ``i`` of the image embeddings matches row ``i`` of the text embeddings.
Image-to-text is the primary direction; ties are broken in favour of the
lower index, so the result is deterministic.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgumentError

RECALL_KS = (1, 5, 10)


def match_ranks(sim: np.ndarray) -> np.ndarray:
    """0-based rank of the true match (the diagonal) in each row of ``sim``.

    Competitors that tie with the match count against it only when their
    column index is lower than the match's.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise InvalidArgumentError(f"expected a square similarity matrix, got {sim.shape}")
    n = sim.shape[0]
    diag = np.diag(sim)[:, None]
    better = (sim > diag).sum(1)
    lower = np.tri(n, k=-1, dtype=bool)
    ties = ((sim == diag) & lower).sum(1)
    return better + ties


def recall_at_k(image_embeddings, text_embeddings, k: int) -> float:
    img = np.asarray(image_embeddings, dtype=np.float64)
    txt = np.asarray(text_embeddings, dtype=np.float64)
    if img.shape != txt.shape:
        raise InvalidArgumentError(f"embedding counts differ: {img.shape} vs {txt.shape}")
    n = img.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k={k} outside [1, {n}]")
    return float(np.mean(match_ranks(img @ txt.T) < k))


def recall_table(image_embeddings, text_embeddings, ks=RECALL_KS, text_to_image=False):
    """Recall@k for every ``k`` in ``ks`` (clipped to the corpus size)."""
    img, txt = np.asarray(image_embeddings), np.asarray(text_embeddings)
    if text_to_image:
        img, txt = txt, img
    n = img.shape[0]
    ranks = match_ranks(img @ txt.T)
    return {k: float(np.mean(ranks < min(k, n))) for k in ks}
