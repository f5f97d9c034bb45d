"""Deterministic toy vision/text encoder pair with hookable layers.

The image tower is a small pre-norm vision transformer::

    (pixels - mean) / std -> patches -> linear embed + positions
    for each block i:
        h = h + attn_out_i              hook  block{i}.attn_out
        n = LN2_i(h)                    hook  block{i}.norm2
        h = h + mlp_out_i(n)            hook  block{i}.mlp_out
    f = final LN(h)                     hook  final_norm
    z = mean_tokens(f) @ proj ;  e = z / |z|

Hooked activations are (batch, tokens, width) arrays. The text tower is an
embedding bag followed by a linear projection. That projection is fitted in
closed form (ridge regression) so text embeddings land next to the image
embeddings of their rendered captions; no other weight is ever fitted.

Gradients with respect to the input image are computed by hand-written
reverse passes over the fixed architecture, always on the undefended model.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tdf
from .errors import ConfigurationError, InvalidArgumentError, NumericalFailureError

LN_EPS = 1e-5
GELU_C = np.sqrt(2.0 / np.pi)
NEGATIVE_COSINE = "negative_cosine"


def sub_seed(seed: int, name: str) -> int:
    """Derive an independent 64-bit seed for component ``name``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ToyEncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    width: int = 64
    depth: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    embed_dim: int = 32
    vocab_size: int = 32
    caption_length: int = 8
    text_width: int = 64
    align_samples: int = 2000
    align_ridge: float = 1e-3
    render_gain: float = 2.0
    pixel_mean: float = 0.5
    pixel_std: float = 0.25
    patch_freqs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigurationError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise ConfigurationError("width must be divisible by heads")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.image_size, self.image_size)

    @classmethod
    def from_dict(cls, doc: dict) -> "ToyEncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown model keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def layer_catalog(depth: int) -> list[str]:
    """Hook identifiers in forward-pass order."""
    names = []
    for i in range(depth):
        names += [f"block{i}.attn_out", f"block{i}.norm2", f"block{i}.mlp_out"]
    return names + ["final_norm"]


def last_norm_layers(depth: int, count: int) -> list[str]:
    """``block{i}.norm2`` for the last ``count`` transformer blocks."""
    if not 1 <= count <= depth:
        raise ConfigurationError(f"cannot select {count} norm layers from depth {depth}")
    return [f"block{i}.norm2" for i in range(depth - count, depth)]


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of unit-norm vectors (their dot product)."""
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


# ---------------------------------------------------------------- layers


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    return inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )


def _gelu(x):
    u = GELU_C * (x + 0.044715 * (x * x * x))
    th = np.tanh(u)
    return 0.5 * x * (1.0 + th), (x, th)


def _gelu_back(dy, cache):
    x, th = cache
    du = GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


class ToyEncoder:
    """Image and text towers sharing a joint embedding space.

    Weights are built from ``config.seed`` alone, so two encoders with the
    same config are bit-identical. Hook registries from
    :mod:`tensordefense.defense` attach through :meth:`attach`.
    """

    def __init__(self, config: ToyEncoderConfig = ToyEncoderConfig(), weights=None):
        self.config = config
        self._registries: list = []
        if weights is None:
            weights = _init_weights(config)
            self.weights = weights
            self._render_basis = weights["render_basis"]
            self.weights["text_proj"] = self._fit_text_projection()
        else:
            self.weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
            self._render_basis = self.weights["render_basis"]
        for w in self.weights.values():
            w.setflags(write=False)

    # ------------------------------------------------------------ hooks

    @property
    def layer_names(self) -> list[str]:
        return layer_catalog(self.config.depth)

    def attach(self, registry) -> None:
        taken = {name for r in self._registries for name in r.bindings}
        clash = taken & set(registry.bindings)
        if clash:
            raise ConfigurationError(f"layers already hooked: {sorted(clash)}")
        self._registries.append(registry)

    def detach(self, registry) -> None:
        self._registries = [r for r in self._registries if r is not registry]

    def _hook_table(self, extra):
        table = {}
        for r in self._registries + ([extra] if extra is not None else []):
            for name, fn in r.bindings.items():
                if name in table:
                    raise ConfigurationError(f"layer {name!r} bound twice")
                table[name] = fn
        return table

    # ------------------------------------------------------------ image tower

    def _check_images(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.config.image_shape:
            raise InvalidArgumentError(
                f"image shape {x.shape} does not match {self.config.image_shape}"
            )
        if x.min() < 0.0 or x.max() > 1.0:
            raise InvalidArgumentError("image pixels must lie in [0, 1]")
        return x, single

    def _patchify(self, x):
        b, c, s, _ = x.shape
        p = self.config.patch_size
        g = s // p
        return x.reshape(b, c, g, p, g, p).transpose(0, 2, 4, 1, 3, 5).reshape(b, g * g, c * p * p)

    def _unpatchify(self, d):
        cfg = self.config
        b = d.shape[0]
        p, g, c = cfg.patch_size, cfg.image_size // cfg.patch_size, cfg.channels
        return d.reshape(b, g, g, c, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(
            b, c, cfg.image_size, cfg.image_size
        )

    def _attention(self, a, i, cache):
        w = self.weights
        b, t, d = a.shape
        h = self.config.heads
        dh = d // h
        qkv = a @ w[f"b{i}.qkv_w"] + w[f"b{i}.qkv_b"]
        qkv = qkv.reshape(b, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        p = _softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh))
        o = (p @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        if cache is not None:
            cache.update(q=q, k=k, v=v, p=p)
        return o @ w[f"b{i}.o_w"] + w[f"b{i}.o_b"]

    def _attention_back(self, dout, i, cache):
        w = self.weights
        q, k, v, p = cache["q"], cache["k"], cache["v"], cache["p"]
        b, h, t, dh = q.shape
        do = (dout @ w[f"b{i}.o_w"].T).reshape(b, t, h, dh).transpose(0, 2, 1, 3)
        dp = do @ v.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ do
        ds = p * (dp - (dp * p).sum(-1, keepdims=True)) / np.sqrt(dh)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(b, t, 3 * h * dh)
        return dqkv @ w[f"b{i}.qkv_w"].T

    def _forward(self, x, hooks=None, record=False):
        """Run the image tower; returns (embedding rows, cache or None)."""
        w = self.weights
        table = self._hook_table(hooks)

        def tap(name, value):
            fn = table.get(name)
            if fn is None:
                return value
            out = fn(name, value)
            if out.shape != value.shape:
                raise InvalidArgumentError(f"hook on {name} changed shape")
            return out

        cache = {} if record else None
        patches = self._patchify((x - self.config.pixel_mean) / self.config.pixel_std)
        h = patches @ w["patch_w"] + w["patch_b"] + w["pos"]
        for i in range(self.config.depth):
            c = {} if record else None
            a, c1 = _layer_norm(h, w[f"b{i}.ln1_g"], w[f"b{i}.ln1_b"])
            h = h + tap(f"block{i}.attn_out", self._attention(a, i, c))
            n, c2 = _layer_norm(h, w[f"b{i}.ln2_g"], w[f"b{i}.ln2_b"])
            n = tap(f"block{i}.norm2", n)
            pre = n @ w[f"b{i}.fc1_w"] + w[f"b{i}.fc1_b"]
            act, c3 = _gelu(pre)
            h = h + tap(f"block{i}.mlp_out", act @ w[f"b{i}.fc2_w"] + w[f"b{i}.fc2_b"])
            if record:
                c.update(ln1=c1, ln2=c2, gelu=c3)
                cache[i] = c
        f, cf = _layer_norm(h, w["lnf_g"], w["lnf_b"])
        f = tap("final_norm", f)
        z = f.mean(1) @ w["proj"]
        if not np.all(np.isfinite(z)):
            raise NumericalFailureError("non-finite activations in image tower")
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norm == 0):
            raise NumericalFailureError("zero image embedding")
        e = z / norm
        if record:
            cache.update(lnf=cf, norm=norm, e=e)
        return e, cache

    def _backward(self, de, cache):
        w = self.weights
        e, norm = cache["e"], cache["norm"]
        dz = (de - e * (de * e).sum(1, keepdims=True)) / norm
        t = self.config.num_tokens
        df = np.repeat((dz @ w["proj"].T)[:, None, :] / t, t, axis=1)
        dh = _layer_norm_back(df, w["lnf_g"], cache["lnf"])
        for i in reversed(range(self.config.depth)):
            c = cache[i]
            dact = dh @ w[f"b{i}.fc2_w"].T
            dpre = _gelu_back(dact, c["gelu"])
            dn = dpre @ w[f"b{i}.fc1_w"].T
            dh = dh + _layer_norm_back(dn, w[f"b{i}.ln2_g"], c["ln2"])
            da = self._attention_back(dh, i, c)
            dh = dh + _layer_norm_back(da, w[f"b{i}.ln1_g"], c["ln1"])
        dpatch = dh @ w["patch_w"].T
        return self._unpatchify(dpatch) / self.config.pixel_std

    def encode_image(self, x, hooks=None) -> np.ndarray:
        """Unit-norm embedding(s) for one (C, H, W) image or a batch."""
        x, single = self._check_images(x)
        e, _ = self._forward(x, hooks)
        return e[0] if single else e

    def grad_wrt_image(self, x, text_embedding, loss: str = NEGATIVE_COSINE) -> np.ndarray:
        """Gradient of ``-cos(f_I(x), t)`` with respect to ``x``.

        Batched input takes one text embedding per image. Installed hooks are
        ignored: the attacker always sees the undefended model.
        """
        if loss != NEGATIVE_COSINE:
            raise InvalidArgumentError(f"unsupported loss {loss!r}")
        x, single = self._check_images(x)
        t = np.asarray(text_embedding, dtype=np.float64).reshape(x.shape[0], -1)
        saved, self._registries = self._registries, []
        try:
            _, cache = self._forward(x, record=True)
        finally:
            self._registries = saved
        g = self._backward(-t, cache)
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError("non-finite gradient")
        return g[0] if single else g

    def adversarial_loss(self, x, text_embedding) -> np.ndarray:
        x, single = self._check_images(x)
        t = np.asarray(text_embedding, dtype=np.float64).reshape(x.shape[0], -1)
        saved, self._registries = self._registries, []
        try:
            e, _ = self._forward(x)
        finally:
            self._registries = saved
        loss = -(e * t).sum(1)
        return loss[0] if single else loss

    # ------------------------------------------------------------ text tower

    def _text_features(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        if tokens.size == 0 or not np.issubdtype(tokens.dtype, np.integer):
            raise InvalidArgumentError("token ids must be a non-empty integer sequence")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise InvalidArgumentError(
                f"token id outside vocabulary [0, {self.config.vocab_size})"
            )
        return self.weights["tok_emb"][tokens].mean(1)

    def encode_text(self, tokens) -> np.ndarray:
        """Unit-norm embedding(s) for one token sequence or a (N, L) batch."""
        single = np.asarray(tokens).ndim == 1
        e = normalize(self._text_features(tokens) @ self.weights["text_proj"])
        return e[0] if single else e

    # ------------------------------------------------------------ data

    def render(self, tokens, noise_rng=None, noise_std: float = 0.0) -> np.ndarray:
        """Map caption(s) to image(s) in [0, 1] through a fixed smooth basis."""
        tokens = np.asarray(tokens)
        single = tokens.ndim == 1
        if single:
            tokens = tokens[None]
        v = self.config.vocab_size
        bags = np.zeros((tokens.shape[0], v))
        np.add.at(bags, (np.arange(tokens.shape[0])[:, None], tokens), 1.0 / tokens.shape[1])
        field_ = (bags @ self._render_basis.reshape(v, -1)).reshape(
            (-1,) + self.config.image_shape
        )
        img = 0.5 + 0.5 * np.tanh(self.config.render_gain * field_)
        if noise_std > 0:
            img = img + noise_std * noise_rng.standard_normal(img.shape)
        img = np.clip(img, 0.0, 1.0)
        return img[0] if single else img

    def random_captions(self, n: int, rng) -> np.ndarray:
        return rng.integers(0, self.config.vocab_size, size=(n, self.config.caption_length))

    def _fit_text_projection(self) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng(sub_seed(cfg.seed, "align"))
        captions = self.random_captions(cfg.align_samples, rng)
        targets = np.concatenate(
            [self.encode_image(self.render(chunk)) for chunk in np.array_split(captions, 8)]
        )
        feats = self._text_features(captions)
        gram = feats.T @ feats + cfg.align_ridge * len(feats) * np.eye(feats.shape[1])
        return np.linalg.solve(gram, feats.T @ targets)

    # ------------------------------------------------------------ storage

    def save(self, path) -> None:
        names = sorted(self.weights)
        header = {"names": names, "config": self.config.to_dict()}
        tdf.save_container(path, header, [np.atleast_1d(self.weights[k]) for k in names])

    @classmethod
    def load(cls, path) -> "ToyEncoder":
        header, tensors = tdf.load_container(path)
        cfg = ToyEncoderConfig.from_dict(header["config"])
        return cls(cfg, dict(zip(header["names"], tensors)))


def _smooth_basis(rng, count, channels, size, freqs=3):
    """Random low-frequency images: sums of a few separable cosines."""
    grid = np.arange(size) / size
    out = np.zeros((count, channels, size, size))
    for fx in range(freqs):
        for fy in range(freqs):
            amp = rng.standard_normal((count, channels, 1, 1)) / (1 + fx + fy)
            px, py = rng.uniform(0, 2 * np.pi, size=(2, count, channels, 1, 1))
            out += amp * np.cos(np.pi * fx * grid[None, None, :, None] + px) * np.cos(
                np.pi * fy * grid[None, None, None, :] + py
            )
    return out


def _patch_dct(channels, size, freqs):
    """Orthonormal low-frequency DCT-II patterns, (channels*size*size, k)."""
    n = np.arange(size)
    cols = []
    for f in range(freqs):
        c = np.cos(np.pi * (n + 0.5) * f / size)
        cols.append(c / np.linalg.norm(c))
    one_d = np.stack(cols, axis=1)
    patterns = []
    for ch in range(channels):
        for fy in range(freqs):
            for fx in range(freqs):
                img = np.zeros((channels, size, size))
                img[ch] = np.outer(one_d[:, fy], one_d[:, fx])
                patterns.append(img.ravel())
    return np.stack(patterns, axis=1)


def _init_weights(cfg: ToyEncoderConfig) -> dict:
    rng = np.random.default_rng(sub_seed(cfg.seed, "weights"))
    d, hidden = cfg.width, cfg.width * cfg.mlp_ratio
    patch_dim = cfg.channels * cfg.patch_size**2

    def dense(fan_in, fan_out):
        return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    if cfg.patch_freqs > 0:
        basis = _patch_dct(cfg.channels, cfg.patch_size, cfg.patch_freqs)
        patch_w = basis @ dense(basis.shape[1], d)
    else:
        patch_w = dense(patch_dim, d)
    w = {
        "patch_w": patch_w,
        "patch_b": 0.02 * rng.standard_normal(d),
        "pos": 0.1 * rng.standard_normal((cfg.num_tokens, d)),
    }
    for i in range(cfg.depth):
        w[f"b{i}.ln1_g"] = np.ones(d)
        w[f"b{i}.ln1_b"] = np.zeros(d)
        w[f"b{i}.qkv_w"] = dense(d, 3 * d)
        w[f"b{i}.qkv_b"] = np.zeros(3 * d)
        w[f"b{i}.o_w"] = dense(d, d) / np.sqrt(2 * cfg.depth)
        w[f"b{i}.o_b"] = np.zeros(d)
        w[f"b{i}.ln2_g"] = np.ones(d)
        w[f"b{i}.ln2_b"] = np.zeros(d)
        w[f"b{i}.fc1_w"] = dense(d, hidden)
        w[f"b{i}.fc1_b"] = np.zeros(hidden)
        w[f"b{i}.fc2_w"] = dense(hidden, d) / np.sqrt(2 * cfg.depth)
        w[f"b{i}.fc2_b"] = np.zeros(d)
    w["lnf_g"] = np.ones(d)
    w["lnf_b"] = np.zeros(d)
    w["proj"] = dense(d, cfg.embed_dim)
    w["tok_emb"] = rng.standard_normal((cfg.vocab_size, cfg.text_width))
    render_rng = np.random.default_rng(sub_seed(cfg.seed, "render"))
    w["render_basis"] = _smooth_basis(render_rng, cfg.vocab_size, cfg.channels, cfg.image_size)
    return w
