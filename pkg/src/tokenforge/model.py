"""Feature model: patch encoder, upsampling projector, token embeddings.

The image path is patch projection -> L residual blocks over the patch
sequence -> two stride-2 transposed-conv stages -> per-cell linear map,
yielding a feature grid at four times the patch-grid resolution. Blocks
mix across the sequence through its mean vector by default; a single-head
self-attention block is available behind `attention=True`.

Every forward helper returns a cache; the matching backward consumes it
and accumulates parameter gradients into a name-keyed dict, so the whole
pipeline is differentiable by hand without a framework.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokenforge.errors import CorruptCheckpoint, IoFailure, ShapeError, UnknownToken

MAGIC = b"TKFD"
VERSION = 1


@dataclass
class ModelConfig:
    patch_size: int = 14
    encoder_dim: int = 32
    encoder_layers: int = 2
    embed_dim: int = 32
    vocab_size: int = 64
    attention: bool = False
    log10_temperature: bool = False
    seed: int = 0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class MixerBlock:
    w_in: np.ndarray
    u_ctx: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    FIELDS = ("w_in", "u_ctx", "b_in", "w_out", "b_out")


@dataclass
class AttentionBlock:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    FIELDS = ("w_q", "w_k", "w_v", "w_o")


@dataclass
class ModelParams:
    config: ModelConfig
    patch_w: np.ndarray
    patch_b: np.ndarray
    blocks: list
    deconv1_k: np.ndarray
    deconv1_b: np.ndarray
    deconv2_k: np.ndarray
    deconv2_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray
    embed: np.ndarray
    special: np.ndarray
    k: np.ndarray = field(default_factory=lambda: np.array(np.log(10.0)))
    b: np.ndarray = field(default_factory=lambda: np.array(-10.0))

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Canonical (name, array) list; fixes checkpoint and flatten order."""
        out = [("patch_w", self.patch_w), ("patch_b", self.patch_b)]
        for i, blk in enumerate(self.blocks):
            for fname in type(blk).FIELDS:
                out.append((f"blocks.{i}.{fname}", getattr(blk, fname)))
        out += [
            ("deconv1_k", self.deconv1_k),
            ("deconv1_b", self.deconv1_b),
            ("deconv2_k", self.deconv2_k),
            ("deconv2_b", self.deconv2_b),
            ("proj_w", self.proj_w),
            ("proj_b", self.proj_b),
            ("embed", self.embed),
            ("special", self.special),
            ("k", self.k),
            ("b", self.b),
        ]
        return out

    def set_array(self, name: str, value: np.ndarray) -> None:
        if name.startswith("blocks."):
            _, idx, fname = name.split(".")
            setattr(self.blocks[int(idx)], fname, value)
        else:
            setattr(self, name, value)

    def astype(self, dtype) -> "ModelParams":
        clone = init_params(self.config)
        for name, arr in self.arrays():
            clone.set_array(name, arr.astype(dtype))
        return clone

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.reshape(-1) for _, arr in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        clone = init_params(self.config)
        pos = 0
        for name, arr in self.arrays():
            n = arr.size
            clone.set_array(name, flat[pos : pos + n].reshape(arr.shape).copy())
            pos += n
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, params need {pos}")
        return clone


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays()}


def grads_to_flat(params: ModelParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].reshape(-1) for name, _ in params.arrays()])


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded initialization; identical configs give identical parameters."""
    rng = np.random.default_rng(config.seed)
    p, c, d, z = config.patch_size, config.encoder_dim, config.embed_dim, config.vocab_size
    patch_in = 3 * p * p
    blocks = []
    for _ in range(config.encoder_layers):
        if config.attention:
            blocks.append(
                AttentionBlock(
                    w_q=_uniform(rng, c, (c, c)),
                    w_k=_uniform(rng, c, (c, c)),
                    w_v=_uniform(rng, c, (c, c)),
                    w_o=_uniform(rng, c, (c, c)),
                )
            )
        else:
            blocks.append(
                MixerBlock(
                    w_in=_uniform(rng, c, (c, c)),
                    u_ctx=_uniform(rng, c, (c, c)),
                    b_in=_uniform(rng, c, (c,)),
                    w_out=_uniform(rng, c, (c, c)),
                    b_out=_uniform(rng, c, (c,)),
                )
            )
    k0 = 1.0 if config.log10_temperature else float(np.log(10.0))
    return ModelParams(
        config=config,
        patch_w=_uniform(rng, patch_in, (patch_in, c)),
        patch_b=_uniform(rng, patch_in, (c,)),
        blocks=blocks,
        deconv1_k=_uniform(rng, c, (2, 2, c, c)),
        deconv1_b=_uniform(rng, c, (c,)),
        deconv2_k=_uniform(rng, c, (2, 2, c, c)),
        deconv2_b=_uniform(rng, c, (c,)),
        proj_w=_uniform(rng, c, (c, d)),
        proj_b=_uniform(rng, c, (d,)),
        embed=_uniform(rng, d, (z, d)),
        special=_uniform(rng, d, (d,)),
        k=np.array(k0, dtype=np.float64),
        b=np.array(-10.0, dtype=np.float64),
    )


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def patch_project(image: np.ndarray, params: ModelParams):
    """Linear map of each p-by-p-by-3 patch to an encoder vector."""
    p = params.config.patch_size
    image = np.asarray(image, dtype=params.patch_w.dtype)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must be (H, W, 3), got {image.shape}")
    h, w, _ = image.shape
    if h % p or w % p or h == 0 or w == 0:
        raise ShapeError(f"image dims ({h}, {w}) are not positive multiples of patch size {p}")
    gh, gw = h // p, w // p
    patches = (
        image.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, 3 * p * p)
    )
    x = patches @ params.patch_w + params.patch_b
    return x, (patches, gh, gw)


def _mixer_forward(x, blk):
    n = x.shape[0]
    m = x.mean(axis=0)
    h = x @ blk.w_in + m @ blk.u_ctx + blk.b_in
    a = _softplus(h)
    y = x + a @ blk.w_out + blk.b_out
    return y, (x, m, h, a, n)


def _mixer_backward(dy, cache, blk, grads, prefix):
    x, m, h, a, n = cache
    grads[f"{prefix}.b_out"] += dy.sum(axis=0)
    grads[f"{prefix}.w_out"] += a.T @ dy
    da = dy @ blk.w_out.T
    dh = da * _sigmoid(h)
    grads[f"{prefix}.w_in"] += x.T @ dh
    grads[f"{prefix}.b_in"] += dh.sum(axis=0)
    dh_sum = dh.sum(axis=0)
    grads[f"{prefix}.u_ctx"] += np.outer(m, dh_sum)
    dm = blk.u_ctx @ dh_sum
    dx = dy + dh @ blk.w_in.T + dm[None, :] / n
    return dx


def _attention_forward(x, blk):
    c = x.shape[1]
    q, k, v = x @ blk.w_q, x @ blk.w_k, x @ blk.w_v
    scores = q @ k.T / np.sqrt(c)
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=1, keepdims=True)
    ctx = attn @ v
    y = x + ctx @ blk.w_o
    return y, (x, q, k, v, attn, ctx)


def _attention_backward(dy, cache, blk, grads, prefix):
    x, q, k, v, attn, ctx = cache
    c = x.shape[1]
    grads[f"{prefix}.w_o"] += ctx.T @ dy
    dctx = dy @ blk.w_o.T
    dattn = dctx @ v.T
    dv = attn.T @ dctx
    dscores = attn * (dattn - (attn * dattn).sum(axis=1, keepdims=True))
    dq = dscores @ k / np.sqrt(c)
    dk = dscores.T @ q / np.sqrt(c)
    grads[f"{prefix}.w_q"] += x.T @ dq
    grads[f"{prefix}.w_k"] += x.T @ dk
    grads[f"{prefix}.w_v"] += x.T @ dv
    return dy + dq @ blk.w_q.T + dk @ blk.w_k.T + dv @ blk.w_v.T


def patch_embed(image: np.ndarray, params: ModelParams):
    """Patch projection followed by the encoder blocks; returns (grid, cache)."""
    x, (patches, gh, gw) = patch_project(image, params)
    block_caches = []
    for blk in params.blocks:
        if isinstance(blk, AttentionBlock):
            x, cache = _attention_forward(x, blk)
        else:
            x, cache = _mixer_forward(x, blk)
        block_caches.append(cache)
    grid = x.reshape(gh, gw, -1)
    return grid, (patches, gh, gw, block_caches)


def patch_embed_backward(dgrid, cache, params: ModelParams, grads) -> None:
    patches, gh, gw, block_caches = cache
    dx = dgrid.reshape(gh * gw, -1)
    for i in range(len(params.blocks) - 1, -1, -1):
        blk = params.blocks[i]
        if isinstance(blk, AttentionBlock):
            dx = _attention_backward(dx, block_caches[i], blk, grads, f"blocks.{i}")
        else:
            dx = _mixer_backward(dx, block_caches[i], blk, grads, f"blocks.{i}")
    grads["patch_w"] += patches.T @ dx
    grads["patch_b"] += dx.sum(axis=0)


def _deconv_forward(x, kern, bias):
    h, w, _ = x.shape
    out = np.einsum("hwc,abcd->hawbd", x, kern).reshape(2 * h, 2 * w, kern.shape[3])
    return out + bias, x


def _deconv_backward(dout, x, kern, grads, kname, bname):
    h, w, _ = x.shape
    d5 = dout.reshape(h, 2, w, 2, dout.shape[2])
    grads[kname] += np.einsum("hwc,hawbd->abcd", x, d5)
    grads[bname] += dout.sum(axis=(0, 1))
    return np.einsum("hawbd,abcd->hwc", d5, kern)


def upsample_project(grid: np.ndarray, params: ModelParams):
    """Two doubling deconv stages then a per-cell linear map to embed_dim."""
    u1, x0 = _deconv_forward(grid, params.deconv1_k, params.deconv1_b)
    u2, x1 = _deconv_forward(u1, params.deconv2_k, params.deconv2_b)
    feats = u2 @ params.proj_w + params.proj_b
    return feats, (x0, x1, u2)


def upsample_project_backward(dfeats, cache, params: ModelParams, grads) -> np.ndarray:
    x0, x1, u2 = cache
    grads["proj_w"] += np.einsum("hwc,hwd->cd", u2, dfeats)
    grads["proj_b"] += dfeats.sum(axis=(0, 1))
    du2 = dfeats @ params.proj_w.T
    du1 = _deconv_backward(du2, x1, params.deconv2_k, grads, "deconv2_k", "deconv2_b")
    return _deconv_backward(du1, x0, params.deconv1_k, grads, "deconv1_k", "deconv1_b")


def prepare_image(image: np.ndarray) -> np.ndarray:
    """Scale 8-bit pixel values into [0, 1] for the encoder.

    Float inputs pass through unscaled, so callers that already work in
    unit range (or feed synthetic floats) are unaffected.
    """
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float64) / 255.0
    return image.astype(np.float64)


def forward_features(image: np.ndarray, params: ModelParams):
    """Full image path: (H, W, 3) -> feature grid (4H/p, 4W/p, embed_dim)."""
    grid, pe_cache = patch_embed(image, params)
    feats, up_cache = upsample_project(grid, params)
    return feats, (pe_cache, up_cache)


def forward_features_backward(dfeats, cache, params: ModelParams, grads) -> None:
    pe_cache, up_cache = cache
    dgrid = upsample_project_backward(dfeats, up_cache, params, grads)
    patch_embed_backward(dgrid, pe_cache, params, grads)


def token_embedding(ids, params: ModelParams) -> np.ndarray:
    """Rows of the embedding table for a sequence of token ids."""
    ids = np.asarray(ids)
    z = params.embed.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= z):
        bad = ids[(ids < 0) | (ids >= z)][0]
        raise UnknownToken(f"token id {int(bad)} outside the {z}-row embedding table")
    return params.embed[ids]


def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    vocab_doc: dict | None = None,
) -> None:
    """Serialize params to the TKFD container.

    Layout: magic, u32 version, u32 header length, JSON header (config,
    array manifest with name/shape/dtype, optional vocabulary), then each
    array's raw little-endian bytes in manifest order.
    """
    arrays = params.arrays()
    manifest = [
        {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        for name, arr in arrays
    ]
    header = {"config": params.config.to_json(), "arrays": manifest}
    if vocab_doc is not None:
        header["vocab"] = vocab_doc
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict | None]:
    """Read a TKFD container back; returns (params, vocab_doc or None)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic, not a TKFD checkpoint")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}, expected {VERSION}")
    hlen = struct.unpack("<I", raw[8:12])[0]
    if len(raw) < 12 + hlen:
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        config = ModelConfig.from_json(header["config"])
        manifest = header["arrays"]
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed header: {exc}") from exc

    params = init_params(config)
    expected = {name for name, _ in params.arrays()}
    seen = set()
    pos = 12 + hlen
    for item in manifest:
        name, shape, dtype = item["name"], tuple(item["shape"]), np.dtype(item["dtype"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        chunk = raw[pos : pos + nbytes]
        if len(chunk) < nbytes:
            raise CorruptCheckpoint(f"{path}: truncated array {name!r}")
        arr = np.frombuffer(chunk, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        if name not in expected:
            raise CorruptCheckpoint(f"{path}: unexpected array {name!r}")
        params.set_array(name, arr)
        seen.add(name)
        pos += nbytes
    if seen != expected:
        missing = sorted(expected - seen)
        raise CorruptCheckpoint(f"{path}: manifest lacks arrays {missing}")
    if pos != len(raw):
        raise CorruptCheckpoint(f"{path}: {len(raw) - pos} trailing bytes after arrays")
    return params, header.get("vocab")
