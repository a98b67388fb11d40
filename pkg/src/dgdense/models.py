"""Micro vision transformer, text encoder, and query-based dense decoders.

Parameters live in flat dicts (name -> Tensor) so checkpoints, freezing and
optimizer grouping all key off names: "enc.*" vision encoder, "txt.*" text
encoder, "seg.*" / "det.*" decoders. Forward passes are pure functions of
(params, input) built from the taped primitives in dgdense.tensor.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .datagen import CAPTION_LEN, NUM_CLASSES, VOCAB_SIZE


@dataclass
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 8
    heads: int = 8
    mlp_ratio: float = 2.0
    joint_dim: int = 32

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.grid * self.grid


VIT_PRESETS = {
    "micro": dict(embed_dim=32, depth=4, heads=4),
    "small": dict(embed_dim=48, depth=6, heads=4),
    "base": dict(embed_dim=64, depth=8, heads=8),
}


def vit_preset(name, **overrides):
    if name not in VIT_PRESETS:
        raise ValueError(f"unknown preset {name!r}; have {sorted(VIT_PRESETS)}")
    kw = dict(VIT_PRESETS[name])
    kw.update(overrides)
    return ViTConfig(**kw)


@dataclass
class TextConfig:
    vocab_size: int = VOCAB_SIZE
    context: int = CAPTION_LEN
    width: int = 32
    depth: int = 2
    heads: int = 4
    joint_dim: int = 32


@dataclass
class SegDecoderConfig:
    num_queries: int = 16
    num_classes: int = NUM_CLASSES
    mask_dim: int = 32
    heads: int = 4


@dataclass
class DetDecoderConfig:
    num_queries: int = 16
    num_classes: int = NUM_CLASSES
    heads: int = 4


@dataclass
class FreezeSpec:
    k: int = 0
    direction: str = "early"   # "early": input side first; "deep": output side first


# ---------------------------------------------------------------------------
# init
# ---------------------------------------------------------------------------


def _block_params(params, prefix, dim, hidden, rng):
    params[f"{prefix}.ln1.g"] = T.param(np.ones(dim))
    params[f"{prefix}.ln1.b"] = T.param(np.zeros(dim))
    for nm in ("Wq", "Wk", "Wv", "Wo"):
        params[f"{prefix}.attn.{nm}"] = T.param(rng.normal(0, 0.02, (dim, dim)))
    params[f"{prefix}.attn.bo"] = T.param(np.zeros(dim))
    params[f"{prefix}.ln2.g"] = T.param(np.ones(dim))
    params[f"{prefix}.ln2.b"] = T.param(np.zeros(dim))
    params[f"{prefix}.mlp.W1"] = T.param(rng.normal(0, 0.02, (dim, hidden)))
    params[f"{prefix}.mlp.b1"] = T.param(np.zeros(hidden))
    params[f"{prefix}.mlp.W2"] = T.param(rng.normal(0, 0.02, (hidden, dim)))
    params[f"{prefix}.mlp.b2"] = T.param(np.zeros(dim))


def init_vision(cfg, rng):
    p = {}
    pdim = cfg.patch_size * cfg.patch_size * 3
    p["enc.patch.W"] = T.param(rng.normal(0, 0.02, (pdim, cfg.embed_dim)))
    p["enc.patch.b"] = T.param(np.zeros(cfg.embed_dim))
    p["enc.pos"] = T.param(rng.normal(0, 0.02, (cfg.tokens, cfg.embed_dim)))
    hidden = int(cfg.embed_dim * cfg.mlp_ratio)
    for i in range(cfg.depth):
        _block_params(p, f"enc.block{i}", cfg.embed_dim, hidden, rng)
    p["enc.ln_f.g"] = T.param(np.ones(cfg.embed_dim))
    p["enc.ln_f.b"] = T.param(np.zeros(cfg.embed_dim))
    p["enc.proj.W"] = T.param(rng.normal(0, 0.02, (cfg.embed_dim, cfg.joint_dim)))
    p["enc.proj.b"] = T.param(np.zeros(cfg.joint_dim))
    return p


def init_text(cfg, rng):
    p = {}
    p["txt.embed"] = T.param(rng.normal(0, 0.02, (cfg.vocab_size, cfg.width)))
    p["txt.pos"] = T.param(rng.normal(0, 0.02, (cfg.context, cfg.width)))
    for i in range(cfg.depth):
        _block_params(p, f"txt.block{i}", cfg.width, cfg.width * 2, rng)
    p["txt.ln_f.g"] = T.param(np.ones(cfg.width))
    p["txt.ln_f.b"] = T.param(np.zeros(cfg.width))
    p["txt.proj.W"] = T.param(rng.normal(0, 0.02, (cfg.width, cfg.joint_dim)))
    p["txt.proj.b"] = T.param(np.zeros(cfg.joint_dim))
    return p


def _decoder_params(prefix, dcfg, feat_dim, rng):
    p = {}
    p[f"{prefix}.query"] = T.param(rng.normal(0, 0.02, (dcfg.num_queries, feat_dim)))
    p[f"{prefix}.ln_q.g"] = T.param(np.ones(feat_dim))
    p[f"{prefix}.ln_q.b"] = T.param(np.zeros(feat_dim))
    for nm in ("Wq", "Wk", "Wv", "Wo"):
        p[f"{prefix}.attn.{nm}"] = T.param(rng.normal(0, 0.02, (feat_dim, feat_dim)))
    p[f"{prefix}.attn.bo"] = T.param(np.zeros(feat_dim))
    p[f"{prefix}.ln2.g"] = T.param(np.ones(feat_dim))
    p[f"{prefix}.ln2.b"] = T.param(np.zeros(feat_dim))
    p[f"{prefix}.mlp.W1"] = T.param(rng.normal(0, 0.02, (feat_dim, feat_dim * 2)))
    p[f"{prefix}.mlp.b1"] = T.param(np.zeros(feat_dim * 2))
    p[f"{prefix}.mlp.W2"] = T.param(rng.normal(0, 0.02, (feat_dim * 2, feat_dim)))
    p[f"{prefix}.mlp.b2"] = T.param(np.zeros(feat_dim))
    p[f"{prefix}.cls.W"] = T.param(rng.normal(0, 0.02, (feat_dim, dcfg.num_classes + 1)))
    p[f"{prefix}.cls.b"] = T.param(np.zeros(dcfg.num_classes + 1))
    return p


def init_seg_decoder(dcfg, feat_dim, rng):
    p = _decoder_params("seg", dcfg, feat_dim, rng)
    p["seg.maskemb.W"] = T.param(rng.normal(0, 0.02, (feat_dim, dcfg.mask_dim)))
    p["seg.maskemb.b"] = T.param(np.zeros(dcfg.mask_dim))
    p["seg.pixel.W"] = T.param(rng.normal(0, 0.02, (feat_dim, dcfg.mask_dim)))
    p["seg.pixel.b"] = T.param(np.zeros(dcfg.mask_dim))
    return p


def init_det_decoder(dcfg, feat_dim, rng):
    p = _decoder_params("det", dcfg, feat_dim, rng)
    p["det.box.W"] = T.param(rng.normal(0, 0.02, (feat_dim, 4)))
    p["det.box.b"] = T.param(np.zeros(4))
    return p


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def _heads_split(x, heads):
    """(B, T, D) -> (B, heads, T, D/heads)."""
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _heads_join(x):
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def _attention(params, prefix, q_in, kv_in, heads):
    """Multi-head attention of q_in (B, Tq, D) over kv_in (B, Tk, D)."""
    d = q_in.shape[-1]
    q = _heads_split(T.matmul(q_in, params[f"{prefix}.Wq"]), heads)
    k = _heads_split(T.matmul(kv_in, params[f"{prefix}.Wk"]), heads)
    v = _heads_split(T.matmul(kv_in, params[f"{prefix}.Wv"]), heads)
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d / heads))
    out = T.matmul(T.softmax(scores), v)
    return T.add(T.matmul(_heads_join(out), params[f"{prefix}.Wo"]), params[f"{prefix}.bo"])


def _encoder_block(params, prefix, x, heads):
    h = T.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = T.add(x, _attention(params, f"{prefix}.attn", h, h, heads))
    h = T.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = T.matmul(T.gelu(T.add(T.matmul(h, params[f"{prefix}.mlp.W1"]),
                              params[f"{prefix}.mlp.b1"])), params[f"{prefix}.mlp.W2"])
    return T.add(x, T.add(h, params[f"{prefix}.mlp.b2"]))


def patchify(images, patch):
    """(B, H, W, 3) float -> (B, T, patch*patch*3) numpy array."""
    b, hh, ww, c = images.shape
    g1, g2 = hh // patch, ww // patch
    x = images.reshape(b, g1, patch, g2, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, g1 * g2, patch * patch * c)


def _pos_for_grid(params, cfg, grid):
    pos = params["enc.pos"]
    if grid == cfg.grid:
        return pos
    # interpolate the learned table when inference runs at another scale
    as_map = T.transpose(T.reshape(pos, (cfg.grid, cfg.grid, cfg.embed_dim)), (2, 0, 1))
    resized = T.resize_bilinear(as_map, (grid, grid))
    return T.reshape(T.transpose(resized, (1, 2, 0)), (grid * grid, cfg.embed_dim))


def vision_encode(images, params, cfg):
    """images (B, H, W, 3) in [0,1] -> (patch_features (B,T,D), pooled (B,joint)).

    H = W may differ from cfg.image_size (any multiple of the patch size);
    position embeddings are resized to the token grid.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] != 3 or images.shape[1] != images.shape[2]:
        raise ValueError(f"expected (B, H, H, 3) images, got {images.shape}")
    if images.shape[1] % cfg.patch_size:
        raise ValueError("image side must be a multiple of the patch size")
    grid = images.shape[1] // cfg.patch_size
    patches = T.Tensor(patchify(images, cfg.patch_size))
    x = T.add(T.matmul(patches, params["enc.patch.W"]), params["enc.patch.b"])
    x = T.add(x, _pos_for_grid(params, cfg, grid))
    for i in range(cfg.depth):
        x = _encoder_block(params, f"enc.block{i}", x, cfg.heads)
    feats = T.layer_norm(x, params["enc.ln_f.g"], params["enc.ln_f.b"])
    pooled = T.tmean(feats, axis=1)
    pooled = T.add(T.matmul(pooled, params["enc.proj.W"]), params["enc.proj.b"])
    return feats, T.l2_normalize(pooled)


def text_encode(tokens, params, cfg):
    """tokens (B, context) int ids -> L2-normalized embeddings (B, joint)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.shape[1] != cfg.context:
        raise ValueError(f"expected context length {cfg.context}, got {tokens.shape[1]}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")
    b = tokens.shape[0]
    x = T.reshape(T.gather(params["txt.embed"], tokens.reshape(-1)),
                  (b, cfg.context, cfg.width))
    x = T.add(x, params["txt.pos"])
    for i in range(cfg.depth):
        x = _encoder_block(params, f"txt.block{i}", x, cfg.heads)
    x = T.layer_norm(x, params["txt.ln_f.g"], params["txt.ln_f.b"])
    pooled = T.tmean(x, axis=1)
    pooled = T.add(T.matmul(pooled, params["txt.proj.W"]), params["txt.proj.b"])
    return T.l2_normalize(pooled)


def _query_decode(patch_feats, params, prefix, dcfg):
    b = patch_feats.shape[0]
    queries = T.broadcast_to(T.reshape(params[f"{prefix}.query"],
                                       (1,) + params[f"{prefix}.query"].shape),
                             (b,) + params[f"{prefix}.query"].shape)
    h = T.layer_norm(queries, params[f"{prefix}.ln_q.g"], params[f"{prefix}.ln_q.b"])
    x = T.add(queries, _attention(params, f"{prefix}.attn", h, patch_feats, dcfg.heads))
    h = T.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = T.matmul(T.gelu(T.add(T.matmul(h, params[f"{prefix}.mlp.W1"]),
                              params[f"{prefix}.mlp.b1"])), params[f"{prefix}.mlp.W2"])
    x = T.add(x, T.add(h, params[f"{prefix}.mlp.b2"]))
    cls = T.add(T.matmul(x, params[f"{prefix}.cls.W"]), params[f"{prefix}.cls.b"])
    return x, cls


def seg_decode(patch_feats, params, dcfg, out_hw=(64, 64)):
    """-> (class_logits (B,Q,S+1), mask_logits (B,Q,H,W)).

    Mask logits are query/pixel embedding dot products on the token grid,
    bilinearly upsampled to out_hw.
    """
    qfeat, cls = _query_decode(patch_feats, params, "seg", dcfg)
    memb = T.add(T.matmul(qfeat, params["seg.maskemb.W"]), params["seg.maskemb.b"])
    pix = T.add(T.matmul(patch_feats, params["seg.pixel.W"]), params["seg.pixel.b"])
    grid_logits = T.matmul(memb, T.transpose(pix, (0, 2, 1)))      # (B, Q, T)
    b, q, t = grid_logits.shape
    g = int(math.isqrt(t))
    coarse = T.reshape(grid_logits, (b, q, g, g))
    return cls, T.resize_bilinear(coarse, out_hw)


def det_decode(patch_feats, params, dcfg):
    """-> (class_logits (B,Q,S+1), boxes (B,Q,4) in [0,1] via sigmoid)."""
    qfeat, cls = _query_decode(patch_feats, params, "det", dcfg)
    boxes = T.sigmoid(T.add(T.matmul(qfeat, params["det.box.W"]), params["det.box.b"]))
    return cls, boxes


def assemble_semantic(class_logits, mask_logits):
    """Per-pixel class scores from one image's decoder outputs (numpy, no tape).

    score[s, i] = sum_q softmax(class_logits[q])[s] * sigmoid(mask_logits[q, i])
    over real classes s only; argmax ties go to the lowest class id.
    """
    cls = np.asarray(class_logits, dtype=np.float64)
    masks = np.asarray(mask_logits, dtype=np.float64)
    z = cls - cls.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)          # (Q, S+1)
    sig = 1.0 / (1.0 + np.exp(-masks))                # (Q, H, W)
    s = probs.shape[1] - 1
    return np.einsum("qs,qhw->shw", probs[:, :s], sig)


# ---------------------------------------------------------------------------
# freezing
# ---------------------------------------------------------------------------


def _encoder_group(name, depth):
    """-1 embeddings, block index, or `depth` for the final LN/projection."""
    if name.startswith(("enc.patch", "enc.pos")):
        return -1
    if name.startswith("enc.block"):
        return int(name.split(".")[1][len("block"):])
    if name.startswith(("enc.ln_f", "enc.proj")):
        return depth
    return None


def freeze(params, spec, depth):
    """Trainability mask per the cumulative-freeze ablation.

    early->deep: k blocks from the input side; patch/pos embeddings freeze
    with the first block, and the whole encoder (final LN + projection) is
    frozen at k == depth. deep->early: k blocks from the output side; the
    final LN/projection freeze with the deepest block. Decoders and the text
    tower stay trainable.
    """
    if spec.k < 0 or spec.k > depth:
        raise ValueError(f"freeze k={spec.k} outside [0, {depth}]")
    if spec.direction not in ("early", "deep"):
        raise ValueError("direction must be 'early' or 'deep'")
    mask = {}
    for name in params:
        group = _encoder_group(name, depth)
        if group is None:
            mask[name] = True
            continue
        if spec.direction == "early":
            if group == -1:
                frozen = spec.k >= 1
            elif group == depth:
                frozen = spec.k == depth
            else:
                frozen = group < spec.k
        else:
            if group == -1:
                frozen = spec.k == depth
            elif group == depth:
                frozen = spec.k >= 1
            else:
                frozen = group >= depth - spec.k
        mask[name] = not frozen
    return mask
