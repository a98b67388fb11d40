"""Procedural multi-domain scenes: one source domain plus K appearance-shifted
target domains with identical semantics, and scene captions that ignore the
domain with probability p.

Appearance shifts are per-pixel invertible maps (gamma, color affine, constant
fog blend) composed as

    y = (1 - a) * (gain * x**gamma + bias) + a * fog_color

so masks and boxes never depend on the style, and the shift can be undone
exactly on continuous values. Randomly sampled styles couple (gain, bias, a,
fog_color) so that [0,1] maps into [0,1] and 8-bit storage stays faithful.

All randomness is counter-based: every sample derives from (global seed,
stream tag, index) through Philox, so generation order never matters.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

IMAGE_SIZE = 64
CHANNELS = 3
NUM_CLASSES = 8            # class 0 is background
IGNORE_VALUE = 255
CAPTION_LEN = 13
VOCAB_SIZE = 64

CLASS_WORDS = ["field", "disc", "box", "wedge", "ring", "cross", "diamond", "bar"]
COUNT_WORDS = ["one", "two", "three", "four", "five", "six"]
POSITION_WORDS = ["left", "right", "top", "bottom", "middle"]
FILLER_WORDS = ["scene", "with", "and", "at"]

PAD_TOKEN = 0
_CLASS_BASE = 1            # 1..8
_COUNT_BASE = 9            # 9..14
_POS_BASE = 15             # 15..19
_FILLER_BASE = 20          # 20..23
DOMAIN_TOKEN_BASE = 24     # 24..47, one descriptor per style id
MAX_STYLES = 24

PALETTE = np.array([
    [0.72, 0.72, 0.70],    # background
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.35, 0.85],
    [0.90, 0.85, 0.20],
    [0.80, 0.25, 0.80],
    [0.20, 0.80, 0.80],
    [0.90, 0.55, 0.15],
])


def substream(seed, tag, index):
    """Deterministic Generator for (seed, tag, index); order-independent."""
    mask = 0xFFFFFFFFFFFFFFFF
    k0 = (int(seed) ^ (int(tag) * 0x9E3779B97F4A7C15)) & mask
    key = np.array([k0, int(index) & mask], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SceneObject:
    cls: int
    shape: str
    cx: float
    cy: float
    size: float
    z: int
    shade: float


@dataclass
class Scene:
    objects: list
    bg_seed: int


@dataclass(frozen=True)
class DomainStyle:
    k: int
    gain: tuple
    bias: tuple
    gamma: float
    fog_a: float
    fog_color: tuple

    def __post_init__(self):
        if min(self.gain) <= 0:
            raise ValueError("style gain must be > 0 (bijectivity)")
        if not 0.0 <= self.fog_a < 1.0:
            raise ValueError("fog coefficient must be in [0, 1)")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")


IDENTITY_STYLE = DomainStyle(k=0, gain=(1.0, 1.0, 1.0), bias=(0.0, 0.0, 0.0),
                             gamma=1.0, fog_a=0.0, fog_color=(0.0, 0.0, 0.0))


def style_for_domain(k, seed):
    """Style k of the world with the given seed; k = 0 is the identity."""
    if k == 0:
        return IDENTITY_STYLE
    if k >= MAX_STYLES:
        raise ValueError(f"at most {MAX_STYLES} styles (got k={k})")
    rng = substream(seed, 0x51, k)
    gamma = float(rng.uniform(0.6, 1.8))
    a = float(rng.uniform(0.08, 0.55))
    fog = rng.uniform(0.25, 0.9, size=3)
    gain = np.empty(3)
    bias = np.empty(3)
    for c in range(3):
        b_lo = max(-0.2, -a * fog[c] / (1.0 - a) * 0.95)
        bias[c] = rng.uniform(b_lo, 0.2)
        g_hi = ((1.0 - a * fog[c]) / (1.0 - a) - bias[c]) * 0.98
        gain[c] = rng.uniform(0.5, min(2.0, g_hi))
    return DomainStyle(k=k, gain=tuple(gain), bias=tuple(bias), gamma=gamma,
                       fog_a=a, fog_color=tuple(fog))


def apply_shift(img01, style):
    """Forward appearance shift on float pixels in [0, 1]."""
    x = np.asarray(img01, dtype=np.float64)
    gain = np.asarray(style.gain)
    bias = np.asarray(style.bias)
    fog = np.asarray(style.fog_color)
    y = gain * np.power(x, style.gamma) + bias
    return (1.0 - style.fog_a) * y + style.fog_a * fog


def invert_shift(img01, style):
    """Exact inverse of apply_shift on continuous values."""
    y = np.asarray(img01, dtype=np.float64)
    gain = np.asarray(style.gain)
    bias = np.asarray(style.bias)
    fog = np.asarray(style.fog_color)
    t = ((y - style.fog_a * fog) / (1.0 - style.fog_a) - bias) / gain
    return np.power(np.maximum(t, 0.0), 1.0 / style.gamma)


@dataclass
class DatasetConfig:
    n_train: int = 64
    n_val: int = 24
    k_targets: int = 3
    num_classes: int = NUM_CLASSES
    caption_p: float = 1.0
    seed: int = 0
    max_objects: int = 5
    n_pretrain: int = 256
    pretrain_extra_styles: int = 6
    class_priors: tuple = (1.0,) * (NUM_CLASSES - 1)

    def __post_init__(self):
        if self.num_classes != NUM_CLASSES:
            raise ValueError("class count is fixed at 8")
        if not 0.0 <= self.caption_p <= 1.0:
            raise ValueError("caption invariance probability must be in [0, 1]")
        if 1 + self.k_targets + self.pretrain_extra_styles > MAX_STYLES:
            raise ValueError("too many styles for the descriptor vocabulary")

    def pretrain_style_ids(self):
        """Source plus held-out styles; fine-tune targets 1..K never appear."""
        extras = [self.k_targets + 1 + i for i in range(self.pretrain_extra_styles)]
        return [0] + extras


_SHAPES = [None, "disc", "box", "wedge", "ring", "cross", "diamond", "bar"]


def gen_scene(seed, config):
    """Deterministic scene for one sample index (used as the stream index)."""
    rng = substream(config.seed, 0x5C, seed)
    n_obj = int(rng.integers(0, config.max_objects + 1))
    priors = np.asarray(config.class_priors, dtype=np.float64)
    priors = priors / priors.sum()
    objects = []
    for z in range(n_obj):
        cls = int(rng.choice(np.arange(1, NUM_CLASSES), p=priors))
        objects.append(SceneObject(
            cls=cls,
            shape=_SHAPES[cls],
            cx=float(rng.uniform(0.15, 0.85)),
            cy=float(rng.uniform(0.15, 0.85)),
            size=float(rng.uniform(0.12, 0.30)),
            z=z,
            shade=float(rng.uniform(0.85, 1.05)),
        ))
    return Scene(objects=objects, bg_seed=int(rng.integers(0, 2 ** 31)))


def _shape_mask(obj, xx, yy):
    dx = xx - obj.cx
    dy = yy - obj.cy
    s = obj.size
    if obj.shape == "disc":
        return dx * dx + dy * dy <= (s / 2) ** 2
    if obj.shape == "box":
        return (np.abs(dx) <= s / 2) & (np.abs(dy) <= s / 2)
    if obj.shape == "wedge":
        h = s
        inside_y = (dy >= -h / 2) & (dy <= h / 2)
        half_w = (dy + h / 2) / h * (s / 2)
        return inside_y & (np.abs(dx) <= half_w)
    if obj.shape == "ring":
        r2 = dx * dx + dy * dy
        return (r2 <= (s / 2) ** 2) & (r2 >= (0.55 * s / 2) ** 2)
    if obj.shape == "cross":
        arm = s / 6
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= s / 2)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= s / 2))
    if obj.shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= s / 2
    if obj.shape == "bar":
        return (np.abs(dx) <= s / 2) & (np.abs(dy) <= s / 8)
    raise ValueError(f"unknown shape {obj.shape!r}")


def render_canonical(scene, hw=IMAGE_SIZE):
    """Canonical-palette rendering. Returns (image01, mask, boxes)."""
    coords = (np.arange(hw) + 0.5) / hw
    xx, yy = np.meshgrid(coords, coords)
    bg_rng = np.random.Generator(np.random.Philox(key=np.array(
        [np.uint64(scene.bg_seed), np.uint64(0xB6)], dtype=np.uint64)))
    gx, gy = bg_rng.uniform(-0.06, 0.06, size=2)
    img = PALETTE[0][None, None, :] + (gx * xx + gy * yy)[:, :, None]
    mask = np.zeros((hw, hw), dtype=np.uint8)
    inst = np.full((hw, hw), -1, dtype=np.int64)
    for i, obj in enumerate(sorted(scene.objects, key=lambda o: o.z)):
        region = _shape_mask(obj, xx, yy)
        img[region] = PALETTE[obj.cls] * obj.shade
        mask[region] = obj.cls
        inst[region] = i
    boxes = []
    for i, obj in enumerate(sorted(scene.objects, key=lambda o: o.z)):
        ys, xs = np.nonzero(inst == i)
        if ys.size == 0:
            continue  # fully occluded
        x0, x1 = xs.min(), xs.max()
        y0, y1 = ys.min(), ys.max()
        boxes.append((obj.cls,
                      (x0 + x1 + 1) / 2 / hw, (y0 + y1 + 1) / 2 / hw,
                      (x1 - x0 + 1) / hw, (y1 - y0 + 1) / hw))
    return np.clip(img, 0.0, 1.0), mask, boxes


def render(scene, style, hw=IMAGE_SIZE):
    """Styled rendering: appearance varies with the style, semantics do not."""
    canon, mask, boxes = render_canonical(scene, hw)
    shifted = apply_shift(canon, style)
    image = np.clip(np.rint(shifted * 255.0), 0, 255).astype(np.uint8)
    return image, mask, boxes


def _position_word(cx, cy):
    if cx < 0.4:
        return _POS_BASE + 0
    if cx > 0.6:
        return _POS_BASE + 1
    if cy < 0.4:
        return _POS_BASE + 2
    if cy > 0.6:
        return _POS_BASE + 3
    return _POS_BASE + 4


def caption(scene, style, p, seed):
    """Token sequence for the scene; with probability 1-p the style's domain
    descriptor is appended, so captions then differ across styles."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    tokens = [_FILLER_BASE + 0]  # "scene"
    by_class = {}
    for obj in scene.objects:
        by_class.setdefault(obj.cls, []).append(obj)
    # 3 groups of 3 tokens + lead + optional domain word stays within 13
    for cls in sorted(by_class)[:3]:
        group = by_class[cls]
        count = min(len(group), len(COUNT_WORDS))
        mx = sum(o.cx for o in group) / len(group)
        my = sum(o.cy for o in group) / len(group)
        tokens += [_COUNT_BASE + count - 1, _CLASS_BASE + cls, _position_word(mx, my)]
    if not by_class:
        tokens.append(_CLASS_BASE + 0)  # "field"
    rng = substream(seed, 0xCA, scene.bg_seed)
    if rng.random() >= p:
        tokens.append(DOMAIN_TOKEN_BASE + style.k)
    tokens = tokens[:CAPTION_LEN]
    out = np.zeros(CAPTION_LEN, dtype=np.int64)
    out[:len(tokens)] = tokens
    return out


@dataclass
class SampleRecord:
    sample_id: str
    domain: int
    image: np.ndarray          # (H, W, 3) uint8
    mask: np.ndarray           # (H, W) uint8, 255 = ignore
    boxes: list                # (class, cx, cy, w, h) normalized
    caption: np.ndarray        # (13,) int token ids


def make_record(config, scene_index, scene, domain):
    style = style_for_domain(domain, config.seed)
    scene_obj = scene if scene is not None else gen_scene(scene_index, config)
    image, mask, boxes = render(scene_obj, style)
    cap = caption(scene_obj, style, config.caption_p, config.seed)
    return SampleRecord(sample_id=f"{scene_index:06d}_d{domain}", domain=domain,
                        image=image, mask=mask, boxes=boxes, caption=cap)


# scene index ranges per split keep train/val/pretrain content disjoint
_VAL_OFFSET = 1_000_000
_PRETRAIN_OFFSET = 2_000_000


def generate_split(config, split):
    """Records for one split: train (source only), val (source + K targets,
    same scenes per domain), pretrain (source + held-out styles)."""
    records = []
    if split == "train":
        for i in range(config.n_train):
            records.append(make_record(config, i, None, 0))
    elif split == "val":
        for i in range(config.n_val):
            idx = _VAL_OFFSET + i
            scene = gen_scene(idx, config)
            for k in range(config.k_targets + 1):
                records.append(make_record(config, idx, scene, k))
    elif split == "pretrain":
        pool = config.pretrain_style_ids()
        for i in range(config.n_pretrain):
            idx = _PRETRAIN_OFFSET + i
            scene = gen_scene(idx, config)
            rng = substream(config.seed, 0x57, idx)
            picks = rng.choice(len(pool), size=min(2, len(pool)), replace=False)
            for j in sorted(picks):
                records.append(make_record(config, idx, scene, pool[j]))
    else:
        raise ValueError(f"unknown split {split!r}")
    return records


# ---------------------------------------------------------------------------
# on-disk format: index.tsv + <id>.ppm / .pgm / .boxes / .caption
# ---------------------------------------------------------------------------


def _write_pnm(path, magic, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.astype(np.uint8).tobytes())


def _read_pnm(path, magic):
    with open(path, "rb") as f:
        buf = f.read()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != magic.encode("ascii"):
        raise ValueError(f"{path}: bad header at byte 0 (expected {magic})")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as e:
        raise ValueError(f"{path}: bad header at byte {len(parts[0]) + 1}") from e
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    depth = 3 if magic == "P6" else 1
    data = parts[3]
    expect = w * h * depth
    if len(data) != expect:
        raise ValueError(f"{path}: payload is {len(data)} bytes at byte "
                         f"{len(buf) - len(data)}, expected {expect}")
    arr = np.frombuffer(data, np.uint8)
    return arr.reshape((h, w, 3) if depth == 3 else (h, w)).copy()


def export_dataset(records, directory):
    os.makedirs(directory, exist_ok=True)
    lines = []
    for rec in records:
        stem = rec.sample_id
        _write_pnm(os.path.join(directory, stem + ".ppm"), "P6", rec.image)
        _write_pnm(os.path.join(directory, stem + ".pgm"), "P5", rec.mask)
        with open(os.path.join(directory, stem + ".boxes"), "w") as f:
            for cls, cx, cy, w, h in rec.boxes:
                f.write(f"{int(cls)} {cx:.8f} {cy:.8f} {w:.8f} {h:.8f}\n")
        with open(os.path.join(directory, stem + ".caption"), "w") as f:
            f.write(" ".join(str(int(t)) for t in rec.caption) + "\n")
        lines.append(f"{rec.sample_id}\t{rec.domain}\t{stem}\n")
    with open(os.path.join(directory, "index.tsv"), "w") as f:
        f.writelines(lines)


def import_dataset(directory):
    index = os.path.join(directory, "index.tsv")
    records = []
    with open(index) as f:
        for lineno, line in enumerate(f):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise ValueError(f"{index}: line {lineno + 1} has {len(fields)} fields")
            sample_id, domain, stem = fields
            image = _read_pnm(os.path.join(directory, stem + ".ppm"), "P6")
            mask = _read_pnm(os.path.join(directory, stem + ".pgm"), "P5")
            boxes = []
            bpath = os.path.join(directory, stem + ".boxes")
            with open(bpath) as bf:
                for bline in bf:
                    vals = bline.split()
                    if len(vals) != 5:
                        raise ValueError(f"{bpath}: malformed box line {bline!r}")
                    boxes.append((int(vals[0]),) + tuple(float(v) for v in vals[1:]))
            with open(os.path.join(directory, stem + ".caption")) as cf:
                cap = np.array([int(t) for t in cf.read().split()], dtype=np.int64)
            records.append(SampleRecord(sample_id=sample_id, domain=int(domain),
                                        image=image, mask=mask, boxes=boxes, caption=cap))
    return records
