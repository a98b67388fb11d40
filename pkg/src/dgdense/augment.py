"""Augmentation recipes and the corruption benchmark.

Color-space RandAugment (the 9-op subset), PixMix with a procedural fractal
mixer bank, frequency-space amplitude jitter, base geometric/color training
augs, detection augs (Mosaic / Mixup / RandomAffine / RandomFlip), and the
8-type x 5-severity corruption suite with explicit parameter tables.

Everything is a pure function of (inputs, seed); images are uint8 HxWx3
except where a function documents float [0,1].
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .datagen import IGNORE_VALUE, substream


def _u8(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _luminance(img):
    return img @ np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# RandAugment, color ops only
# ---------------------------------------------------------------------------

RANDAUG_COLOR_OPS = (
    "color_transform", "auto_contrast", "equalize", "sharpness",
    "posterize", "solarize", "color", "contrast", "brightness",
)


def solarize(img, threshold):
    """Invert every pixel value >= threshold: out = 255 - v."""
    img = np.asarray(img)
    return np.where(img >= threshold, 255 - img.astype(np.int64), img).astype(np.uint8)


def posterize(img, bits):
    """Keep the top `bits` bits of each channel."""
    if not 1 <= bits <= 8:
        raise ValueError("posterize bits must be in 1..8")
    keep = 0xFF & ~((1 << (8 - bits)) - 1)
    return (np.asarray(img) & keep).astype(np.uint8)


def auto_contrast(img):
    out = np.empty_like(img)
    for c in range(3):
        ch = img[:, :, c].astype(np.float64)
        lo, hi = ch.min(), ch.max()
        out[:, :, c] = _u8((ch - lo) * (255.0 / (hi - lo))) if hi > lo else img[:, :, c]
    return out


def equalize(img):
    """Per-channel 256-bin histogram equalization."""
    out = np.empty_like(img)
    for c in range(3):
        ch = img[:, :, c]
        hist = np.bincount(ch.reshape(-1), minlength=256)
        cdf = hist.cumsum()
        nz = cdf[cdf > 0]
        if nz.size == 0 or nz[0] == cdf[-1]:
            out[:, :, c] = ch
            continue
        lut = np.rint((cdf - nz[0]) / (cdf[-1] - nz[0]) * 255.0).clip(0, 255)
        out[:, :, c] = lut.astype(np.uint8)[ch]
    return out


def _smooth3(img):
    f = img.astype(np.float64)
    pad = np.pad(f, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(f)
    kernel = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0
    for dy in range(3):
        for dx in range(3):
            acc += kernel[dy, dx] * pad[dy:dy + f.shape[0], dx:dx + f.shape[1]]
    return acc


def _enhance(base, img, factor):
    return _u8(base + factor * (img.astype(np.float64) - base))


def sample_color_ops(n_ops, magnitude, rng):
    """Draw n_ops (name, params) pairs from the 9-op color list."""
    if not 0 <= magnitude <= 10:
        raise ValueError("magnitude must be in [0, 10]")
    frac = magnitude / 10.0
    ops = []
    for _ in range(n_ops):
        name = RANDAUG_COLOR_OPS[int(rng.integers(0, len(RANDAUG_COLOR_OPS)))]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        if name == "solarize":
            params = {"threshold": int(round(255 - frac * 255))}
        elif name == "posterize":
            params = {"bits": int(round(8 - frac * 4))}
        elif name in ("sharpness", "color", "contrast", "brightness"):
            params = {"factor": 1.0 + sign * frac * 0.9}
        elif name == "color_transform":
            params = {"gain": 1.0 + rng.uniform(-1, 1, 3) * frac * 0.5,
                      "bias": rng.uniform(-1, 1, 3) * frac * 64.0}
        else:
            params = {}
        ops.append((name, params))
    return ops


def apply_color_op(img, name, params):
    if name == "solarize":
        return solarize(img, params["threshold"])
    if name == "posterize":
        return posterize(img, params["bits"])
    if name == "auto_contrast":
        return auto_contrast(img)
    if name == "equalize":
        return equalize(img)
    if name == "sharpness":
        return _enhance(_smooth3(img), img, params["factor"])
    if name == "color":
        return _enhance(_luminance(img)[:, :, None], img, params["factor"])
    if name == "contrast":
        return _enhance(_luminance(img).mean(), img, params["factor"])
    if name == "brightness":
        return _enhance(0.0, img, params["factor"])
    if name == "color_transform":
        return _u8(img.astype(np.float64) * params["gain"] + params["bias"])
    raise ValueError(f"unknown color op {name!r}; valid: {RANDAUG_COLOR_OPS}")


def rand_augment_color(img, n_ops, magnitude, seed):
    """Apply n_ops color-space ops sampled at the given magnitude.

    Purely photometric, so masks and boxes are untouched by design.
    """
    rng = substream(seed, 0xAA, 0)
    for name, params in sample_color_ops(n_ops, magnitude, rng):
        img = apply_color_op(img, name, params)
    return img


# ---------------------------------------------------------------------------
# PixMix
# ---------------------------------------------------------------------------


@dataclass
class MixerSet:
    bank: np.ndarray  # (n, H, W, 3) float [0,1]


def make_mixer_set(count, hw, seed):
    """Bank of fractal plasma images: octaves of upsampled noise, 1/f weights."""
    bank = np.empty((count, hw, hw, 3))
    for i in range(count):
        rng = substream(seed, 0xF1, i)
        img = np.zeros((3, hw, hw))
        size = 4
        octave = 0
        while size <= hw:
            noise = rng.standard_normal((3, size, size))
            img += kernels.resize_bilinear_fwd(np.ascontiguousarray(noise), hw, hw) / (2.0 ** octave)
            size *= 2
            octave += 1
        img -= img.min(axis=(1, 2), keepdims=True)
        peak = img.max(axis=(1, 2), keepdims=True)
        img = np.where(peak > 0, img / np.maximum(peak, 1e-12), img)
        bank[i] = img.transpose(1, 2, 0)
    return MixerSet(bank=bank)


def blend(a, b, lam, mode):
    """One mixing round on float [0,1] images.

    additive: convex combination (1-lam)*a + lam*b.
    multiplicative: geometric mean a^(1-lam) * b^lam on values clamped >= 1e-3.
    """
    if mode == "additive":
        return (1.0 - lam) * a + lam * b
    if mode == "multiplicative":
        return np.power(np.maximum(a, 1e-3), 1.0 - lam) * np.power(np.maximum(b, 1e-3), lam)
    raise ValueError(f"unknown blend mode {mode!r}")


def pixmix(img01, mixers, k=4, beta=3.0, seed=0, augment=True):
    """Up to k mixing rounds against augmented copies or fractal mixers."""
    if mixers is None or len(mixers.bank) == 0:
        raise ValueError("pixmix needs a non-empty mixer set")
    rng = substream(seed, 0xB1, 0)
    out = np.asarray(img01, dtype=np.float64)
    rounds = int(rng.integers(0, k + 1))
    for _ in range(rounds):
        if augment and rng.random() < 0.5:
            ops = sample_color_ops(1, 5.0, rng)
            src = apply_color_op(_u8(out * 255.0), *ops[0]).astype(np.float64) / 255.0
        else:
            src = mixers.bank[int(rng.integers(0, len(mixers.bank)))]
        lam = float(rng.beta(beta, beta))
        mode = "additive" if rng.random() < 0.5 else "multiplicative"
        out = np.clip(blend(out, src, lam, mode), 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# frequency-space amplitude jitter
# ---------------------------------------------------------------------------


def pasta(img01, alpha=3.0, kappa=2.0, seed=0, clip=True):
    """Per-channel FFT; amplitude scaled by (1 + eps), eps ~ N(0, sigma(f)),
    sigma(f) = alpha * (|f| / |f|_max)^kappa; phase untouched; inverse FFT.

    The multiplier is clamped to >= 1e-9: a negative draw would flip the
    phase by pi, and the contract is exact phase preservation.
    """
    img = np.asarray(img01, dtype=np.float64)
    h, w = img.shape[:2]
    if h & (h - 1) or w & (w - 1):
        raise ValueError(f"image side must be a power of two, got {h}x{w}")
    rng = substream(seed, 0xFA, 0)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    radius = np.sqrt(fy * fy + fx * fx)
    sigma = alpha * (radius / radius.max()) ** kappa
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        spec = np.fft.rfft2(img[:, :, c])
        mult = np.maximum(1.0 + rng.standard_normal(spec.shape) * sigma, 1e-9)
        # the kx=0 and kx=Nyquist columns pair (ky, -ky) internally; the
        # multiplier must match on each pair or irfft2's symmetrization
        # would shift phases
        for col in (0, mult.shape[1] - 1):
            for ky in range(1, h // 2):
                mult[h - ky, col] = mult[ky, col]
        out[:, :, c] = np.fft.irfft2(spec * mult, s=(h, w))
    return np.clip(out, 0.0, 1.0) if clip else out


# ---------------------------------------------------------------------------
# base training augs (sample = image u8, mask, boxes)
# ---------------------------------------------------------------------------


def hflip_sample(image, mask, boxes):
    return (np.ascontiguousarray(image[:, ::-1]),
            np.ascontiguousarray(mask[:, ::-1]),
            [(c, 1.0 - cx, cy, w, h) for (c, cx, cy, w, h) in boxes])


def _resize_image(image, out_hw):
    chans = np.ascontiguousarray(image.astype(np.float64).transpose(2, 0, 1))
    out = kernels.resize_bilinear_fwd(chans, out_hw, out_hw)
    return _u8(out.transpose(1, 2, 0))


def _resize_mask(mask, out_hw):
    h, w = mask.shape
    ys = np.minimum((np.arange(out_hw) + 0.5) * h / out_hw, h - 1).astype(np.int64)
    xs = np.minimum((np.arange(out_hw) + 0.5) * w / out_hw, w - 1).astype(np.int64)
    return mask[ys[:, None], xs[None, :]]


def _crop_boxes(boxes, ox, oy, src, crop):
    out = []
    for (c, cx, cy, w, h) in boxes:
        x0 = max(cx * src - w * src / 2, ox)
        x1 = min(cx * src + w * src / 2, ox + crop)
        y0 = max(cy * src - h * src / 2, oy)
        y1 = min(cy * src + h * src / 2, oy + crop)
        if x1 - x0 < 2.0 or y1 - y0 < 2.0:
            continue
        out.append((c, ((x0 + x1) / 2 - ox) / crop, ((y0 + y1) / 2 - oy) / crop,
                    (x1 - x0) / crop, (y1 - y0) / crop))
    return out


def base_augs(image, mask, boxes, seed, crop=None, jitter=0.15, scale_max=1.5):
    """Random resize + crop + horizontal flip + color jitter; mask and boxes
    follow the same geometry."""
    rng = substream(seed, 0xBA, 0)
    side = image.shape[0]
    crop = crop or side
    scale = float(rng.uniform(1.0, scale_max))
    resized = max(crop, int(round(side * scale)))
    if resized != side:
        image = _resize_image(image, resized)
        mask = _resize_mask(mask, resized)
    if resized < crop:
        raise ValueError("crop larger than resized image")
    ox = int(rng.integers(0, resized - crop + 1))
    oy = int(rng.integers(0, resized - crop + 1))
    image = image[oy:oy + crop, ox:ox + crop]
    mask = mask[oy:oy + crop, ox:ox + crop]
    boxes = _crop_boxes(boxes, ox, oy, resized, crop)
    if rng.random() < 0.5:
        image, mask, boxes = hflip_sample(image, mask, boxes)
    if jitter > 0:
        img = image.astype(np.float64)
        img = _enhance(0.0, img, 1.0 + float(rng.uniform(-jitter, jitter)))
        img = _enhance(_luminance(img).mean(), img, 1.0 + float(rng.uniform(-jitter, jitter)))
        image = _enhance(_luminance(img)[:, :, None], img, 1.0 + float(rng.uniform(-jitter, jitter)))
    return image, mask, boxes


# ---------------------------------------------------------------------------
# detection augs
# ---------------------------------------------------------------------------


def _tan_deg(deg):
    return float(np.tan(np.deg2rad(deg)))


def mosaic(samples, seed=0):
    """2x2 paste of exactly 4 (image, mask, boxes) samples at half scale."""
    if len(samples) != 4:
        raise ValueError(f"mosaic requires exactly 4 samples, got {len(samples)}")
    side = samples[0][0].shape[0]
    half = side // 2
    image = np.zeros((side, side, 3), dtype=np.uint8)
    mask = np.zeros((side, side), dtype=np.uint8)
    boxes = []
    for idx, (img, msk, bxs) in enumerate(samples):
        qy, qx = divmod(idx, 2)
        oy, ox = qy * half, qx * half
        image[oy:oy + half, ox:ox + half] = _resize_image(img, half)
        mask[oy:oy + half, ox:ox + half] = _resize_mask(msk, half)
        for (c, cx, cy, w, h) in bxs:
            nw, nh = w / 2, h / 2
            ncx, ncy = cx / 2 + qx * 0.5, cy / 2 + qy * 0.5
            if nw * side >= 2 and nh * side >= 2:
                boxes.append((c, ncx, ncy, nw, nh))
    return image, mask, boxes


def mixup(sample_a, sample_b, lam):
    """Convex image blend; boxes are the union; mask from the dominant image."""
    img_a, mask_a, boxes_a = sample_a
    img_b, mask_b, boxes_b = sample_b
    img = _u8(lam * img_a.astype(np.float64) + (1.0 - lam) * img_b.astype(np.float64))
    mask = mask_a if lam >= 0.5 else mask_b
    return img, mask.copy(), list(boxes_a) + list(boxes_b)


def random_affine(sample, seed=0, max_scale=0.2, max_translate=0.15, max_shear=8.0,
                  params=None):
    """Scale/translate/shear the image, mask and boxes with one affine map.

    Boxes become the axis-aligned hull of their transformed corners; boxes
    clipped to the canvas and anything under 2 px wide/tall is dropped.
    """
    image, mask, boxes = sample
    side = image.shape[0]
    if params is None:
        rng = substream(seed, 0xAF, 0)
        scale = 1.0 + float(rng.uniform(-max_scale, max_scale))
        tx = float(rng.uniform(-max_translate, max_translate)) * side
        ty = float(rng.uniform(-max_translate, max_translate)) * side
        shear = _tan_deg(float(rng.uniform(-max_shear, max_shear)))
    else:
        scale = params.get("scale", 1.0)
        tx = params.get("tx", 0.0)
        ty = params.get("ty", 0.0)
        shear = _tan_deg(params.get("shear_deg", 0.0))
    ctr = (side - 1) / 2.0
    fwd = np.array([[scale, shear * scale, 0.0],
                    [0.0, scale, 0.0]])
    fwd[0, 2] = ctr - fwd[0, 0] * ctr - fwd[0, 1] * ctr + tx
    fwd[1, 2] = ctr - fwd[1, 0] * ctr - fwd[1, 1] * ctr + ty
    full = np.vstack([fwd, [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(full)[:2]
    img = kernels.affine_warp(np.ascontiguousarray(image.astype(np.float64)), inv,
                              side, side, 0.0, True)
    msk = kernels.affine_warp(np.ascontiguousarray(mask.astype(np.float64)[:, :, None]),
                              inv, side, side, float(IGNORE_VALUE), False)[:, :, 0]
    out_boxes = []
    for (c, cx, cy, w, h) in boxes:
        xs = np.array([cx - w / 2, cx + w / 2, cx + w / 2, cx - w / 2]) * side
        ys = np.array([cy - h / 2, cy - h / 2, cy + h / 2, cy + h / 2]) * side
        nx = fwd[0, 0] * xs + fwd[0, 1] * ys + fwd[0, 2]
        ny = fwd[1, 0] * xs + fwd[1, 1] * ys + fwd[1, 2]
        x0, x1 = np.clip([nx.min(), nx.max()], 0, side)
        y0, y1 = np.clip([ny.min(), ny.max()], 0, side)
        if x1 - x0 < 2.0 or y1 - y0 < 2.0:
            continue
        out_boxes.append((c, (x0 + x1) / 2 / side, (y0 + y1) / 2 / side,
                          (x1 - x0) / side, (y1 - y0) / side))
    return _u8(img), msk.astype(np.uint8), out_boxes


def random_flip(sample, seed=0):
    image, mask, boxes = sample
    if substream(seed, 0xFB, 0).random() < 0.5:
        return hflip_sample(image, mask, boxes)
    return image, mask, boxes


def detection_augs(samples, seed=0):
    """Default detection pipeline: Mosaic (4 samples), optional Mixup when 8
    samples are given, RandomAffine, RandomFlip."""
    if len(samples) < 4:
        raise ValueError("detection_augs needs at least 4 samples")
    out = mosaic(samples[:4], seed)
    if len(samples) >= 8:
        other = mosaic(samples[4:8], seed + 1)
        lam = float(substream(seed, 0xD3, 0).beta(8.0, 8.0))
        out = mixup(out, other, lam)
    out = random_affine(out, seed)
    return random_flip(out, seed)


# ---------------------------------------------------------------------------
# corruption suite
# ---------------------------------------------------------------------------

CORRUPTION_TABLE = {
    # parameter per severity 1..5; strictly monotone per type
    "gaussian_noise": [0.04, 0.06, 0.08, 0.11, 0.14],    # additive std, [0,1] scale
    "shot_noise": [120.0, 80.0, 50.0, 30.0, 18.0],       # photon count scale
    "impulse_noise": [0.02, 0.04, 0.07, 0.11, 0.16],     # salt/pepper fraction
    "defocus_blur": [1.0, 1.5, 2.0, 2.5, 3.0],           # disk radius px
    "motion_blur": [3.0, 5.0, 7.0, 9.0, 11.0],           # kernel length px
    "fog": [0.15, 0.25, 0.35, 0.45, 0.55],               # plasma blend weight
    "brightness": [0.08, 0.14, 0.20, 0.26, 0.32],        # additive lift
    "contrast": [0.75, 0.60, 0.45, 0.33, 0.24],          # scale toward mean
}

CORRUPTION_TYPES = tuple(CORRUPTION_TABLE)


@dataclass(frozen=True)
class CorruptionSpec:
    type: str
    severity: int

    def __post_init__(self):
        if self.type not in CORRUPTION_TABLE:
            raise ValueError(f"unknown corruption {self.type!r}; "
                             f"valid types: {', '.join(CORRUPTION_TYPES)}")
        if not 1 <= self.severity <= 5:
            raise ValueError("severity must be in 1..5")

    @property
    def param(self):
        return CORRUPTION_TABLE[self.type][self.severity - 1]


def _convolve(img, kern):
    kh, kw = kern.shape
    py, px = kh // 2, kw // 2
    pad = np.pad(img, ((py, py), (px, px), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for dy in range(kh):
        for dx in range(kw):
            if kern[dy, dx] != 0.0:
                out += kern[dy, dx] * pad[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out


def _disk_kernel(radius):
    r = int(np.ceil(radius))
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1]
    k = (ys * ys + xs * xs <= radius * radius).astype(np.float64)
    return k / k.sum()


def _motion_kernel(length, angle):
    r = int(length) // 2
    size = 2 * r + 1
    k = np.zeros((size, size))
    c, s = np.cos(angle), np.sin(angle)
    for t in np.linspace(-r, r, 4 * size):
        x = int(round(r + t * c))
        y = int(round(r + t * s))
        k[y, x] = 1.0
    return k / k.sum()


def corrupt(image, spec, seed=0):
    """Apply one corruption at the table parameter for (type, severity)."""
    if not isinstance(spec, CorruptionSpec):
        raise TypeError("spec must be a CorruptionSpec")
    # stream independent of severity: a fixed seed varies only the parameter,
    # so distance to the clean image grows monotonically with severity
    rng = substream(seed, 0xC0, 0)
    x = np.asarray(image, dtype=np.float64) / 255.0
    p = spec.param
    if spec.type == "gaussian_noise":
        out = x + rng.standard_normal(x.shape) * p
    elif spec.type == "shot_noise":
        out = rng.poisson(np.clip(x, 0, 1) * p) / p
    elif spec.type == "impulse_noise":
        out = x.copy()
        hit = rng.random(x.shape[:2]) < p
        salt = rng.random(x.shape[:2]) < 0.5
        out[hit & salt] = 1.0
        out[hit & ~salt] = 0.0
    elif spec.type == "defocus_blur":
        out = _convolve(x, _disk_kernel(p))
    elif spec.type == "motion_blur":
        out = _convolve(x, _motion_kernel(p, rng.uniform(0, np.pi)))
    elif spec.type == "fog":
        layer = make_mixer_set(1, x.shape[0], seed).bank[0]
        out = (1 - p) * x + p * (0.6 + 0.4 * layer)
    elif spec.type == "brightness":
        out = x + p
    elif spec.type == "contrast":
        out = x.mean() + (x - x.mean()) * p
    else:  # unreachable given CorruptionSpec validation
        raise ValueError(spec.type)
    return _u8(out * 255.0)
