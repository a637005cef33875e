"""Synthetic matting data: compositing, distractors, augmentation, background shift.

Arrays are float64 H x W x 3 images in [0, 1] and H x W alphas. Randomness comes
from counter-based Philox generators keyed by ``SeedSequence((seed, index))`` so
every sample can be regenerated from its recorded seed alone.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage
from skimage import color

from .errors import ShapeError


def make_rng(seed: int, *index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *index])))


def sample_seed(seed: int, index: int) -> int:
    """Child seed for sample ``index`` of a run seeded with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@dataclass
class ImageSample:
    image: np.ndarray
    background: np.ndarray
    alpha: np.ndarray
    frame_index: int | None = None
    foreground: np.ndarray | None = None  # kept when the sample was composited from layers
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.alpha.shape[:2]
        for name in ("image", "background"):
            arr = getattr(self, name)
            if arr.shape[:2] != (h, w):
                raise ShapeError(f"{name} is {arr.shape[:2]}, alpha is {(h, w)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape[:2]


def _alpha3(alpha):
    a = np.asarray(alpha, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def composite(fg, alpha, bg) -> np.ndarray:
    """alpha * fg + (1 - alpha) * bg, clamped to [0, 1]."""
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    a = _alpha3(alpha)
    if fg.shape != bg.shape or a.shape[:2] != fg.shape[:2]:
        raise ShapeError(f"fg {fg.shape}, alpha {a.shape}, bg {bg.shape} do not match")
    return np.clip(a * fg + (1 - a) * bg, 0.0, 1.0)


def place_layer(shape, fg, alpha, top: int, left: int):
    """Full-canvas (fg, alpha) layers with the cutout's top-left at (top, left), cropped to the canvas."""
    h, w = shape
    big_fg = np.zeros((h, w, 3))
    big_a = np.zeros((h, w))
    fh, fw = alpha.shape[:2]
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + fh, h), min(left + fw, w)
    if y1 > y0 and x1 > x0:
        big_fg[y0:y1, x0:x1] = fg[y0 - top:y1 - top, x0 - left:x1 - left]
        big_a[y0:y1, x0:x1] = np.squeeze(alpha)[y0 - top:y1 - top, x0 - left:x1 - left]
    return big_fg, big_a


def _rescale(fg, alpha, factor):
    if factor == 1.0:
        return fg, np.squeeze(alpha)
    fh, fw = alpha.shape[:2]
    size = (max(1, round(fw * factor)), max(1, round(fh * factor)))
    fg = cv2.resize(fg, size, interpolation=cv2.INTER_LINEAR)
    alpha = cv2.resize(np.squeeze(alpha).astype(np.float64), size, interpolation=cv2.INTER_LINEAR)
    return np.clip(fg, 0, 1), np.clip(alpha, 0, 1)


def _random_placements(rng, canvas, pool, count, scale_range):
    h, w = canvas
    out = []
    for _ in range(count):
        idx = int(rng.integers(len(pool)))
        factor = float(rng.uniform(*scale_range))
        fh, fw = _rescale(*pool[idx], factor)[1].shape[:2]
        # keep at least half of the cutout on the canvas
        top = int(rng.integers(-(fh // 2), h - fh // 2 + 1))
        left = int(rng.integers(-(fw // 2), w - fw // 2 + 1))
        out.append({"index": idx, "scale": factor, "top": top, "left": left})
    return out


def insert_distractors(bg, fg_pool, count: int, seed: int, scale_range=(0.5, 1.0)):
    """Composite ``count`` random cutouts from ``fg_pool`` into ``bg``.

    The result is meant to serve as both the model's background input and the
    compositing base, so the distractors are background by construction.
    Returns the new plate and the list of placements used.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    out = np.asarray(bg, dtype=np.float64).copy()
    if count == 0:
        return out, []
    if not fg_pool:
        raise ValueError("distractor pool is empty")
    rng = make_rng(seed, 1)
    placements = _random_placements(rng, out.shape[:2], fg_pool, count, scale_range)
    for p in placements:
        fg, a = _rescale(*fg_pool[p["index"]], p["scale"])
        lf, la = place_layer(out.shape[:2], fg, a, p["top"], p["left"])
        out = composite(lf, la, out)
    return out, placements


# --- geometric and photometric augmentation ---------------------------------

def affine_matrix(angle_deg: float, scale: float, shear: float) -> np.ndarray:
    """2x2 forward transform in (x, y): rotation @ shear @ isotropic scale."""
    t = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    return rot @ sh @ (scale * np.eye(2))


def affine_warp(img, angle_deg: float = 0.0, scale: float = 1.0, shear: float = 0.0,
                flip: bool = False) -> np.ndarray:
    """Center-anchored warp with bilinear sampling and edge replication."""
    img = np.asarray(img, dtype=np.float64)
    if flip:
        img = img[:, ::-1]
    if angle_deg == 0.0 and scale == 1.0 and shear == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    m_xy = affine_matrix(angle_deg, scale, shear)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    inv_rc = swap @ np.linalg.inv(m_xy) @ swap
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = center - inv_rc @ center

    def warp2d(ch):
        return ndimage.affine_transform(ch, inv_rc, offset=offset, order=1, mode="nearest")

    if img.ndim == 2:
        return warp2d(img)
    return np.stack([warp2d(img[..., c]) for c in range(img.shape[2])], axis=-1)


def adjust_brightness(img, factor):
    return np.clip(img * factor, 0.0, 1.0)


def _gray(img):
    return (img @ np.array([0.299, 0.587, 0.114]))[..., None]


def adjust_saturation(img, factor):
    if factor == 1:
        return img.copy()
    g = _gray(img)
    return np.clip(g + factor * (img - g), 0.0, 1.0)


def adjust_hue(img, shift):
    """Rotate hue by ``shift`` turns (in [-0.5, 0.5])."""
    if shift == 0:
        return img.copy()
    hsv = color.rgb2hsv(img)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(color.hsv2rgb(hsv), 0.0, 1.0)


_SMOOTH = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13


def adjust_sharpness(img, factor):
    if factor == 1:
        return img.copy()
    blurred = np.stack([ndimage.convolve(img[..., c], _SMOOTH, mode="nearest")
                        for c in range(img.shape[2])], axis=-1)
    return np.clip(blurred + factor * (img - blurred), 0.0, 1.0)


@dataclass(frozen=True)
class AugmentSpec:
    flip_prob: float = 0.5
    brightness: tuple[float, float] = (0.85, 1.15)
    saturation: tuple[float, float] = (0.7, 1.3)
    hue: tuple[float, float] = (-0.05, 0.05)
    sharpness: tuple[float, float] = (0.8, 1.2)
    rotation: tuple[float, float] = (-10.0, 10.0)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-0.05, 0.05)
    distractor_count_range: tuple[int, int] = (0, 2)
    target_count_range: tuple[int, int] = (0, 3)

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be in [0, 1]")
        for name in ("brightness", "saturation", "hue", "sharpness", "rotation", "scale",
                     "shear", "distractor_count_range", "target_count_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range {lo, hi} is not ordered")

    @classmethod
    def identity(cls, **overrides) -> "AugmentSpec":
        base = dict(flip_prob=0.0, brightness=(1, 1), saturation=(1, 1), hue=(0, 0),
                    sharpness=(1, 1), rotation=(0, 0), scale=(1, 1), shear=(0, 0),
                    distractor_count_range=(0, 0), target_count_range=(1, 1))
        base.update(overrides)
        return cls(**base)


def _draw(rng, spec: AugmentSpec) -> dict:
    return {
        "flip": bool(rng.random() < spec.flip_prob),
        "angle": float(rng.uniform(*spec.rotation)),
        "scale": float(rng.uniform(*spec.scale)),
        "shear": float(rng.uniform(*spec.shear)),
        "brightness": float(rng.uniform(*spec.brightness)),
        "saturation": float(rng.uniform(*spec.saturation)),
        "hue": float(rng.uniform(*spec.hue)),
        "sharpness": float(rng.uniform(*spec.sharpness)),
    }


def _geometric(img, p):
    return affine_warp(img, p["angle"], p["scale"], p["shear"], flip=p["flip"])


def _photometric(img, p):
    img = adjust_brightness(img, p["brightness"])
    img = adjust_saturation(img, p["saturation"])
    img = adjust_hue(img, p["hue"])
    return adjust_sharpness(img, p["sharpness"])


def augment_layers(fg, alpha, bg, spec: AugmentSpec, seed: int):
    """Augment a foreground layer (shared warp for fg and alpha) and an independently drawn background."""
    rng = make_rng(seed, 2)
    pf, pb = _draw(rng, spec), _draw(rng, spec)
    fg = _photometric(_geometric(fg, pf), pf)
    alpha = np.clip(_geometric(np.squeeze(alpha), pf), 0.0, 1.0)
    bg = _photometric(_geometric(bg, pb), pb)
    return fg, alpha, bg, {"foreground": pf, "background": pb}


def augment(sample: ImageSample, spec: AugmentSpec, seed: int) -> ImageSample:
    """Deterministic augmentation of a sample.

    Layered samples (``foreground`` set) are re-composited after augmenting fg/alpha
    and background independently. Flat samples warp image and alpha together; their
    background gets its own draw, which misregisters it against the frame.
    """
    if sample.foreground is not None:
        fg, a, bg, params = augment_layers(sample.foreground, sample.alpha, sample.background,
                                           spec, seed)
        image = composite(fg, a, bg)
    else:
        rng = make_rng(seed, 2)
        pf, pb = _draw(rng, spec), _draw(rng, spec)
        image = _photometric(_geometric(sample.image, pf), pf)
        a = np.clip(_geometric(sample.alpha, pf), 0.0, 1.0)
        bg = _photometric(_geometric(sample.background, pb), pb)
        fg, params = None, {"foreground": pf, "background": pb}
    meta = dict(sample.meta, augment_seed=int(seed), augment=params)
    return ImageSample(image, bg, a, sample.frame_index, fg, meta)


# --- background shift ---------------------------------------------------------

@dataclass(frozen=True)
class ShiftSpec:
    angle_range: tuple[float, float] = (0.0, 0.0)
    scale_range: tuple[float, float] = (1.0, 1.0)
    shear_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    name: str = "none"

    def __post_init__(self):
        for r in (self.angle_range, self.scale_range, self.shear_range):
            if r[0] > r[1]:
                raise ValueError(f"range {r} is not ordered")

    def with_seed(self, seed: int) -> "ShiftSpec":
        return ShiftSpec(self.angle_range, self.scale_range, self.shear_range, int(seed), self.name)

    def describe(self) -> str:
        a, sc, sh = self.angle_range, self.scale_range, self.shear_range
        return (f"Angle: ({a[0]:g}, {a[1]:g}), Scale: ({sc[0]:.2f}, {sc[1]:.2f}), "
                f"Shear: ({sh[0]:.2f}, {sh[1]:.2f})")


SHIFT_LEVELS = (
    ShiftSpec(name="none"),
    ShiftSpec((-2.0, 2.0), (0.95, 1.05), (-0.02, 0.02), name="level1"),
    ShiftSpec((-5.0, 5.0), (0.90, 1.10), (-0.07, 0.07), name="level2"),
)


def draw_shift(spec: ShiftSpec) -> tuple[float, float, float]:
    rng = make_rng(spec.seed, 3)
    return (float(rng.uniform(*spec.angle_range)), float(rng.uniform(*spec.scale_range)),
            float(rng.uniform(*spec.shear_range)))


def shift_background(bg, spec: ShiftSpec) -> np.ndarray:
    angle, scale, shear = draw_shift(spec)
    return affine_warp(bg, angle, scale, shear)


# --- analytic scenes ------------------------------------------------------------

SYNTH_KINDS = ("disk", "polygon", "distractor", "sequence")


def procedural_texture(rng, h: int, w: int, waves: int = 4) -> np.ndarray:
    """Smooth colored texture from random sinusoidal gratings, in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty((h, w, 3))
    for c in range(3):
        acc = np.full((h, w), rng.uniform(0.3, 0.7))
        for _ in range(waves):
            freq = rng.uniform(0.5, 4.0) * 2 * np.pi / max(h, w)
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            acc += rng.uniform(0.05, 0.15) * np.sin(
                freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        out[..., c] = acc
    return np.clip(out, 0.0, 1.0)


def disk_alpha(h: int, w: int, center, radius: float, width: float) -> np.ndarray:
    """clamp((radius - |x - center|) / width + 0.5) at pixel centers; empty when radius <= 0."""
    if radius <= 0:
        return np.zeros((h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    d = np.hypot(yy - center[0], xx - center[1])
    return np.clip((radius - d) / width + 0.5, 0.0, 1.0)


def polygon_alpha(h: int, w: int, center, radius: float, sides: int, rotation: float,
                  width: float) -> np.ndarray:
    """Soft regular polygon; the signed distance is the min over edge half-planes."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    apothem = radius * np.cos(np.pi / sides)
    sd = np.full((h, w), np.inf)
    for k in range(sides):
        t = rotation + 2 * np.pi * (k + 0.5) / sides
        proj = (xx - center[1]) * np.cos(t) + (yy - center[0]) * np.sin(t)
        sd = np.minimum(sd, apothem - proj)
    return np.clip(sd / width + 0.5, 0.0, 1.0)


def _disk_params(rng, res, params):
    return {
        "center": tuple(params.get("center", rng.uniform(0.35, 0.65, size=2) * res)),
        "radius": float(params.get("radius", rng.uniform(res / 6, res / 3))),
        "width": float(params.get("width", rng.uniform(1.0, 3.0))),
    }


def _foreground_color(rng, res):
    tex = procedural_texture(rng, res, res, waves=2)
    tint = rng.uniform(0.2, 1.0, size=3)
    return np.clip(0.5 * tex + 0.5 * tint, 0.0, 1.0)


def synth_sample(kind: str, resolution: int, seed: int, **params) -> ImageSample:
    """Analytic scene with exact ground-truth alpha.

    kinds: ``disk``, ``polygon``, ``distractor`` (disk target plus disk
    distractors baked into the background plate) and ``sequence`` (a disk moving
    by ``velocity`` pixels/frame; pass ``frame_index``).
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unsupported kind {kind!r}; expected one of {SYNTH_KINDS}")
    res = int(resolution)
    rng = make_rng(seed, 0)
    bg = procedural_texture(rng, res, res)
    fg = _foreground_color(rng, res)
    meta = {"kind": kind, "seed": int(seed), "resolution": res}
    frame_index = None

    if kind == "polygon":
        shape = _disk_params(rng, res, params)
        shape["sides"] = int(params.get("sides", rng.integers(3, 8)))
        shape["rotation"] = float(params.get("rotation", rng.uniform(0, 2 * np.pi)))
        alpha = polygon_alpha(res, res, shape["center"], shape["radius"], shape["sides"],
                              shape["rotation"], shape["width"])
    else:
        shape = _disk_params(rng, res, params)
        if kind == "sequence":
            frame_index = int(params.get("frame_index", 0))
            velocity = tuple(params.get("velocity", rng.uniform(-1.5, 1.5, size=2)))
            shape["velocity"] = [float(v) for v in velocity]
            shape["center"] = tuple(c + frame_index * v for c, v in zip(shape["center"], velocity))
        alpha = disk_alpha(res, res, shape["center"], shape["radius"], shape["width"])
        if kind == "distractor":
            n = int(params.get("distractors", rng.integers(1, 3)))
            pool = []
            for _ in range(n):
                r = rng.uniform(res / 10, res / 5)
                size = int(np.ceil(2 * r + 4))
                pool.append((_foreground_color(rng, size),
                             disk_alpha(size, size, (size / 2, size / 2), r, 1.5)))
            bg, placements = insert_distractors(bg, pool, n, int(rng.integers(2 ** 31)),
                                                scale_range=(1.0, 1.0))
            meta["distractors"] = placements

    meta["shape"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in shape.items()}
    image = composite(fg, alpha, bg)
    return ImageSample(image, bg, alpha, frame_index, fg, meta)


def synth_sequence(resolution: int, seed: int, frames: int, velocity=(1.0, 0.5), **params):
    return [synth_sample("sequence", resolution, seed, frame_index=t, velocity=velocity, **params)
            for t in range(frames)]


# --- training samples from cutout pools -----------------------------------------

def make_training_sample(fg_pool, backgrounds, spec: AugmentSpec, seed: int,
                         resolution: int) -> ImageSample:
    """Distractor-augmented composite of 0-N target cutouts over a random background."""
    rng = make_rng(seed, 4)
    res = int(resolution)
    bg = backgrounds[int(rng.integers(len(backgrounds)))]
    bg = cv2.resize(np.asarray(bg, dtype=np.float64), (res, res), interpolation=cv2.INTER_LINEAR)
    pb = _draw(rng, spec)
    bg = _photometric(_geometric(bg, pb), pb)
    n_dis = int(rng.integers(spec.distractor_count_range[0], spec.distractor_count_range[1] + 1))
    plate, placements = insert_distractors(bg, fg_pool, n_dis, int(rng.integers(2 ** 31)))
    n_tgt = int(rng.integers(spec.target_count_range[0], spec.target_count_range[1] + 1))
    image = plate.copy()
    alpha = np.zeros((res, res))
    for p in _random_placements(rng, (res, res), fg_pool, n_tgt, (0.6, 1.0)):
        fg, a = _rescale(*fg_pool[p["index"]], p["scale"])
        params = _draw(rng, spec)
        fg, a = _photometric(_geometric(fg, params), params), np.clip(_geometric(a, params), 0, 1)
        lf, la = place_layer((res, res), fg, a, p["top"], p["left"])
        image = composite(lf, la, image)
        alpha = 1 - (1 - alpha) * (1 - la)
    meta = {"kind": "composite", "seed": int(seed), "targets": n_tgt, "distractors": placements}
    return ImageSample(image, plate, alpha, None, None, meta)


# --- disk I/O ---------------------------------------------------------------------

def _to_u8(x):
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_sample(sample: ImageSample, out_dir, index: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{index:04d}"
    Image.fromarray(_to_u8(sample.image)).save(out / f"{stem}_img.png")
    Image.fromarray(_to_u8(sample.background)).save(out / f"{stem}_bg.png")
    Image.fromarray(_to_u8(sample.alpha)).save(out / f"{stem}_alpha.png")
    meta = dict(sample.meta, frame_index=sample.frame_index)
    (out / f"{stem}_meta.json").write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True))


def read_image(path) -> np.ndarray:
    img = np.asarray(Image.open(path))
    return img.astype(np.float64) / 255.0


def read_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB")).astype(np.float64) / 255.0


def read_alpha(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")).astype(np.float64) / 255.0


def load_samples(data_dir) -> list[tuple[str, ImageSample]]:
    """Read every ``NNNN_img.png`` / ``_bg.png`` / ``_alpha.png`` triple, sorted by id."""
    root = Path(data_dir)
    out = []
    for img_path in sorted(root.glob("*_img.png")):
        stem = img_path.name[:-len("_img.png")]
        meta_path = root / f"{stem}_meta.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        frame_index = meta.pop("frame_index", None)
        sample = ImageSample(read_rgb(img_path), read_rgb(root / f"{stem}_bg.png"),
                             read_alpha(root / f"{stem}_alpha.png"), frame_index, None, meta)
        out.append((stem, sample))
    return out


def load_foreground_pool(fg_dir) -> list[tuple[np.ndarray, np.ndarray]]:
    """(fg, alpha) cutouts from ``*_fg.png`` / ``*_alpha.png`` pairs."""
    root = Path(fg_dir)
    return [(read_rgb(p), read_alpha(root / (p.name[:-len("_fg.png")] + "_alpha.png")))
            for p in sorted(root.glob("*_fg.png"))]


def load_backgrounds(bg_dir) -> list[np.ndarray]:
    return [read_rgb(p) for p in sorted(Path(bg_dir).glob("*.png"))]


def spec_dict(spec) -> dict:
    return _jsonable(asdict(spec))
