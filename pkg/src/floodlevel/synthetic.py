"""Synthetic flood scene generator with known ground-truth depth.

Stands in for real flood photographs, which cannot be redistributed: each
image is a textured background with random non-water distractor shapes,
flooded from the bottom by an opaque water band whose top edge sits at
``depth_cm / 170`` of the frame height, with randomized water color,
ripple texture and a mild camera tilt.

The renderer keeps water recoverable from pixels alone: water colors obey
``blue - red`` in [0.30, 0.40] while background and distractor colors keep
``blue <= red``. :func:`estimate_depth_cm` inverts a rendered image using
only that contrast, giving an independent check that the scene truly shows
the recorded depth.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .levels import LEVEL_ANCHORS_CM, MAX_DEPTH_CM
from .manifest import DatasetManifest, SampleRecord, save_manifest

# Level sampling weights shaped like the real-world imbalance: moderate
# levels are common, very deep water is rare.
DEFAULT_LEVEL_WEIGHTS = (2.5, 1.5, 2.0, 2.2, 2.2, 1.8, 1.2, 0.8, 0.5, 0.3, 0.2)

# interval edges used when sampling continuous depths within a level
LEVEL_RANGE_EDGES_CM = (0.0, 1.0, 10.0, 21.25, 42.5, 63.75, 85.0, 106.25, 127.5, 148.75, 170.0)

MAX_TILT_DEG = 5.0
WATER_SCORE = 0.35  # nominal blue-minus-red contrast of water pixels
WATER_SCORE_JITTER = 0.05
DEFAULT_IMAGE_SIZE = 64


def sample_levels(count: int, rng: np.random.Generator, weights=DEFAULT_LEVEL_WEIGHTS) -> np.ndarray:
    """Draw integer levels 0..10 according to the (unnormalized) weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (11,) or np.any(w < 0) or w.sum() == 0:
        raise ValueError("level weights must be 11 non-negative values")
    return rng.choice(11, size=count, p=w / w.sum())


def _warm_gray(rng, lo, hi):
    r = rng.uniform(lo, hi)
    g = r * rng.uniform(0.88, 1.0)
    b = g * rng.uniform(0.85, 1.0)
    return np.array([r, g, b], dtype=np.float32)


def _distractor_color(rng):
    family = rng.integers(3)
    if family == 0:  # warm: red / orange / brown
        r = rng.uniform(0.25, 0.9)
        g = r * rng.uniform(0.25, 0.95)
        b = min(r, g) * rng.uniform(0.2, 0.9)
    elif family == 1:  # green
        g = rng.uniform(0.3, 0.85)
        r = g * rng.uniform(0.3, 0.95)
        b = r * rng.uniform(0.3, 0.95)
    else:  # neutral gray
        r = rng.uniform(0.15, 0.85)
        g = r * rng.uniform(0.92, 1.0)
        b = r * rng.uniform(0.85, 1.0)
    return np.array([r, g, b], dtype=np.float32)


def _water_color(rng):
    r = rng.uniform(0.08, 0.42)
    s = WATER_SCORE + rng.uniform(-WATER_SCORE_JITTER, WATER_SCORE_JITTER)
    g = r + s * rng.uniform(0.15, 0.85)
    return np.array([r, g, r + s], dtype=np.float32)


def _paint_distractors(img: np.ndarray, rng) -> None:
    h, w, _ = img.shape
    for _ in range(int(rng.integers(3, 10))):
        color = _distractor_color(rng)
        kind = rng.integers(3)
        if kind == 0:  # rectangle (building-like)
            rw = int(rng.integers(max(2, w // 12), max(3, w // 3)))
            rh = int(rng.integers(max(2, h // 12), max(3, h // 2)))
            x0 = int(rng.integers(0, max(1, w - rw)))
            y0 = int(rng.integers(0, max(1, h - rh)))
            img[y0:y0 + rh, x0:x0 + rw] = color
        elif kind == 1:  # vertical pole
            rw = max(1, w // 24)
            rh = int(rng.integers(h // 4, h))
            x0 = int(rng.integers(0, w - rw))
            y0 = int(rng.integers(0, max(1, h - rh)))
            img[y0:y0 + rh, x0:x0 + rw] = color
        else:  # ellipse blob
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            ry = rng.uniform(h / 16, h / 4)
            rx = rng.uniform(w / 16, w / 4)
            yy, xx = np.ogrid[:h, :w]
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            img[mask] = color


def _render(depth_cm: float, size: int, rng) -> np.ndarray:
    h = w = size
    img = np.empty((h, w, 3), dtype=np.float32)

    sky = _warm_gray(rng, 0.55, 0.8)
    ground = _warm_gray(rng, 0.28, 0.5)
    t = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None, None]
    img[:] = sky * (1 - t) + ground * t

    # blocky low-frequency lighting texture
    coarse = rng.uniform(-1, 1, (8, 8)).astype(np.float32)
    reps = math.ceil(h / 8)
    field = np.kron(coarse, np.ones((reps, reps), dtype=np.float32))[:h, :w]
    img *= (1 + 0.08 * field)[..., None]

    horizon = int(rng.integers(h // 8, h // 2))
    img[horizon:horizon + 2] *= 0.8

    _paint_distractors(img, rng)

    frac = depth_cm / MAX_DEPTH_CM
    if frac > 0:
        y0 = h * (1 - frac)  # continuous row of the water's top edge
        max_dev = min(y0, h - y0)
        slope = math.tan(math.radians(rng.uniform(-MAX_TILT_DEG, MAX_TILT_DEG)))
        half_span = (w - 1) / 2
        if half_span > 0 and abs(slope) * half_span > max_dev:
            slope = math.copysign(max_dev / half_span, slope)
        cols = np.arange(w, dtype=np.float32)
        line = y0 + slope * (cols - half_span)

        rows = np.arange(h, dtype=np.float32)[:, None]
        alpha = np.clip(rows + 1 - line[None, :], 0.0, 1.0)

        water = _water_color(rng)
        period = rng.uniform(3.0, 12.0)
        phase = rng.uniform(0, 2 * math.pi)
        ripple = 0.05 * np.sin(2 * math.pi * rows / period + phase)
        ripple = ripple + 0.03 * rng.uniform(-1, 1, (h, w)).astype(np.float32)
        water_field = water[None, None, :] * (1 + ripple)[..., None]
        img = img * (1 - alpha)[..., None] + water_field * alpha[..., None]

    img += rng.uniform(-0.015, 0.015, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(
    count: int,
    out_dir: str | Path,
    image_size: int = DEFAULT_IMAGE_SIZE,
    seed: int = 0,
    label_kind: str = "strong",
    depth_mode: str = "anchors",
    level_weights=DEFAULT_LEVEL_WEIGHTS,
    id_prefix: str = "synth",
    manifest_name: str | None = None,
) -> tuple[DatasetManifest, Path]:
    """Render ``count`` scenes plus a manifest recording their true depths.

    ``depth_mode="anchors"`` places every image exactly at its level's anchor
    depth, mirroring level-annotated data; ``"continuous"`` draws the depth
    uniformly within the level's range (strong manifests only). Each image
    gets an independent RNG stream derived from (seed, index), so generation
    is reproducible and order-independent.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if depth_mode not in ("anchors", "continuous"):
        raise ValueError(f"unknown depth_mode {depth_mode!r}")
    if depth_mode == "continuous" and label_kind == "weak":
        raise ValueError("weak manifests need discrete levels; use depth_mode='anchors'")

    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    levels = sample_levels(count, np.random.default_rng(seed), level_weights)
    records = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, i)))
        level = int(levels[i])
        if depth_mode == "anchors":
            depth = LEVEL_ANCHORS_CM[level]
        else:
            lo = LEVEL_RANGE_EDGES_CM[level - 1] if level > 0 else 0.0
            hi = LEVEL_RANGE_EDGES_CM[level]
            depth = float(rng.uniform(lo, hi)) if level > 0 else 0.0

        sample_id = f"{id_prefix}-{i:06d}"
        uri = f"images/{sample_id}.png"
        img = _render(depth, image_size, rng)
        Image.fromarray((img * 255).round().astype(np.uint8)).save(images_dir / f"{sample_id}.png")

        if label_kind == "weak":
            rec = SampleRecord(id=sample_id, image_uri=uri, level=level,
                               source_flooded=level > 0)
        else:
            rec = SampleRecord(id=sample_id, image_uri=uri, depth_cm=depth,
                               level=level if depth_mode == "anchors" else None,
                               source_flooded=level > 0)
        records.append(rec)

    name = manifest_name or f"{id_prefix}-{label_kind}"
    manifest = DatasetManifest(name=name, records=records, label_kind=label_kind)
    manifest_path = save_manifest(manifest, out_dir / f"{name}.jsonl")
    return manifest, manifest_path


def load_image_array(uri: str, root: str | Path) -> np.ndarray:
    """Load a manifest image as float32 RGB in [0, 1]."""
    path = Path(uri)
    if not path.is_absolute():
        path = Path(root) / path
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def estimate_depth_cm(image: np.ndarray) -> float:
    """Recover the water depth of a rendered scene from its pixels alone.

    Per column, counts fully flooded rows from the bottom and refines the two
    rows around the waterline by unmixing them against locally estimated
    water and background colors; columns average to the final depth. This is
    the rendering inverse used to audit the generator.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an RGB image array")
    h, w, _ = img.shape
    score = img[:, :, 2] - img[:, :, 0]
    mask = score > 0.10

    # trailing run of water rows per column
    rev = mask[::-1, :]
    first_false = np.argmax(~rev, axis=0)
    run = np.where(rev.all(axis=0), h, first_false)

    def unmix(pixel, bg, water):
        d = water - bg
        denom = float(np.dot(d, d))
        if denom < 1e-8:
            return 0.0
        return float(np.clip(np.dot(pixel - bg, d) / denom, 0.0, 1.0))

    depth_px = np.zeros(w, dtype=np.float64)
    for c in range(w):
        r = int(run[c])
        if r == 0:
            depth_px[c] = np.clip(score[h - 1, c] / WATER_SCORE, 0.0, 1.0)
            continue
        r0 = h - r  # topmost masked row; may be the fractional edge row
        water = img[r0 + 1:min(r0 + 4, h), c].mean(axis=0) if r >= 2 else None
        bg = img[max(0, r0 - 4):r0 - 1, c].mean(axis=0) if r0 >= 2 else None
        full_rows = h - 1 - r0
        edge = 0.0
        for rr in (r0, r0 - 1):
            if rr < 0:
                continue
            if water is not None and bg is not None:
                edge += unmix(img[rr, c], bg, water)
            else:
                edge += float(np.clip(score[rr, c] / WATER_SCORE, 0.0, 1.0))
        depth_px[c] = full_rows + edge
    return float(depth_px.mean() / h * MAX_DEPTH_CM)
