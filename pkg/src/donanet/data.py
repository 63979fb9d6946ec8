"""Synthetic bitemporal pairs with pseudo-change style shifts, plus manifests.

A pair is a textured background with random rectangles and discs. Some
shapes exist at only one date; the change mask marks exactly the pixels
where the two noiseless renders differ. Date B then gets a region-wise
per-channel affine colour shift (the pseudo-change), and both dates get a
little Gaussian noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .pnm import read_image, read_mask, write_image

# colour range chosen so the largest style shift (a, b at strength 0.25)
# stays inside [0, 1] before noise
COLOR_LO, COLOR_HI = 0.36, 0.60


@dataclass
class GenConfig:
    size: int = 64
    min_shapes: int = 4
    max_shapes: int = 9
    change_prob: float = 0.4
    style_strength: float = 0.25
    noise: float = 0.01
    min_radius: int = 4
    max_radius: int = 12


@dataclass
class Shape:
    kind: str  # "rect" or "disc"
    cy: float
    cx: float
    ry: float
    rx: float
    color: np.ndarray

    def mask(self, size: int) -> np.ndarray:
        yy, xx = np.mgrid[0:size, 0:size]
        if self.kind == "disc":
            return (yy - self.cy) ** 2 + (xx - self.cx) ** 2 <= self.ry ** 2
        return (np.abs(yy - self.cy) <= self.ry) & (np.abs(xx - self.cx) <= self.rx)


@dataclass
class ImagePairSample:
    xa: np.ndarray
    xb: np.ndarray
    mask: np.ndarray
    meta: dict = field(default_factory=dict)
    style_shift: np.ndarray | None = None


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(COLOR_LO + 0.04, COLOR_HI - 0.04, size=3)
    img = np.empty((3, size, size))
    for c in range(3):
        tex = np.zeros((size, size))
        for _ in range(3):
            fy, fx = rng.uniform(1.0, 6.0, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            tex += np.sin(2 * np.pi * (fy * yy + fx * xx) + ph)
        img[c] = base[c] + 0.012 * tex
    return img


def _random_shape(rng: np.random.Generator, cfg: GenConfig, bg_mean: np.ndarray) -> Shape:
    kind = "disc" if rng.random() < 0.5 else "rect"
    r = rng.uniform(cfg.min_radius, cfg.max_radius)
    rx = rng.uniform(cfg.min_radius, cfg.max_radius) if kind == "rect" else r
    cy, cx = rng.uniform(0, cfg.size, size=2)
    # keep shapes visibly distinct from the background in at least one channel
    while True:
        color = rng.uniform(COLOR_LO, COLOR_HI, size=3)
        if np.abs(color - bg_mean).max() > 0.08:
            break
    return Shape(kind, cy, cx, r, rx, color)


def render(background: np.ndarray, shapes) -> np.ndarray:
    img = background.copy()
    size = img.shape[1]
    for s in shapes:
        m = s.mask(size)
        img[:, m] = s.color[:, None]
    return img


def style_shift(img: np.ndarray, rng: np.random.Generator, strength: float):
    """Per-region (random 2-4 grid) per-channel affine ``a*x + b``."""
    if strength <= 0:
        return img.copy()
    g = int(rng.integers(2, 5))
    size = img.shape[1]
    edges = np.append(np.arange(g) * (size // g), size)
    out = np.empty_like(img)
    for i in range(g):
        for j in range(g):
            rs = slice(edges[i], edges[i + 1])
            cs = slice(edges[j], edges[j + 1])
            a = rng.uniform(1 - strength, 1 + strength, size=3)
            b = rng.uniform(-strength, strength, size=3)
            out[:, rs, cs] = a[:, None, None] * img[:, rs, cs] + b[:, None, None]
    return out


def compose_pair(background, shapes_a, shapes_b, rng: np.random.Generator, cfg: GenConfig, meta=None) -> ImagePairSample:
    clean_a = render(background, shapes_a)
    clean_b = render(background, shapes_b)
    mask = np.any(clean_a != clean_b, axis=0).astype(np.uint8)
    styled_b = style_shift(clean_b, rng, cfg.style_strength)
    xa = np.clip(clean_a + rng.normal(0, cfg.noise, clean_a.shape), 0.0, 1.0)
    xb = np.clip(styled_b + rng.normal(0, cfg.noise, clean_b.shape), 0.0, 1.0)
    shift = np.abs(styled_b - clean_b).max(axis=0)
    return ImagePairSample(xa, xb, mask, dict(meta or {}), shift)


def generate_pair(cfg: GenConfig, rng_or_seed) -> ImagePairSample:
    """One synthetic pair; deterministic given the seed."""
    if cfg.size % 32:
        raise ValueError("tile size must be divisible by 32")
    seed = rng_or_seed if isinstance(rng_or_seed, (int, np.integer)) else None
    rng = np.random.default_rng(rng_or_seed) if seed is not None else rng_or_seed
    bg = _background(rng, cfg.size)
    bg_mean = bg.mean(axis=(1, 2))
    k = int(rng.integers(cfg.min_shapes, cfg.max_shapes + 1))
    shapes_a, shapes_b = [], []
    for _ in range(k):
        s = _random_shape(rng, cfg, bg_mean)
        u = rng.random()
        if u < cfg.change_prob / 2:
            shapes_a.append(s)
        elif u < cfg.change_prob:
            shapes_b.append(s)
        else:
            shapes_a.append(s)
            shapes_b.append(s)
    meta = {"seed": None if seed is None else int(seed), "style_strength": cfg.style_strength, "num_shapes": k}
    return compose_pair(bg, shapes_a, shapes_b, rng, cfg, meta)


def pair_seed(seed: int, index: int) -> int:
    """Per-sample seed derived from (global seed, sample index)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_dataset(n: int, cfg: GenConfig, seed: int) -> list[ImagePairSample]:
    return [generate_pair(cfg, pair_seed(seed, i)) for i in range(n)]


def stack_samples(samples):
    """Batch arrays ``(xa, xb, mask)`` of shapes N x 3 x H x W, N x 3 x H x W, N x H x W."""
    xa = np.stack([s.xa for s in samples])
    xb = np.stack([s.xb for s in samples])
    mask = np.stack([s.mask for s in samples])
    return xa, xb, mask


# -- files -------------------------------------------------------------------

def save_samples(samples, out_dir, manifest_name: str = "manifest.txt") -> str:
    """Write each pair as ``NNNNN_a.ppm``, ``NNNNN_b.ppm``, ``NNNNN_mask.pgm`` plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        names = (f"{i:05d}_a.ppm", f"{i:05d}_b.ppm", f"{i:05d}_mask.pgm")
        write_image(os.path.join(out_dir, names[0]), s.xa)
        write_image(os.path.join(out_dir, names[1]), s.xb)
        write_image(os.path.join(out_dir, names[2]), s.mask.astype(np.float64))
        rows.append(names)
    path = os.path.join(out_dir, manifest_name)
    write_manifest(rows, path)
    return path


def write_manifest(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for xa, xb, m in rows:
            fh.write(f"{xa}\t{xb}\t{m}\n")


def read_manifest(path) -> list[tuple[str, str, str]]:
    """Rows of (xa, xb, mask) paths; relative paths resolve against the manifest directory."""
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated paths")
            rows.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    return rows


def load_manifest_samples(path) -> list[ImagePairSample]:
    out = []
    for xa, xb, m in read_manifest(path):
        out.append(ImagePairSample(read_image(xa), read_image(xb), read_mask(m), {"source": xa}))
    return out
