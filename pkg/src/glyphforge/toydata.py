"""Deterministic toy glyph corpora: stroke doodles, one stable shape per
label, with per-variant jitter. Good enough to exercise the full pipeline
without any external handwriting data."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .imaging import GrayRaster, save_image
from .synth import DEFAULT_GLYPH_SIZE, GlyphCorpus, Lexicon
from .synth import normalize_glyph


def _label_entropy(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")


def _draw_strokes(rng: np.random.Generator, canvas: int, n_strokes: int,
                  points: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Render thick line segments (dark on white) on a canvas x canvas grid."""
    ys, xs = np.mgrid[0:canvas, 0:canvas]
    grid = np.stack([xs, ys], axis=-1) / (canvas - 1)  # unit-square coords
    img = np.ones((canvas, canvas))
    for k in range(n_strokes):
        a, b = points[2 * k], points[2 * k + 1]
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-12:
            t = np.zeros(grid.shape[:2])
        else:
            t = np.clip(((grid - a) @ ab) / denom, 0.0, 1.0)
        nearest = a + t[..., None] * ab
        dist = np.linalg.norm(grid - nearest, axis=-1)
        shade = 0.05 + 0.15 * rng.random()
        img = np.where(dist < widths[k], np.minimum(img, shade), img)
    return img


def make_toy_glyph(
    label: str, variant: int, seed: int = 0,
    canvas: int = 64, jitter: float = 0.06,
) -> GrayRaster:
    """One doodle for ``label``: shape fixed by the label, detail by variant."""
    base_rng = np.random.default_rng(np.random.SeedSequence([_label_entropy(label)]))
    n_strokes = int(base_rng.integers(2, 5))
    base_points = 0.1 + 0.8 * base_rng.random((2 * n_strokes, 2))
    var_rng = np.random.default_rng(
        np.random.SeedSequence([seed, _label_entropy(label), variant])
    )
    points = np.clip(base_points + var_rng.normal(0.0, jitter, base_points.shape), 0.0, 1.0)
    widths = 0.05 + 0.04 * var_rng.random(n_strokes)
    return GrayRaster(_draw_strokes(var_rng, canvas, n_strokes, points, widths))


def make_toy_corpus(
    labels, variants: int = 2, seed: int = 0,
    glyph_size: tuple[int, int] = DEFAULT_GLYPH_SIZE, jitter: float = 0.06,
) -> GlyphCorpus:
    """Corpus of normalized doodle glyphs for the given labels."""
    entries = {
        label: [
            normalize_glyph(make_toy_glyph(label, v, seed=seed, jitter=jitter), glyph_size)
            for v in range(variants)
        ]
        for label in labels
    }
    return GlyphCorpus(entries=entries, glyph_size=glyph_size)


def make_toy_lexicon(labels, n_words: int, seed: int = 0,
                     min_len: int = 2, max_len: int = 4) -> Lexicon:
    """Random words spelled from the given labels, unique, seeded."""
    labels = list(labels)
    rng = np.random.default_rng(seed)
    words: dict[str, None] = {}
    attempts = 0
    while len(words) < n_words:
        attempts += 1
        if attempts > 100 * n_words:
            raise ValueError(f"could not build {n_words} unique words from {len(labels)} labels")
        length = int(rng.integers(min_len, max_len + 1))
        word = "".join(labels[int(rng.integers(len(labels)))] for _ in range(length))
        words.setdefault(word, None)
    return Lexicon(words=tuple(words))


def write_corpus_tree(corpus: GlyphCorpus, root: str | Path) -> None:
    """Materialize a corpus as the ``<root>/<label>/<id>.png`` layout."""
    root = Path(root)
    for label, rasters in sorted(corpus.entries.items()):
        label_dir = root / label
        label_dir.mkdir(parents=True, exist_ok=True)
        for i, raster in enumerate(rasters):
            save_image(raster, label_dir / f"{i:03d}.png")
