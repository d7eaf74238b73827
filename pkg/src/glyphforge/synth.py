"""Lexicon-driven synthetic word-image generation.

Words from a lexicon are segmented into glyph labels available in a corpus,
one handwritten variant per glyph is drawn by a seeded generator, and the
variants are folded left to right either edge-to-edge or with a fixed pixel
overlap (darker ink wins inside the band). Datasets are written as PNG files
plus a JSONL manifest and an alphabet sidecar, and are a pure function of
(lexicon, corpus, mode, count, seed).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .imaging import (
    DEFAULT_INK_THRESHOLD,
    EmptyInkError,
    GrayRaster,
    InkThreshold,
    hjoin,
    hjoin_overlap,
    load_image,
    resize,
    save_image,
    tight_crop,
)

log = logging.getLogger(__name__)

DEFAULT_GLYPH_SIZE = (128, 128)  # (width, height)
DEFAULT_OVERLAP_PX = 4


class MissingDirectoryError(ValueError):
    """Corpus root does not exist or is not a directory."""


class EmptyCorpusError(ValueError):
    """No usable glyph images found."""


class NotUtf8Error(ValueError):
    """Lexicon file is not valid UTF-8."""


class EmptyLexiconError(ValueError):
    """Lexicon contains no words."""


class UncoverableError(ValueError):
    """Word cannot be segmented into corpus labels."""

    def __init__(self, word: str, position: int):
        super().__init__(f"cannot cover {word!r} at position {position}")
        self.word = word
        self.position = position


class UnknownLabelError(KeyError):
    """Label absent from the corpus."""


class NoCoverableWordsError(ValueError):
    """No lexicon word can be rendered from the corpus."""


class MalformedAnnotationError(ValueError):
    """Annotation record missing fields or badly typed."""


class BoxOutOfBoundsError(ValueError):
    """Bounding box exceeds its page."""


class JoinMode(str, Enum):
    NON_OVERLAPPED = "non_overlapped"
    OVERLAPPED = "overlapped"


@dataclass
class GlyphCorpus:
    """Label -> non-empty list of normalized glyph rasters."""

    entries: dict[str, list[GrayRaster]]
    glyph_size: tuple[int, int] = DEFAULT_GLYPH_SIZE

    def __post_init__(self):
        if not self.entries:
            raise EmptyCorpusError("corpus has no labels")
        for label, variants in self.entries.items():
            if not variants:
                raise EmptyCorpusError(f"label {label!r} has no variants")

    @property
    def labels(self) -> list[str]:
        return sorted(self.entries)


@dataclass(frozen=True)
class Lexicon:
    """Ordered unique non-empty words."""

    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise EmptyLexiconError("lexicon has no words")
        if any(not w for w in self.words):
            raise ValueError("empty word in lexicon")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate words in lexicon")

    def __len__(self):
        return len(self.words)


@dataclass(frozen=True)
class WordSpec:
    """A word plus the glyph labels whose concatenation spells it."""

    transcript: str
    glyph_labels: tuple[str, ...]

    def __post_init__(self):
        if "".join(self.glyph_labels) != self.transcript:
            raise ValueError("glyph labels do not concatenate to the transcript")


@dataclass(frozen=True)
class SyntheticSample:
    """One rendered word image with its provenance."""

    image: GrayRaster
    transcript: str
    mode: JoinMode
    overlap_px: int
    glyph_variant_ids: tuple[int, ...]

    def __post_init__(self):
        if self.mode is JoinMode.NON_OVERLAPPED and self.overlap_px != 0:
            raise ValueError("non-overlapped samples must record overlap_px = 0")
        if self.mode is JoinMode.OVERLAPPED and self.overlap_px <= 0:
            raise ValueError("overlapped samples must record overlap_px > 0")


@dataclass(frozen=True)
class ManifestRecord:
    image: str  # path relative to the manifest directory
    transcript: str
    mode: JoinMode
    overlap_px: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "image": self.image,
            "transcript": self.transcript,
            "mode": self.mode.value,
            "overlap_px": self.overlap_px,
            "seed": self.seed,
        }


@dataclass
class DatasetManifest:
    """Index of a generated dataset: records plus the transcript alphabet."""

    records: list[ManifestRecord]
    alphabet: list[str] = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        if not self.alphabet:
            self.alphabet = transcript_alphabet(r.transcript for r in self.records)

    def save(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "manifest.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json_dict(), ensure_ascii=False) + "\n")
        with open(out_dir / "alphabet.json", "w", encoding="utf-8") as fh:
            json.dump(self.alphabet, fh, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        root = path if path.is_dir() else path.parent
        manifest_file = root / "manifest.jsonl" if path.is_dir() else path
        records = []
        with open(manifest_file, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                records.append(
                    ManifestRecord(
                        image=d["image"],
                        transcript=d["transcript"],
                        mode=JoinMode(d["mode"]),
                        overlap_px=d["overlap_px"],
                        seed=d["seed"],
                    )
                )
        alphabet_file = root / "alphabet.json"
        alphabet = (
            json.loads(alphabet_file.read_text(encoding="utf-8"))
            if alphabet_file.exists()
            else []
        )
        return cls(records=records, alphabet=alphabet, root=root)


def transcript_alphabet(transcripts) -> list[str]:
    """Sorted list of distinct codepoints over the transcripts."""
    chars: set[str] = set()
    for t in transcripts:
        chars.update(t)
    return sorted(chars)


def normalize_glyph(
    img: GrayRaster,
    glyph_size: tuple[int, int] = DEFAULT_GLYPH_SIZE,
    threshold: InkThreshold = DEFAULT_INK_THRESHOLD,
) -> GrayRaster:
    """Tight-crop away margins and resize to the corpus glyph size."""
    w, h = glyph_size
    return resize(tight_crop(img, threshold), w, h)


def load_glyph_corpus(
    root_path: str | Path,
    glyph_size: tuple[int, int] = DEFAULT_GLYPH_SIZE,
    threshold: InkThreshold = DEFAULT_INK_THRESHOLD,
) -> GlyphCorpus:
    """Load a corpus from ``<root>/<label>/<id>.png`` or ``corpus.jsonl``.

    Every image is normalized on load. All-white images are skipped with a
    warning; a corpus with no usable images raises.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise MissingDirectoryError(f"corpus root {root} is not a directory")
    sources: list[tuple[str, Path]] = []
    manifest = root / "corpus.jsonl"
    if manifest.is_file():
        with open(manifest, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                sources.append((d["label"], root / d["path"]))
    else:
        for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            for png in sorted(label_dir.glob("*.png")):
                sources.append((label_dir.name, png))
    entries: dict[str, list[GrayRaster]] = {}
    for label, path in sources:
        try:
            raster = normalize_glyph(load_image(path), glyph_size, threshold)
        except EmptyInkError:
            log.warning("skipping all-white glyph image %s", path)
            continue
        entries.setdefault(label, []).append(raster)
    if not entries:
        raise EmptyCorpusError(f"no usable glyph images under {root}")
    return GlyphCorpus(entries=entries, glyph_size=glyph_size)


def load_lexicon(path: str | Path) -> Lexicon:
    """One word per line, UTF-8; blanks skipped, duplicates dropped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise NotUtf8Error(f"lexicon {path} is not valid UTF-8: {exc}") from exc
    seen: dict[str, None] = {}
    for line in text.splitlines():
        word = line.strip()
        if word and word not in seen:
            seen[word] = None
    if not seen:
        raise EmptyLexiconError(f"lexicon {path} has no words")
    return Lexicon(words=tuple(seen))


def decompose_word(word: str, corpus: GlyphCorpus) -> WordSpec:
    """Greedy longest-match segmentation of a word into corpus labels."""
    if not word:
        raise ValueError("cannot decompose an empty word")
    labels = corpus.entries.keys()
    max_len = max(len(lb) for lb in labels)
    out: list[str] = []
    pos = 0
    while pos < len(word):
        for take in range(min(max_len, len(word) - pos), 0, -1):
            piece = word[pos : pos + take]
            if piece in labels:
                out.append(piece)
                pos += take
                break
        else:
            raise UncoverableError(word, pos)
    return WordSpec(transcript=word, glyph_labels=tuple(out))


def render_word(
    spec: WordSpec,
    corpus: GlyphCorpus,
    mode: JoinMode,
    overlap_px: int = DEFAULT_OVERLAP_PX,
    rng_seed: int = 0,
) -> SyntheticSample:
    """Draw one variant per glyph and fold them left to right.

    Identical (spec, corpus, mode, overlap_px, rng_seed) produce bit-identical
    samples.
    """
    rng = np.random.default_rng(rng_seed)
    variant_ids = []
    rasters = []
    for label in spec.glyph_labels:
        variants = corpus.entries.get(label)
        if variants is None:
            raise UnknownLabelError(label)
        k = int(rng.integers(len(variants)))
        variant_ids.append(k)
        rasters.append(variants[k])
    image = rasters[0]
    for nxt in rasters[1:]:
        if mode is JoinMode.OVERLAPPED:
            image = hjoin_overlap(image, nxt, overlap_px)
        else:
            image = hjoin(image, nxt)
    return SyntheticSample(
        image=image,
        transcript=spec.transcript,
        mode=mode,
        overlap_px=overlap_px if mode is JoinMode.OVERLAPPED else 0,
        glyph_variant_ids=tuple(variant_ids),
    )


def _sample_seed(dataset_seed: int, index: int) -> int:
    # Stable per-record derivation so records are reproducible in isolation.
    ss = np.random.SeedSequence([int(dataset_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_dataset(
    lexicon: Lexicon,
    corpus: GlyphCorpus,
    mode: JoinMode,
    count: int,
    seed: int,
    out_dir: str | Path,
    overlap_px: int = DEFAULT_OVERLAP_PX,
) -> DatasetManifest:
    """Render ``count`` word images and write PNGs + manifest + alphabet.

    The lexicon is cycled (with fresh variant draws) when count exceeds the
    coverable vocabulary; uncoverable words are skipped with one warning each.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out_dir = Path(out_dir)
    specs: list[WordSpec] = []
    for word in lexicon.words:
        try:
            specs.append(decompose_word(word, corpus))
        except UncoverableError as exc:
            log.warning("skipping uncoverable word %r (position %d)", exc.word, exc.position)
    if not specs:
        raise NoCoverableWordsError("no lexicon word is coverable by the corpus")

    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    records = []
    labels_used: set[str] = set()
    for i in range(count):
        spec = specs[i % len(specs)]
        rec_seed = _sample_seed(seed, i)
        sample = render_word(spec, corpus, mode, overlap_px=overlap_px, rng_seed=rec_seed)
        rel = f"images/{i:06d}.png"
        save_image(sample.image, out_dir / rel)
        labels_used.update(spec.glyph_labels)
        records.append(
            ManifestRecord(
                image=rel,
                transcript=sample.transcript,
                mode=mode,
                overlap_px=sample.overlap_px,
                seed=rec_seed,
            )
        )
    manifest = DatasetManifest(records=records, root=out_dir)
    manifest.save(out_dir)
    # Glyph-label inventory: lets training build grapheme-level classes.
    with open(out_dir / "labels.json", "w", encoding="utf-8") as fh:
        json.dump(sorted(labels_used), fh, ensure_ascii=False)
        fh.write("\n")
    return manifest


def ingest_annotated_pages(
    json_path: str | Path, image_root: str | Path
) -> list[tuple[GrayRaster, str]]:
    """Extract labeled word crops from page images via bounding boxes.

    The annotation file is a JSON array of
    ``{"page": <image path>, "words": [{"x", "y", "w", "h", "label"}]}``;
    page paths resolve against ``image_root``. Crops are grayscaled and
    tight-cropped.
    """
    json_path = Path(json_path)
    image_root = Path(image_root)
    try:
        pages = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedAnnotationError(f"{json_path}: {exc}") from exc
    if not isinstance(pages, list):
        raise MalformedAnnotationError(f"{json_path}: expected a JSON array of pages")
    samples: list[tuple[GrayRaster, str]] = []
    for page_no, page in enumerate(pages):
        if not isinstance(page, dict) or "page" not in page or "words" not in page:
            raise MalformedAnnotationError(f"page record {page_no}: needs 'page' and 'words'")
        raster = load_image(image_root / page["page"])
        for word_no, box in enumerate(page["words"]):
            try:
                x, y = int(box["x"]), int(box["y"])
                w, h = int(box["w"]), int(box["h"])
                label = box["label"]
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedAnnotationError(
                    f"page {page_no} word {word_no}: {exc!r} in {box!r}"
                ) from exc
            if not isinstance(label, str) or not label:
                raise MalformedAnnotationError(
                    f"page {page_no} word {word_no}: label must be a non-empty string"
                )
            if x < 0 or y < 0 or w < 1 or h < 1 or x + w > raster.width or y + h > raster.height:
                raise BoxOutOfBoundsError(
                    f"page {page_no} word {word_no}: box {(x, y, w, h)} "
                    f"outside page {(raster.width, raster.height)}"
                )
            crop = GrayRaster(raster.pixels[y : y + h, x : x + w])
            samples.append((tight_crop(crop), label))
    return samples
