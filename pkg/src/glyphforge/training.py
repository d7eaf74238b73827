"""Dataset splitting, the CTC training loop, optimizers, and checkpoints.

Training is deterministic under a fixed config: model init, epoch shuffles,
and the split all derive from the config seed. Per-sample losses are averaged
over the batch so the learning rate does not depend on batch size. The best
checkpoint by validation loss is the one persisted.

Checkpoint file layout (little-endian): magic ``GFCK``, u32 format version,
u32 header length, UTF-8 JSON header (architecture, alphabet, step, config
echo, parameter table), raw float32 parameter payload, u32 CRC32 of the
payload.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .autodiff import Tensor, no_grad
from .ctc import Alphabet, AlphabetMismatchError, ctc_batch_mean, greedy_decode
from .evaluation import wer
from .imaging import load_image, resize, tight_crop
from .synth import DatasetManifest

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GFCK"
CHECKPOINT_VERSION = 1


class EmptyManifestError(ValueError):
    """Manifest with no records where at least one is required."""


class NonFiniteLossError(RuntimeError):
    """Training loss became NaN or infinite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at optimizer step {step}")
        self.step = step


class IoFailureError(OSError):
    """Checkpoint file could not be read or written."""


class VersionMismatchError(ValueError):
    """Checkpoint format version unsupported."""


class CorruptChecksumError(ValueError):
    """Checkpoint payload fails its integrity check."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run."""

    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    split_ratio: float = 0.8
    patience: int | None = 5
    train_loss_goal: float | None = None  # stop early once mean train loss drops below
    # Generation settings echoed into checkpoints for provenance.
    glyph_size: tuple[int, int] = (128, 128)
    overlap_px: int = 4

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["glyph_size"] = list(self.glyph_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "glyph_size" in d:
            d["glyph_size"] = tuple(d["glyph_size"])
        return cls(**d)


@dataclass
class OptState:
    """First/second moment accumulators (Adam) and the step counter."""

    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def optimizer_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: OptState,
    config: TrainConfig,
) -> tuple[list[np.ndarray], OptState]:
    """One update; pure in params and state (new arrays are returned)."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise network.ShapeMismatchError(f"param {p.shape} vs grad {g.shape}")
    lr = config.learning_rate
    if config.optimizer == "sgd":
        return [p - lr * g for p, g in zip(params, grads)], OptState(t=state.t + 1)
    if not state.m:
        state = OptState(
            t=state.t,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )
    t = state.t + 1
    b1, b2, eps = config.beta1, config.beta2, config.eps
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, OptState(t=t, m=new_m, v=new_v)


def split_dataset(
    manifest: DatasetManifest, ratio: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded shuffle then prefix split into (train, validation)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    if not manifest.records:
        raise EmptyManifestError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(manifest.records))
    cut = int(len(manifest.records) * ratio)
    train = [manifest.records[i] for i in perm[:cut]]
    val = [manifest.records[i] for i in perm[cut:]]
    return (
        DatasetManifest(records=train, alphabet=list(manifest.alphabet), root=manifest.root),
        DatasetManifest(records=val, alphabet=list(manifest.alphabet), root=manifest.root),
    )


@dataclass
class Checkpoint:
    """Serializable model snapshot; parameter arrays are float32."""

    arch: network.ArchConfig
    alphabet: Alphabet
    step: int
    config: dict
    params: dict[str, np.ndarray]
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(
        cls, model: network.ModelParams, alphabet: Alphabet, step: int, config: dict
    ) -> "Checkpoint":
        params = {
            name: t.data.astype(np.float32) for name, t in model.parameters()
        }
        return cls(arch=model.arch, alphabet=alphabet, step=step, config=config, params=params)

    def to_model(self) -> network.ModelParams:
        model = network.init_model(self.arch, seed=0)
        for name, t in model.parameters():
            t.data = self.params[name].astype(np.float64)
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    order = sorted(ckpt.params)
    header = {
        "arch": ckpt.arch.to_dict(),
        "alphabet": list(ckpt.alphabet.symbols),
        "blank_index": ckpt.alphabet.blank,
        "step": ckpt.step,
        "config": ckpt.config,
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in order],
    }
    header_bytes = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes() for n in order
    )
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", ckpt.version))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))
    except OSError as exc:
        raise IoFailureError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailureError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptChecksumError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, supported {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if len(blob) < header_end + 4:
        raise CorruptChecksumError(f"{path}: truncated header")
    header = json.loads(blob[12:header_end].decode("utf-8"))
    payload = blob[header_end:-4]
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    expected = sum(
        int(np.prod(p["shape"])) * 4 for p in header["params"]
    )
    if len(payload) != expected or zlib.crc32(payload) != crc:
        raise CorruptChecksumError(f"{path}: payload fails integrity check")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for p in header["params"]:
        n = int(np.prod(p["shape"]))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(p["shape"])
        params[p["name"]] = arr.copy()
        offset += n * 4
    return Checkpoint(
        arch=network.ArchConfig.from_dict(header["arch"]),
        alphabet=Alphabet(symbols=tuple(header["alphabet"])),
        step=header["step"],
        config=header["config"],
        params=params,
        version=version,
    )


def preprocess_for_net(raster, input_h: int, input_w: int) -> np.ndarray:
    """Shared train/predict ingestion: tight crop then resize to net input."""
    return resize(tight_crop(raster), input_w, input_h).pixels


def load_manifest_images(
    manifest: DatasetManifest, input_h: int, input_w: int
) -> tuple[np.ndarray, list[str]]:
    """Load and preprocess every record: (N, 1, H, W) batch + transcripts."""
    if manifest.root is None:
        raise ValueError("manifest has no root directory to resolve image paths")
    images = np.empty((len(manifest.records), 1, input_h, input_w))
    transcripts = []
    for i, rec in enumerate(manifest.records):
        raster = load_image(manifest.root / rec.image)
        images[i, 0] = preprocess_for_net(raster, input_h, input_w)
        transcripts.append(rec.transcript)
    return images, transcripts


def build_alphabet(manifest: DatasetManifest, mode: str = "codepoint") -> Alphabet:
    """Classes from the manifest: per-codepoint (default) or per glyph label."""
    if mode == "codepoint":
        return Alphabet(symbols=tuple(manifest.alphabet))
    if mode == "grapheme":
        if manifest.root is None or not (manifest.root / "labels.json").exists():
            raise ValueError("grapheme alphabet needs labels.json next to the manifest")
        labels = json.loads((manifest.root / "labels.json").read_text(encoding="utf-8"))
        return Alphabet(symbols=tuple(labels))
    raise ValueError(f"unknown alphabet mode {mode!r}")


def _check_covered(alphabet: Alphabet, transcripts: list[str]) -> list[list[int]]:
    targets = []
    for t in transcripts:
        try:
            targets.append(alphabet.encode(t))
        except AlphabetMismatchError as exc:
            raise AlphabetMismatchError(f"transcript {t!r} not covered: {exc}") from exc
    return targets


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_wer: float

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_wer": self.val_wer,
        }


def write_metrics(metrics: list[EpochMetrics], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in metrics:
            fh.write(json.dumps(m.to_json_dict()) + "\n")


def _batched(n: int, batch_size: int, order) -> list[np.ndarray]:
    order = np.asarray(order)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _eval_pass(model, images, targets, transcripts, alphabet, batch_size):
    """Validation loss + WER without recording gradients."""
    losses = []
    decoded = []
    with no_grad():
        for idx in _batched(len(transcripts), batch_size, np.arange(len(transcripts))):
            logp = network.forward(model, Tensor(images[idx]))
            losses.append(ctc_batch_mean(logp, [targets[i] for i in idx]).data.item())
            for row in range(logp.shape[0]):
                decoded.append(greedy_decode(logp.data[row], alphabet))
    val_loss = float(np.mean(losses))
    val_wer = wer(decoded, transcripts)
    return val_loss, val_wer, decoded


def train(
    config: TrainConfig,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    arch: network.ArchConfig | None = None,
    alphabet: Alphabet | None = None,
    out_dir: str | Path | None = None,
) -> tuple[Checkpoint, list[EpochMetrics]]:
    """Optimize the recognizer; returns (best checkpoint, per-epoch metrics).

    When ``out_dir`` is given, the best checkpoint and a JSONL metrics log are
    written there as ``checkpoint.gfck`` and ``metrics.jsonl``.
    """
    if not train_manifest.records or not val_manifest.records:
        raise EmptyManifestError("need non-empty train and validation manifests")
    if alphabet is None:
        alphabet = build_alphabet(train_manifest)
    if arch is None:
        arch = network.ArchConfig(num_classes=alphabet.num_classes)
    if arch.num_classes != alphabet.num_classes:
        raise AlphabetMismatchError(
            f"architecture expects {arch.num_classes} classes, alphabet has {alphabet.num_classes}"
        )

    train_images, train_texts = load_manifest_images(train_manifest, arch.input_h, arch.input_w)
    val_images, val_texts = load_manifest_images(val_manifest, arch.input_h, arch.input_w)
    train_targets = _check_covered(alphabet, train_texts)
    val_targets = _check_covered(alphabet, val_texts)

    model = network.init_model(arch, seed=config.seed)
    named = model.parameters()
    state = OptState()
    metrics: list[EpochMetrics] = []
    best_val = np.inf
    best_params: dict[str, np.ndarray] | None = None
    best_step = 0
    step = 0
    epochs_since_best = 0

    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        order = rng.permutation(len(train_texts))
        epoch_losses = []
        for idx in _batched(len(train_texts), config.batch_size, order):
            model.zero_grads()
            logp = network.forward(model, Tensor(train_images[idx]))
            loss = ctc_batch_mean(logp, [train_targets[i] for i in idx])
            value = loss.data.item()
            step += 1
            if not np.isfinite(value):
                raise NonFiniteLossError(step, value)
            loss.backward()
            params = [t.data for _, t in named]
            grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for _, t in named]
            new_params, state = optimizer_step(params, grads, state, config)
            for (_, t), p in zip(named, new_params):
                t.data = p
            epoch_losses.append(value)

        train_loss = float(np.mean(epoch_losses))
        val_loss, val_wer, _ = _eval_pass(
            model, val_images, val_targets, val_texts, alphabet, config.batch_size
        )
        metrics.append(EpochMetrics(epoch, train_loss, val_loss, val_wer))
        log.info(
            "epoch %d: train_loss=%.4f val_loss=%.4f val_wer=%.3f",
            epoch, train_loss, val_loss, val_wer,
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = {name: t.data.copy() for name, t in named}
            best_step = step
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if config.train_loss_goal is not None and train_loss < config.train_loss_goal:
            log.info("train loss goal %.3f reached at epoch %d", config.train_loss_goal, epoch)
            break
        if config.patience is not None and epochs_since_best > config.patience:
            log.info("early stopping at epoch %d (patience %d)", epoch, config.patience)
            break

    if best_params is not None:
        for name, t in named:
            t.data = best_params[name]
    ckpt = Checkpoint.from_model(model, alphabet, best_step, config.to_dict())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, out_dir / "checkpoint.gfck")
        write_metrics(metrics, out_dir / "metrics.jsonl")
    return ckpt, metrics
