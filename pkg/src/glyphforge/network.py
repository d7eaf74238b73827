"""Convolutional-recurrent word recognizer.

The plain recurrence h_t = f(h_{t-1}, x_t; theta) is the conceptual baseline;
the trainable cells here are gated (LSTM) refinements of it: a forget gate,
an input gate with a tanh candidate vector, and an output gate, combined as

    f_t = sigmoid(W_f . [h_{t-1}, x_t] + b_f)
    i_t = sigmoid(W_i . [h_{t-1}, x_t] + b_i)
    cand = tanh(W_c . [h_{t-1}, x_t] + b_c)
    c_t = c_{t-1} * f_t + cand * i_t
    o_t = sigmoid(W_o . [h_{t-1}, x_t] + b_o)
    h_t = o_t * tanh(c_t)

The bidirectional layer runs one cell left-to-right and a second cell
right-to-left and mixes the two hidden sequences per frame through a pair of
output matrices (identity output activation). Both directions use the full
gated cell with biases.

Full pipeline: conv stack -> column-wise feature sequence -> BiLSTM ->
linear projection -> log-softmax per frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeMismatchError,
    Tensor,
    concat,
    conv2d,
    log_softmax,
    matmul,
    maxpool2d,
    stack0,
)


class EmptySequenceError(ValueError):
    """Recurrent layer fed a zero-length sequence."""


@dataclass(frozen=True)
class ArchConfig:
    """Architecture knobs; the defaults are the reference recognizer."""

    num_classes: int
    input_h: int = 32
    input_w: int = 128
    conv_channels: tuple[int, ...] = (16, 32)
    kernel_size: int = 3
    pool_windows: tuple[tuple[int, int], ...] = ((2, 2), (2, 1))
    hidden_size: int = 64
    mix_size: int = 64

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least one symbol class plus blank")
        if len(self.conv_channels) != len(self.pool_windows):
            raise ValueError("one pool window per conv layer")

    @property
    def seq_len(self) -> int:
        w = self.input_w
        for _, pw in self.pool_windows:
            w //= pw
        return w

    @property
    def feature_size(self) -> int:
        h = self.input_h
        for ph, _ in self.pool_windows:
            h //= ph
        return self.conv_channels[-1] * h

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_h": self.input_h,
            "input_w": self.input_w,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "pool_windows": [list(p) for p in self.pool_windows],
            "hidden_size": self.hidden_size,
            "mix_size": self.mix_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            num_classes=d["num_classes"],
            input_h=d["input_h"],
            input_w=d["input_w"],
            conv_channels=tuple(d["conv_channels"]),
            kernel_size=d["kernel_size"],
            pool_windows=tuple(tuple(p) for p in d["pool_windows"]),
            hidden_size=d["hidden_size"],
            mix_size=d["mix_size"],
        )


@dataclass
class LstmParams:
    """Gate weights over the concatenated [h_prev, x_t] plus biases.

    Every gate weight has shape (hidden_size, hidden_size + input_size).
    """

    W_f: Tensor
    W_i: Tensor
    W_c: Tensor
    W_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_c: Tensor
    b_o: Tensor
    hidden_size: int
    input_size: int

    def __post_init__(self):
        expected = (self.hidden_size, self.hidden_size + self.input_size)
        for name in ("W_f", "W_i", "W_c", "W_o"):
            if getattr(self, name).shape != expected:
                raise ShapeMismatchError(f"{name} shape {getattr(self, name).shape} != {expected}")
        for name in ("b_f", "b_i", "b_c", "b_o"):
            if getattr(self, name).shape != (self.hidden_size,):
                raise ShapeMismatchError(f"{name} shape != ({self.hidden_size},)")


@dataclass
class BilstmParams:
    """Two directional cells plus the per-frame output mixing matrices."""

    forward_cell: LstmParams
    backward_cell: LstmParams
    w_o1: Tensor
    w_o2: Tensor

    def __post_init__(self):
        if self.forward_cell.hidden_size != self.backward_cell.hidden_size:
            raise ShapeMismatchError("directional hidden sizes differ")


@dataclass
class ConvLayer:
    kernel: Tensor
    bias: Tensor
    pool: tuple[int, int]


@dataclass
class ModelParams:
    """All learnable weights of the recognizer."""

    arch: ArchConfig
    convs: list[ConvLayer] = field(default_factory=list)
    bilstm: BilstmParams | None = None
    proj_w: Tensor | None = None
    proj_b: Tensor | None = None

    def parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(self.convs):
            out.append((f"conv{i}.kernel", layer.kernel))
            out.append((f"conv{i}.bias", layer.bias))
        for direction, cell in (("fwd", self.bilstm.forward_cell), ("bwd", self.bilstm.backward_cell)):
            for name in ("W_f", "W_i", "W_c", "W_o", "b_f", "b_i", "b_c", "b_o"):
                out.append((f"lstm.{direction}.{name}", getattr(cell, name)))
        out.append(("mix.w_o1", self.bilstm.w_o1))
        out.append(("mix.w_o2", self.bilstm.w_o2))
        out.append(("proj.w", self.proj_w))
        out.append(("proj.b", self.proj_b))
        return out

    def num_parameters(self) -> int:
        return sum(t.data.size for _, t in self.parameters())

    def zero_grads(self) -> None:
        for _, t in self.parameters():
            t.grad = None


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def _init_cell(rng: np.random.Generator, hidden: int, inp: int) -> LstmParams:
    fan_in = hidden + inp
    return LstmParams(
        W_f=_uniform(rng, (hidden, fan_in), fan_in),
        W_i=_uniform(rng, (hidden, fan_in), fan_in),
        W_c=_uniform(rng, (hidden, fan_in), fan_in),
        W_o=_uniform(rng, (hidden, fan_in), fan_in),
        b_f=Tensor(np.zeros(hidden)),
        b_i=Tensor(np.zeros(hidden)),
        b_c=Tensor(np.zeros(hidden)),
        b_o=Tensor(np.zeros(hidden)),
        hidden_size=hidden,
        input_size=inp,
    )


def init_model(arch: ArchConfig, seed: int) -> ModelParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    convs = []
    c_in = 1
    k = arch.kernel_size
    for c_out, pool in zip(arch.conv_channels, arch.pool_windows):
        convs.append(
            ConvLayer(
                kernel=_uniform(rng, (c_out, c_in, k, k), c_in * k * k),
                bias=Tensor(np.zeros(c_out)),
                pool=pool,
            )
        )
        c_in = c_out
    d = arch.feature_size
    h = arch.hidden_size
    bilstm = BilstmParams(
        forward_cell=_init_cell(rng, h, d),
        backward_cell=_init_cell(rng, h, d),
        w_o1=_uniform(rng, (arch.mix_size, h), h),
        w_o2=_uniform(rng, (arch.mix_size, h), h),
    )
    return ModelParams(
        arch=arch,
        convs=convs,
        bilstm=bilstm,
        proj_w=_uniform(rng, (arch.num_classes, arch.mix_size), arch.mix_size),
        proj_b=Tensor(np.zeros(arch.num_classes)),
    )


def lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One gated-cell update; rows are batch items."""
    if x_t.shape[-1] != p.input_size or h_prev.shape[-1] != p.hidden_size:
        raise ShapeMismatchError(
            f"step inputs {x_t.shape}/{h_prev.shape} do not match cell "
            f"(input {p.input_size}, hidden {p.hidden_size})"
        )
    hx = concat(h_prev, x_t, axis=1)
    f_t = (matmul(hx, p.W_f, transpose_b=True) + p.b_f).sigmoid()
    i_t = (matmul(hx, p.W_i, transpose_b=True) + p.b_i).sigmoid()
    cand = (matmul(hx, p.W_c, transpose_b=True) + p.b_c).tanh()
    c_t = c_prev * f_t + cand * i_t
    o_t = (matmul(hx, p.W_o, transpose_b=True) + p.b_o).sigmoid()
    h_t = o_t * c_t.tanh()
    return h_t, c_t


def lstm_run(seq: Tensor, cell: LstmParams, reverse: bool = False) -> list[Tensor]:
    """Run a cell over a (T, N, D) sequence from zero state.

    Returns hidden states aligned to input positions (index t holds the
    state produced when the cell consumed frame t, in either direction).
    """
    t_len, n, _ = seq.shape
    h = Tensor(np.zeros((n, cell.hidden_size)))
    c = Tensor(np.zeros((n, cell.hidden_size)))
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    out: list[Tensor | None] = [None] * t_len
    for t in order:
        h, c = lstm_step(seq[t], h, c, cell)
        out[t] = h
    return out  # type: ignore[return-value]


def bilstm(seq: Tensor, p: BilstmParams) -> Tensor:
    """Mix forward and backward hidden sequences per frame: (T, N, mix)."""
    if seq.ndim != 3:
        raise ShapeMismatchError(f"expected (T, N, D) sequence, got {seq.shape}")
    if seq.shape[0] == 0:
        raise EmptySequenceError("bilstm needs at least one frame")
    h_f = lstm_run(seq, p.forward_cell)
    h_b = lstm_run(seq, p.backward_cell, reverse=True)
    frames = [
        matmul(h_f[t], p.w_o1, transpose_b=True) + matmul(h_b[t], p.w_o2, transpose_b=True)
        for t in range(seq.shape[0])
    ]
    return stack0(frames)


def features_to_sequence(fmap: Tensor) -> Tensor:
    """Read an (N, C, H, W) feature map left to right: (W, N, C*H).

    Frame t is column t across all channels and rows, flattened channel-major.
    """
    n, c, h, w = fmap.shape
    return fmap.transpose(3, 0, 1, 2).reshape(w, n, c * h)


def forward(model: ModelParams, batch: Tensor | np.ndarray) -> Tensor:
    """Log-probabilities over classes per frame, shape (N, T, C)."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeMismatchError(f"expected (N, 1, H, W) batch, got {x.shape}")
    if x.shape[2] != model.arch.input_h or x.shape[3] != model.arch.input_w:
        raise ShapeMismatchError(
            f"batch spatial size {x.shape[2:]} != model input "
            f"({model.arch.input_h}, {model.arch.input_w})"
        )
    pad = model.arch.kernel_size // 2
    for layer in model.convs:
        x = conv2d(x, layer.kernel, layer.bias, stride=1, padding=pad)
        x = maxpool2d(x, layer.pool)
    seq = features_to_sequence(x)
    mixed = bilstm(seq, model.bilstm)
    t_len, n, mix = mixed.shape
    logits = matmul(mixed.reshape(t_len * n, mix), model.proj_w, transpose_b=True) + model.proj_b
    logp = log_softmax(logits, axis=-1)
    return logp.reshape(t_len, n, model.arch.num_classes).transpose(1, 0, 2)
