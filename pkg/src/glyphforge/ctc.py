"""Connectionist temporal classification.

The loss of a frame-wise class distribution against a target symbol sequence
is the negative log of the summed probability of every frame-level path that
collapses (merge adjacent repeats, then delete blanks) to the target. The sum
runs over the blank-interleaved extended target with the usual forward
recursion; a matching backward recursion yields the exact gradient with
respect to the per-frame log-probabilities. Everything is computed in log
space with log-sum-exp so long inputs do not underflow.

The blank is always the last class index. Decoding is greedy best-path only:
per-frame argmax (ties to the lowest class index), then collapse.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Function, Tensor

NEG_INF = -np.inf


class IndexOutOfRangeError(ValueError):
    """A frame label is outside the class range."""


class InfeasibleTargetError(ValueError):
    """Target cannot be emitted within the given frame count."""


class InstanceTooLargeError(ValueError):
    """Path enumeration would exceed the instance-size guard."""


class AlphabetMismatchError(ValueError):
    """Text contains symbols the alphabet cannot encode."""


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol classes 0..C-2; the blank class is index C-1.

    Symbols are arbitrary non-empty strings, so classes may be single
    codepoints or multi-codepoint grapheme clusters.
    """

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(self.symbols) == 0:
            raise ValueError("alphabet needs at least one symbol")
        if any(not s for s in self.symbols):
            raise ValueError("empty symbol not allowed")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in alphabet")

    @property
    def blank(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match segmentation of text into symbol indices."""
        by_symbol = {s: i for i, s in enumerate(self.symbols)}
        max_len = max(len(s) for s in self.symbols)
        out: list[int] = []
        pos = 0
        while pos < len(text):
            for take in range(min(max_len, len(text) - pos), 0, -1):
                idx = by_symbol.get(text[pos : pos + take])
                if idx is not None:
                    out.append(idx)
                    pos += take
                    break
            else:
                raise AlphabetMismatchError(
                    f"cannot encode {text!r} at position {pos}: "
                    f"no symbol matches {text[pos:]!r}"
                )
        return out

    def decode(self, indices: list[int]) -> str:
        for i in indices:
            if not 0 <= i < len(self.symbols):
                raise IndexOutOfRangeError(f"symbol index {i} outside 0..{len(self.symbols) - 1}")
        return "".join(self.symbols[i] for i in indices)


@dataclass(frozen=True)
class CtcResult:
    """Negative log-likelihood plus its gradient w.r.t. the log-probabilities."""

    loss: float
    grad_logp: np.ndarray


def _collapse_ids(path, blank: int) -> tuple[int, ...]:
    out = []
    prev = None
    for c in path:
        if c != prev:
            out.append(c)
        prev = c
    return tuple(c for c in out if c != blank)


def collapse(frame_labels, alphabet: Alphabet) -> str:
    """Merge adjacent repeats, delete blanks, map indices to symbols."""
    for c in frame_labels:
        if not 0 <= c < alphabet.num_classes:
            raise IndexOutOfRangeError(f"class index {c} outside 0..{alphabet.num_classes - 1}")
    return alphabet.decode(list(_collapse_ids(frame_labels, alphabet.blank)))


def min_frames(target) -> int:
    """Smallest frame count that can emit the target: length plus one
    separating blank per adjacent equal pair."""
    pairs = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + pairs


def _extended(target, blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_forward_backward(
    logp: np.ndarray, target, blank: int
) -> tuple[float, np.ndarray]:
    """Loss and gradient of one (T, C) log-probability matrix vs a target.

    Forward variables alpha include the emission at their own frame; the
    backward variables exclude it, so alpha + beta at any (t, s) is the log
    probability mass of all matching paths passing through that state. Summed
    over states per frame that mass is the full likelihood, which is why the
    gradient rows each sum to -1.
    """
    logp = np.asarray(logp, dtype=np.float64)
    t_len, n_classes = logp.shape
    target = list(target)
    if t_len < 1:
        raise InfeasibleTargetError("need at least one frame")
    for c in target:
        if not 0 <= c < blank:
            raise IndexOutOfRangeError(f"target index {c} outside 0..{blank - 1}")
    need = min_frames(target)
    if t_len < need:
        raise InfeasibleTargetError(
            f"target needs at least {need} frames, got {t_len}"
        )

    ext = _extended(target, blank)
    s_len = ext.size
    lp_ext = logp[:, ext]  # (T, S)

    # States reachable by a skip transition: a symbol differing from the one
    # two slots back (blanks never are).
    can_skip = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = lp_ext[0, 0]
    if s_len > 1:
        alpha[0, 1] = lp_ext[0, 1]
    pad2 = np.full(min(2, s_len), NEG_INF)
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        acc = np.logaddexp(stay, step)
        if s_len > 2:
            skip = np.concatenate((pad2, prev[:-2]))
            acc = np.where(can_skip, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + lp_ext[t]

    if s_len > 1:
        log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_z = alpha[-1, -1]

    beta = np.full((t_len, s_len), NEG_INF)
    beta[-1, -1] = 0.0
    if s_len > 1:
        beta[-1, -2] = 0.0
    skip_from = np.zeros(s_len, dtype=bool)
    if s_len > 2:
        skip_from[:-2] = can_skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp_ext[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(stay, step)
        if s_len > 2:
            skip = np.concatenate((nxt[2:], pad2))
            acc = np.where(skip_from, np.logaddexp(acc, skip), acc)
        beta[t] = acc

    # Posterior class occupancy per frame; gradient of -log Z w.r.t. logp.
    occupancy = alpha + beta - log_z  # (T, S) in log space
    grad = np.zeros_like(logp)
    with np.errstate(invalid="ignore"):
        mass = np.exp(occupancy)
    for s in range(s_len):
        grad[:, ext[s]] -= mass[:, s]
    return float(-log_z), grad


def ctc_loss(logp: Tensor | np.ndarray, target) -> CtcResult:
    """Alignment-summing loss of a (T, C) log-probability matrix.

    The blank is class C-1; target entries index the remaining classes. An
    empty target is allowed (its single path is all blanks).
    """
    arr = logp.data if isinstance(logp, Tensor) else np.asarray(logp, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a (T, C) matrix, got shape {arr.shape}")
    loss, grad = ctc_forward_backward(arr, target, blank=arr.shape[1] - 1)
    return CtcResult(loss=loss, grad_logp=grad)


def ctc_brute_force(logp: Tensor | np.ndarray, target, max_paths: int = 10**6) -> float:
    """Reference loss by enumerating every length-T path.

    Returns +inf when no path collapses to the target.
    """
    arr = logp.data if isinstance(logp, Tensor) else np.asarray(logp, dtype=np.float64)
    t_len, n_classes = arr.shape
    if n_classes**t_len > max_paths:
        raise InstanceTooLargeError(
            f"{n_classes}^{t_len} paths exceed the {max_paths} cap"
        )
    blank = n_classes - 1
    target = tuple(target)
    probs = np.exp(arr)
    total = 0.0
    for path in itertools.product(range(n_classes), repeat=t_len):
        if _collapse_ids(path, blank) == target:
            p = 1.0
            for t, c in enumerate(path):
                p *= probs[t, c]
            total += p
    if total == 0.0:
        return math.inf
    return -math.log(total)


def greedy_decode(logp: Tensor | np.ndarray, alphabet: Alphabet) -> str:
    """Best-path decoding: per-frame argmax, collapse, map to symbols."""
    arr = logp.data if isinstance(logp, Tensor) else np.asarray(logp, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != alphabet.num_classes:
        raise ValueError(
            f"expected (T, {alphabet.num_classes}) log-probabilities, got shape {arr.shape}"
        )
    best = arr.argmax(axis=1)  # ties resolve to the lowest index
    return collapse(best.tolist(), alphabet)


class _CtcBatchMean(Function):
    """Mean CTC loss over a batch; bridges the numeric loss into autodiff."""

    def forward(self, logp, targets):
        n = logp.shape[0]
        blank = logp.shape[2] - 1
        self.grads = np.empty_like(logp)
        losses = np.empty(n)
        for i in range(n):
            losses[i], self.grads[i] = ctc_forward_backward(logp[i], targets[i], blank)
        self.grads /= n
        return np.asarray(losses.mean())

    def backward(self, g):
        return (g * self.grads,)


def ctc_batch_mean(logp: Tensor, targets: list[list[int]]) -> Tensor:
    """Scalar training loss: per-sample CTC averaged over an (N, T, C) batch."""
    if logp.ndim != 3:
        raise ValueError(f"expected (N, T, C) log-probabilities, got shape {logp.shape}")
    if logp.shape[0] != len(targets):
        raise ValueError(f"{logp.shape[0]} samples but {len(targets)} targets")
    return _CtcBatchMean.apply(logp, targets)
