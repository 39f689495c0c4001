"""Deterministic synthetic token streams with a controllable frequency tail.

Tokens are drawn i.i.d. from a power-law distribution P(t) proportional to
(t+1)^(-alpha); alpha=0 is uniform, alpha around 1 gives a natural-language-
like tail where the rarest tokens almost never occur.
"""

import struct
from dataclasses import dataclass

import numpy as np


@dataclass
class ZipfStream:
    vocab: int
    alpha: float = 1.0
    length: int = 100_000
    seed: int = 0

    def validate(self):
        if self.vocab < 1:
            raise ValueError("vocab must be at least 1")
        if self.alpha < 0 or self.length < 0:
            raise ValueError("alpha and length must be nonnegative")


def zipf_probs(vocab: int, alpha: float) -> np.ndarray:
    """Exactly normalized token probabilities."""
    w = (np.arange(vocab) + 1.0) ** (-alpha)
    return w / w.sum()


def zipf_token_stream(spec: ZipfStream) -> np.ndarray:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    p = zipf_probs(spec.vocab, spec.alpha)
    return rng.choice(spec.vocab, size=spec.length, p=p).astype(np.int32)


def next_token_batches(stream, context: int, batch: int, seed: int):
    """Yield (inputs, targets) batches; targets are inputs shifted by one.

    Non-overlapping windows of length context+1, shuffled deterministically,
    grouped into full batches.  Cycles forever (reshuffling each epoch with a
    seed derived from the epoch index).
    """
    stream = np.asarray(stream)
    if context < 1:
        raise ValueError("context must be at least 1")
    n_windows = (len(stream) - 1) // context
    if n_windows < 1:
        raise ValueError("stream shorter than context + 1")
    epoch = 0
    while True:
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(n_windows)
        for i in range(0, n_windows - batch + 1, batch):
            idx = order[i:i + batch]
            starts = idx * context
            inputs = np.stack([stream[s:s + context] for s in starts])
            targets = np.stack([stream[s + 1:s + context + 1] for s in starts])
            yield inputs, targets
        epoch += 1


def batches_per_epoch(length: int, context: int, batch: int) -> int:
    return ((length - 1) // context) // batch


# ---- flat binary dump ----------------------------------------------------


def dump_stream(path, stream, spec: ZipfStream):
    header = f"{spec.vocab},{len(stream)},{spec.alpha},{spec.seed}\n"
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(np.asarray(stream, dtype="<i4").tobytes())


def load_stream(path):
    with open(path, "rb") as f:
        header = f.readline().decode().strip()
        vocab, length, alpha, seed = header.split(",")
        data = np.frombuffer(f.read(), dtype="<i4")
    spec = ZipfStream(int(vocab), float(alpha), int(length), int(seed))
    if len(data) != spec.length:
        raise ValueError("token payload does not match header length")
    return data, spec
