"""Adam with shareable second moments.

One optimizer class covers the whole family: each block carries a sharing
spec k, the second moment V is stored at the reduced shape, and k=NONE
reproduces plain AdamW bit-for-bit.  A standalone reference Adam (full V,
written straight from the textbook update) exists purely as the independent
check for the equivalence tests.
"""

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .rules import RuleSet
from .tensors import Axes, broadcast_along, mean_along, reduced_shape


class DivergenceError(RuntimeError):
    def __init__(self, block_name):
        super().__init__(f"non-finite update in block {block_name!r}")
        self.block_name = block_name


@dataclass
class Hyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: Optional[float] = 1.0


@dataclass
class Schedule:
    peak_lr: float
    warmup: int
    total: int

    def __post_init__(self):
        if not 0 < self.warmup < self.total:
            raise ValueError("need 0 < warmup < total")

    @property
    def floor(self):
        return self.peak_lr / 10.0


def lr_at(s: Schedule, t: int) -> float:
    """Linear warmup to the peak, then cosine decay to peak/10."""
    if t < 0 or t > s.total:
        raise ValueError(f"step {t} outside [0, {s.total}]")
    if t <= s.warmup:
        return s.peak_lr * t / s.warmup
    frac = (t - s.warmup) / (s.total - s.warmup)
    return s.floor + (s.peak_lr - s.floor) * (1.0 + np.cos(np.pi * frac)) / 2.0


def clip_grad_norm(grads: dict, max_norm: float):
    """Scale all gradients so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    sq = 0.0
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise DivergenceError("gradient")
        sq += float(np.sum(g * g))
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


@dataclass
class BlockState:
    k: Axes
    m: np.ndarray  # full parameter shape
    v: np.ndarray  # reduced shape per k


class SharedMomentAdam:
    """AdamW whose second moment is averaged over each block's sharing axes."""

    def __init__(self, blocks, rules: RuleSet, hyper: Hyper):
        self.hyper = hyper
        self.rules = rules
        self.blocks = {b.name: b for b in blocks if not b.is_tied_alias}
        self.t = 0
        self.state = {}
        for name, b in self.blocks.items():
            k = rules.axes_for(name)
            if k in (Axes.FAN_OUT, Axes.FAN_IN) and b.weights.ndim != 2:
                raise ValueError(f"{k.value} rule on rank-1 block {name!r}")
            self.state[name] = BlockState(
                k=k,
                m=np.zeros_like(b.weights),
                v=np.zeros(reduced_shape(b.weights.shape, k)),
            )

    def step(self, grads: dict, lr_t: Optional[float] = None):
        """One optimizer step over all blocks; grads keyed by block name."""
        h = self.hyper
        lr = h.lr if lr_t is None else lr_t
        if h.clip_norm is not None:
            grads, _ = clip_grad_norm(grads, h.clip_norm)
        self.t += 1
        for name, b in self.blocks.items():
            self._update_block(name, b.weights, grads[name], lr)

    def _update_block(self, name, w, g, lr):
        h = self.hyper
        st = self.state[name]
        g = np.ascontiguousarray(g)  # tape grads can be transposed views
        kernels.ewma(st.m, g, h.beta1)
        kernels.ewma(st.v, mean_along(g * g, st.k), h.beta2)
        vhat = st.v / (1.0 - h.beta2**self.t)
        denom = np.sqrt(broadcast_along(vhat, st.k, w.shape)) + h.eps
        kernels.param_update(w, st.m, denom, lr, 1.0 - h.beta1**self.t, h.weight_decay)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(name)

    # ---- checkpoint round trip ----------------------------------------

    def dump_state(self) -> str:
        buf = io.StringIO()
        buf.write(f"t {self.t}\n")
        for name in sorted(self.state):
            st = self.state[name]
            buf.write(f"block {name} {st.k.value}\n")
            _write_array(buf, "m", st.m)
            _write_array(buf, "v", st.v)
        return buf.getvalue()

    def load_state(self, text: str):
        lines = iter(text.splitlines())
        header = next(lines).split()
        assert header[0] == "t"
        self.t = int(header[1])
        for line in lines:
            tag, name, ktoken = line.split()
            assert tag == "block"
            st = self.state[name]
            if st.k is not Axes(ktoken):
                raise ValueError(f"sharing mismatch for block {name!r}")
            st.m = _read_array(lines, "m", st.m.shape)
            st.v = _read_array(lines, "v", st.v.shape)


def _write_array(buf, tag, a):
    buf.write(f"{tag} {' '.join(str(d) for d in a.shape)}\n")
    buf.write(" ".join(np.format_float_scientific(x, unique=True) for x in a.ravel()))
    buf.write("\n")


def _read_array(lines, tag, shape):
    head = next(lines).split()
    assert head[0] == tag
    got = tuple(int(x) for x in head[1:])
    if got != tuple(shape):
        raise ValueError(f"{tag} shape mismatch: {got} vs {tuple(shape)}")
    data = np.array([float(x) for x in next(lines).split()])
    return data.reshape(shape)


class ReferenceAdam:
    """Textbook AdamW with a full second moment per parameter.

    Kept deliberately separate from SharedMomentAdam (no shared code paths)
    so equivalence tests compare two independent routes.
    """

    def __init__(self, blocks, hyper: Hyper):
        self.hyper = hyper
        self.blocks = {b.name: b for b in blocks if not b.is_tied_alias}
        self.t = 0
        self.m = {n: np.zeros_like(b.weights) for n, b in self.blocks.items()}
        self.v = {n: np.zeros_like(b.weights) for n, b in self.blocks.items()}

    def step(self, grads: dict, lr_t: Optional[float] = None):
        h = self.hyper
        lr = h.lr if lr_t is None else lr_t
        if h.clip_norm is not None:
            grads, _ = clip_grad_norm(grads, h.clip_norm)
        self.t += 1
        for name, b in self.blocks.items():
            g = grads[name]
            self.m[name] = h.beta1 * self.m[name] + (1.0 - h.beta1) * g
            self.v[name] = h.beta2 * self.v[name] + (1.0 - h.beta2) * (g * g)
            mhat = self.m[name] / (1.0 - h.beta1**self.t)
            vhat = self.v[name] / (1.0 - h.beta2**self.t)
            b.weights -= lr * (mhat / (np.sqrt(vhat) + h.eps))
            b.weights -= (lr * h.weight_decay) * b.weights
