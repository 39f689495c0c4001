"""Toy model zoo: two-layer linear token model, MLP classifier, mini GPT-style
transformer.  Every trainable tensor is a named ParamBlock tagged with a layer
type so optimizer rules and SNR summaries can be keyed by block.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .autodiff import Tape


class LayerType(Enum):
    TOK_EMBD = "TokEmbd"
    LM_HEAD = "LMHead"
    ATTN_KEY = "AttnKey"
    ATTN_QUERY = "AttnQuery"
    ATTN_VALUE = "AttnValue"
    ATTN_PROJ = "AttnProj"
    MLP_UP = "MLPUp"
    MLP_DOWN = "MLPDown"
    ATTN_LN = "AttnLN"
    MLP_LN = "MLPLN"
    FINAL_LN = "FinalLN"
    POS_EMBD = "PosEmbd"
    GENERIC = "Generic"


@dataclass
class ParamBlock:
    name: str
    layer_type: LayerType
    depth: int
    weights: np.ndarray
    tied_to: Optional[str] = None  # name of the block owning the shared tensor

    @property
    def is_tied_alias(self):
        return self.tied_to is not None

    @property
    def fan_out(self):
        return self.weights.shape[0]

    @property
    def fan_in(self):
        return self.weights.shape[1] if self.weights.ndim == 2 else 0


@dataclass
class ModelSpec:
    kind: str  # LinearTokenModel | MLPClassifier | MiniTransformer
    vocab: int = 256
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 32
    weight_tying: bool = True
    init: str = "mitchell"  # mitchell | default
    init_std: float = 0.02
    in_dim: int = 8  # MLPClassifier input features
    n_classes: int = 4  # MLPClassifier outputs

    def validate(self):
        if self.kind not in ("LinearTokenModel", "MLPClassifier", "MiniTransformer"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "MiniTransformer" and self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab < 1 or self.d_model < 1:
            raise ValueError("vocab and d_model must be positive")


class Model:
    """Ordered parameter blocks plus a tape-building logits function."""

    def __init__(self, spec, blocks, build_logits):
        self.spec = spec
        self.blocks = blocks
        self._build_logits = build_logits

    def unique_blocks(self):
        return [b for b in self.blocks if not b.is_tied_alias]

    def params(self):
        return {b.name: b.weights for b in self.unique_blocks()}

    def _param_nodes(self, tape):
        nodes = {}
        for b in self.unique_blocks():
            nodes[b.name] = tape.param(b.weights)
        for b in self.blocks:
            if b.is_tied_alias:
                nodes[b.name] = nodes[b.tied_to]
        return nodes

    def loss_and_grads(self, inputs, targets):
        tape = Tape()
        nodes = self._param_nodes(tape)
        logits = self._build_logits(tape, nodes, inputs)
        loss = tape.softmax_cross_entropy(logits, targets)
        tape.backward(loss)
        grads = {}
        for b in self.unique_blocks():
            g = nodes[b.name].grad
            # contiguous so reductions are independent of tape memory layout
            grads[b.name] = (np.ascontiguousarray(g) if g is not None
                             else np.zeros_like(b.weights))
        return float(loss.value), grads

    def loss_only(self, inputs, targets):
        tape = Tape()
        nodes = self._param_nodes(tape)
        logits = self._build_logits(tape, nodes, inputs)
        loss = tape.softmax_cross_entropy(logits, targets)
        return float(loss.value)

    def position_losses(self, inputs, targets):
        """Per-position cross-entropy, shape matching targets."""
        tape = Tape()
        nodes = self._param_nodes(tape)
        z = self._build_logits(tape, nodes, inputs).value
        t = np.asarray(targets)
        zmax = z.max(axis=-1, keepdims=True)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
        logp = z - lse
        return -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]

    def census(self):
        """Text manifest: one `name layer_type depth fan_out fan_in tied_to` line per block."""
        lines = []
        for b in self.blocks:
            tied = b.tied_to if b.tied_to else "-"
            lines.append(
                f"{b.name} {b.layer_type.value} {b.depth} {b.fan_out} {b.fan_in} {tied}"
            )
        return "\n".join(lines) + "\n"


@dataclass
class CensusEntry:
    name: str
    layer_type: LayerType
    depth: int
    fan_out: int
    fan_in: int  # 0 for vectors
    tied_to: Optional[str] = None

    @property
    def n_entries(self):
        return self.fan_out * self.fan_in if self.fan_in else self.fan_out


def census_entries(model: Model):
    return [
        CensusEntry(b.name, b.layer_type, b.depth, b.fan_out, b.fan_in, b.tied_to)
        for b in model.blocks
    ]


def parse_census(text: str):
    """Parse the manifest format emitted by Model.census()."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"census line {lineno}: expected 6 fields, got {len(parts)}")
        name, lt, depth, fan_out, fan_in, tied = parts
        entries.append(
            CensusEntry(name, LayerType(lt), int(depth), int(fan_out), int(fan_in),
                        None if tied == "-" else tied)
        )
    return entries


def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


def _init_matrix(rng, shape, spec, residual=False):
    if spec.init == "default":
        bound = 1.0 / np.sqrt(shape[-1])
        return rng.uniform(-bound, bound, size=shape)
    std = spec.init_std
    if residual:
        std = spec.init_std / np.sqrt(2.0 * spec.n_layers)
    return _normal(rng, shape, std)


def build_model(spec: ModelSpec, seed: int) -> Model:
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.kind == "LinearTokenModel":
        return _build_linear(spec, rng)
    if spec.kind == "MLPClassifier":
        return _build_mlp(spec, rng)
    return _build_transformer(spec, rng)


def forward_loss(model: Model, inputs, targets) -> float:
    return model.loss_only(inputs, targets)


# ---- linear token model ------------------------------------------------


def _build_linear(spec, rng):
    # embedding rows at unit scale, head scaled down by 1/sqrt(d_model)
    emb = _normal(rng, (spec.vocab, spec.d_model), 1.0)
    blocks = [ParamBlock("embed", LayerType.TOK_EMBD, 0, emb)]
    if spec.weight_tying:
        blocks.append(ParamBlock("head", LayerType.LM_HEAD, 0, emb, tied_to="embed"))
    else:
        head = _normal(rng, (spec.vocab, spec.d_model), 1.0 / np.sqrt(spec.d_model))
        blocks.append(ParamBlock("head", LayerType.LM_HEAD, 0, head))

    def build_logits(tape, nodes, ids):
        _check_ids(ids, spec.vocab)
        h = tape.embedding(nodes["embed"], ids)  # (B, T, d)
        return tape.matmul(h, tape.transpose(nodes["head"], (1, 0)))

    return Model(spec, blocks, build_logits)


# ---- MLP classifier ----------------------------------------------------


def _build_mlp(spec, rng):
    widths = [spec.in_dim] + [spec.d_model] * spec.n_layers + [spec.n_classes]
    blocks = []
    for i in range(len(widths) - 1):
        w = _init_matrix(rng, (widths[i + 1], widths[i]), spec)
        blocks.append(ParamBlock(f"fc{i}.weight", LayerType.GENERIC, i, w))
        blocks.append(ParamBlock(f"fc{i}.bias", LayerType.GENERIC, i, np.zeros(widths[i + 1])))
    n_lin = len(widths) - 1

    def build_logits(tape, nodes, x):
        h = tape.constant(np.asarray(x, dtype=np.float64))
        for i in range(n_lin):
            h = tape.matmul(h, tape.transpose(nodes[f"fc{i}.weight"], (1, 0)))
            h = tape.add(h, nodes[f"fc{i}.bias"])
            if i < n_lin - 1:
                # smooth activation keeps finite-difference checks clean
                h = tape.gelu(h)
        return h

    return Model(spec, blocks, build_logits)


# ---- mini transformer --------------------------------------------------


def _build_transformer(spec, rng):
    d, H = spec.d_model, spec.n_heads
    dh = d // H
    blocks = [
        ParamBlock("tok_embd", LayerType.TOK_EMBD, 0, _normal(rng, (spec.vocab, d), spec.init_std)),
        ParamBlock("pos_embd", LayerType.POS_EMBD, 0, _normal(rng, (spec.context, d), spec.init_std)),
    ]
    for i in range(spec.n_layers):
        p = f"h.{i}"
        blocks.append(ParamBlock(f"{p}.attn_ln", LayerType.ATTN_LN, i, np.ones(d)))
        blocks.append(ParamBlock(f"{p}.attn.key", LayerType.ATTN_KEY, i, _init_matrix(rng, (d, d), spec)))
        blocks.append(ParamBlock(f"{p}.attn.query", LayerType.ATTN_QUERY, i, _init_matrix(rng, (d, d), spec)))
        blocks.append(ParamBlock(f"{p}.attn.value", LayerType.ATTN_VALUE, i, _init_matrix(rng, (d, d), spec)))
        blocks.append(ParamBlock(f"{p}.attn.proj", LayerType.ATTN_PROJ, i, _init_matrix(rng, (d, d), spec, residual=True)))
        blocks.append(ParamBlock(f"{p}.mlp_ln", LayerType.MLP_LN, i, np.ones(d)))
        blocks.append(ParamBlock(f"{p}.mlp.up", LayerType.MLP_UP, i, _init_matrix(rng, (4 * d, d), spec)))
        blocks.append(ParamBlock(f"{p}.mlp.down", LayerType.MLP_DOWN, i, _init_matrix(rng, (d, 4 * d), spec, residual=True)))
    blocks.append(ParamBlock("final_ln", LayerType.FINAL_LN, spec.n_layers, np.ones(d)))
    if spec.weight_tying:
        blocks.append(ParamBlock("lm_head", LayerType.LM_HEAD, spec.n_layers, blocks[0].weights, tied_to="tok_embd"))
    else:
        blocks.append(ParamBlock("lm_head", LayerType.LM_HEAD, spec.n_layers, _init_matrix(rng, (spec.vocab, d), spec)))

    def build_logits(tape, nodes, ids):
        _check_ids(ids, spec.vocab)
        ids = np.asarray(ids)
        B, T = ids.shape
        if T > spec.context:
            raise ValueError(f"sequence length {T} exceeds context {spec.context}")
        mask = np.triu(np.full((T, T), -np.inf), k=1)
        h = tape.add(
            tape.embedding(nodes["tok_embd"], ids),
            tape.embedding(nodes["pos_embd"], np.arange(T)),
        )
        for i in range(spec.n_layers):
            p = f"h.{i}"
            # attention sublayer
            x = tape.layernorm(h, nodes[f"{p}.attn_ln"])
            q = tape.matmul(x, tape.transpose(nodes[f"{p}.attn.query"], (1, 0)))
            k = tape.matmul(x, tape.transpose(nodes[f"{p}.attn.key"], (1, 0)))
            v = tape.matmul(x, tape.transpose(nodes[f"{p}.attn.value"], (1, 0)))
            q = tape.transpose(tape.reshape(q, (B, T, H, dh)), (0, 2, 1, 3))
            k = tape.transpose(tape.reshape(k, (B, T, H, dh)), (0, 2, 1, 3))
            v = tape.transpose(tape.reshape(v, (B, T, H, dh)), (0, 2, 1, 3))
            scores = tape.scale(tape.matmul(q, tape.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
            att = tape.masked_softmax(scores, mask)
            o = tape.matmul(att, v)
            o = tape.reshape(tape.transpose(o, (0, 2, 1, 3)), (B, T, d))
            o = tape.matmul(o, tape.transpose(nodes[f"{p}.attn.proj"], (1, 0)))
            h = tape.add(h, o)
            # MLP sublayer
            x = tape.layernorm(h, nodes[f"{p}.mlp_ln"])
            u = tape.gelu(tape.matmul(x, tape.transpose(nodes[f"{p}.mlp.up"], (1, 0))))
            u = tape.matmul(u, tape.transpose(nodes[f"{p}.mlp.down"], (1, 0)))
            h = tape.add(h, u)
        h = tape.layernorm(h, nodes["final_ln"])
        return tape.matmul(h, tape.transpose(nodes["lm_head"], (1, 0)))

    return Model(spec, blocks, build_logits)


def _check_ids(ids, vocab):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"token id out of range for vocab {vocab}")
