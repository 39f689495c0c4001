"""Compression rules: which axes each block shares its second moment over.

Rules come from three places: derived from averaged SNR summaries with a
cutoff, a canonical per-layer-type table, or a hand-written rules file.
Savings accounting counts stored second-moment entries against the
uncompressed baseline.
"""

import json
from dataclasses import dataclass, field
from typing import Dict

from .models import CensusEntry, LayerType
from .tensors import Axes

# vector blocks never share their moment; matrices may
VECTOR_TYPES = (LayerType.ATTN_LN, LayerType.MLP_LN, LayerType.FINAL_LN)

# candidate order doubles as the tie-break: more savings first
_CANDIDATES = (Axes.BOTH, Axes.FAN_OUT, Axes.FAN_IN)

# per-layer-type table of recommended sharing dimensions; embedding-like
# blocks are stored (vocab, d_model), so FAN_IN shares over the embedding
# dimension and keeps one moment per token.  Token dimensions are never
# compressed.
CANONICAL = {
    LayerType.ATTN_KEY: Axes.FAN_IN,
    LayerType.ATTN_QUERY: Axes.FAN_IN,
    LayerType.ATTN_VALUE: Axes.FAN_OUT,
    LayerType.ATTN_PROJ: Axes.FAN_OUT,
    LayerType.MLP_UP: Axes.FAN_OUT,
    LayerType.MLP_DOWN: Axes.FAN_OUT,
    LayerType.TOK_EMBD: Axes.FAN_IN,
    LayerType.LM_HEAD: Axes.FAN_IN,
    LayerType.ATTN_LN: Axes.NONE,
    LayerType.MLP_LN: Axes.NONE,
    LayerType.FINAL_LN: Axes.NONE,
    LayerType.POS_EMBD: Axes.NONE,
    LayerType.GENERIC: Axes.NONE,
}


@dataclass
class RuleSet:
    axes: Dict[str, Axes]
    provenance: str = "manual"

    def axes_for(self, name: str) -> Axes:
        return self.axes.get(name, Axes.NONE)

    def __eq__(self, other):
        return isinstance(other, RuleSet) and self.axes == other.axes


def _owner_entries(census):
    """Census entries that own storage (tied aliases folded away)."""
    return [e for e in census if e.tied_to is None]


def derive_rules(avg, census, cutoff: float = 1.0, mode: str = "per_layer",
                 include_both: bool = True) -> RuleSet:
    """Assign each matrix block its highest-SNR sharing dimension, gated by cutoff.

    avg: map (block_name, Axes) -> averaged SNR.  mode="depth_averaged" first
    pools SNR across blocks of the same layer type.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    candidates = _CANDIDATES if include_both else (Axes.FAN_OUT, Axes.FAN_IN)
    if mode == "depth_averaged":
        pooled = depth_average(avg, census)
        lookup = lambda e, k: pooled.get((e.layer_type, k))
    elif mode == "per_layer":
        lookup = lambda e, k: avg.get((e.name, k))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = {}
    for e in _owner_entries(census):
        if e.fan_in == 0 or e.layer_type in VECTOR_TYPES:
            out[e.name] = Axes.NONE
            continue
        scored = []
        for k in candidates:
            s = lookup(e, k)
            if s is None:
                raise ValueError(f"missing averaged SNR for block {e.name!r} at {k.value}")
            scored.append((s, k))
        best_snr = max(s for s, _ in scored)
        # first candidate attaining the max wins (savings-first tie-break)
        best_k = next(k for s, k in scored if s == best_snr)
        out[e.name] = best_k if best_snr >= cutoff else Axes.NONE
    return RuleSet(out, provenance=f"derived(cutoff={cutoff}, mode={mode})")


def depth_average(avg, census):
    """Pool averaged SNR across blocks sharing a layer type: (type, k) -> mean."""
    sums, counts = {}, {}
    types = {e.name: e.layer_type for e in census}
    for (name, k), v in avg.items():
        lt = types.get(name)
        if lt is None:
            continue
        key = (lt, k)
        sums[key] = sums.get(key, 0.0) + v
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def canonical_rules(census) -> RuleSet:
    out = {}
    for e in _owner_entries(census):
        k = CANONICAL[e.layer_type]
        if e.fan_in == 0:
            k = Axes.NONE
        out[e.name] = k
    return RuleSet(out, provenance="canonical")


def baseline_rules(census, variant: str) -> RuleSet:
    """Named baselines: adam, adalayer, adalayer_ln_tl, adamini_v2."""
    owners = _owner_entries(census)
    out = {}
    if variant == "adam":
        out = {e.name: Axes.NONE for e in owners}
    elif variant == "adalayer":
        out = {e.name: Axes.BOTH for e in owners}
    elif variant == "adalayer_ln_tl":
        for e in owners:
            exempt = e.layer_type in VECTOR_TYPES or e.layer_type in (
                LayerType.TOK_EMBD, LayerType.LM_HEAD)
            out[e.name] = Axes.NONE if exempt else Axes.BOTH
    elif variant == "adamini_v2":
        # one moment per output neuron (FAN_IN sharing); embeddings keyed by
        # token row get one moment per token, which the (vocab, d_model)
        # orientation also expresses as FAN_IN; LayerNorms fully shared
        for e in owners:
            if e.layer_type in VECTOR_TYPES:
                out[e.name] = Axes.BOTH
            elif e.fan_in == 0:
                out[e.name] = Axes.BOTH
            else:
                out[e.name] = Axes.FAN_IN
    else:
        raise ValueError(f"unknown baseline variant {variant!r}")
    return RuleSet(out, provenance=f"baseline({variant})")


def stored_entries(entry: CensusEntry, k: Axes) -> int:
    if entry.fan_in == 0:  # vector block
        return 1 if k is Axes.BOTH else entry.fan_out
    if k is Axes.NONE:
        return entry.fan_out * entry.fan_in
    if k is Axes.FAN_OUT:
        return entry.fan_in
    if k is Axes.FAN_IN:
        return entry.fan_out
    return 1


def savings_fraction(census, rules: RuleSet) -> float:
    """1 - stored/full second-moment entries; tied blocks counted once."""
    owners = _owner_entries(census)
    names = {e.name for e in owners}
    for name in rules.axes:
        if name not in names:
            raise ValueError(f"rule for unknown block {name!r}")
    full = sum(e.n_entries for e in owners)
    stored = sum(stored_entries(e, rules.axes_for(e.name)) for e in owners)
    return 1.0 - stored / full


def savings_report(census, rules: RuleSet) -> dict:
    owners = _owner_entries(census)
    per_type = {}
    for e in owners:
        d = per_type.setdefault(e.layer_type.value, {"full": 0, "stored": 0})
        d["full"] += e.n_entries
        d["stored"] += stored_entries(e, rules.axes_for(e.name))
    full = sum(d["full"] for d in per_type.values())
    stored = sum(d["stored"] for d in per_type.values())
    return {
        "total_entries": full,
        "stored_entries": stored,
        "savings_fraction": 1.0 - stored / full,
        "per_layer_type": per_type,
    }


# ---- rules file format ---------------------------------------------------

_AXES_TOKENS = {a.value: a for a in Axes}


def serialize_rules(rules: RuleSet) -> str:
    return "".join(f"{name} {k.value}\n" for name, k in rules.axes.items())


def parse_rules(text: str) -> RuleSet:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'name axes'")
        name, token = parts
        if token not in _AXES_TOKENS:
            raise ValueError(f"line {lineno}: unknown axes token {token!r}")
        if name in out:
            raise ValueError(f"line {lineno}: duplicate block {name!r}")
        out[name] = _AXES_TOKENS[token]
    return RuleSet(out, provenance="manual")
