"""Training loop and experiment protocols.

Every experiment is a deterministic function of its config: fixed seeds flow
into model init, data sampling, and batch order, so reruns produce identical
artifacts.  Divergent runs are reported with a flag instead of crashing so
sweeps can draw the unstable arm of a loss-vs-lr curve.
"""

import csv
import io
import itertools
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .data import ZipfStream, next_token_batches, zipf_token_stream
from .models import Model, ModelSpec, build_model, census_entries
from .optim import DivergenceError, Hyper, Schedule, SharedMomentAdam, clip_grad_norm, lr_at
from .rules import RuleSet, baseline_rules, depth_average, derive_rules, savings_fraction
from .snr import SnrTrajectory, averaged_snr, record_snr, snr_grid
from .tensors import Axes

DIVERGENCE_FACTOR = 10.0  # loss above this multiple of the initial loss flags the run
EVAL_FRACTION = 0.1  # tail of the token stream held out for test loss


@dataclass
class TrainConfig:
    model: ModelSpec
    data: ZipfStream
    hyper: Hyper
    schedule: Schedule
    rules: Optional[RuleSet] = None  # None means the plain-Adam baseline
    seed: int = 0
    batch: int = 16
    snr_eps: float = 1e-12

    def resolved_rules(self, model: Model) -> RuleSet:
        if self.rules is None:
            return baseline_rules(census_entries(model), "adam")
        return self.rules


@dataclass
class TrainReport:
    steps: List[int]
    losses: List[float]
    lrs: List[float]
    final_loss: float
    best_loss: float
    eval_loss: float
    snr: SnrTrajectory
    savings: float
    wall_time: float
    diverged: bool


def _split_stream(stream):
    cut = int(len(stream) * (1.0 - EVAL_FRACTION))
    return stream[:cut], stream[cut:]


def _eval_loss(model, held_out, context, batch, max_batches: int = 8):
    it = next_token_batches(held_out, context, batch, seed=10_000)
    losses = []
    for _ in range(max_batches):
        x, y = next(it)
        losses.append(model.loss_only(x, y))
    return float(np.mean(losses))


def train(cfg: TrainConfig) -> TrainReport:
    t0 = time.perf_counter()
    model = build_model(cfg.model, cfg.seed)
    rules = cfg.resolved_rules(model)
    stream = zipf_token_stream(cfg.data)
    train_stream, held_out = _split_stream(stream)
    batches = next_token_batches(train_stream, cfg.model.context, cfg.batch, cfg.seed)
    opt = SharedMomentAdam(model.blocks, rules, cfg.hyper)
    grid = set(snr_grid(cfg.schedule.total))
    traj = SnrTrajectory()
    owners = [b for b in model.blocks if not b.is_tied_alias]

    steps, losses, lrs = [], [], []
    initial_loss = None
    diverged = False
    for t in range(1, cfg.schedule.total + 1):
        x, y = next(batches)
        try:
            loss, grads = model.loss_and_grads(x, y)
        except FloatingPointError:
            diverged = True
            break
        if initial_loss is None:
            initial_loss = loss
        lr = lr_at(cfg.schedule, t)
        steps.append(t)
        losses.append(loss)
        lrs.append(lr)
        if not np.isfinite(loss) or loss > DIVERGENCE_FACTOR * initial_loss:
            diverged = True
            break
        try:
            opt.step(grads, lr)
        except DivergenceError:
            diverged = True
            break
        if t in grid:
            record_snr(traj, t, owners, opt.state, cfg.snr_eps)

    finite = [l for l in losses if np.isfinite(l)]
    final_loss = losses[-1] if losses else float("nan")
    best_loss = min(finite) if finite else float("nan")
    eval_loss = float("nan") if diverged else _eval_loss(
        model, held_out, cfg.model.context, cfg.batch)
    savings = savings_fraction(census_entries(model), rules)
    return TrainReport(steps, losses, lrs, final_loss, best_loss, eval_loss,
                       traj, savings, time.perf_counter() - t0, diverged)


def losses_csv(report: TrainReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "lr"])
    for t, loss, lr in zip(report.steps, report.losses, report.lrs):
        w.writerow([t, np.format_float_scientific(loss, unique=True),
                    np.format_float_scientific(lr, unique=True)])
    return buf.getvalue()


# ---- vocabulary-tail experiment -------------------------------------------

# sharing choices for the (vocab, d_model)-oriented embedding and head blocks:
# the token dimension is fan_out, the embedding dimension is fan_in
VOCAB_EXP_CHOICES = (Axes.NONE, Axes.FAN_OUT, Axes.FAN_IN, Axes.BOTH)


@dataclass
class VocabCell:
    vocab: int
    k_embd: Axes
    k_head: Axes
    eval_loss: float
    delta: float
    diverged: bool


@dataclass
class VocabResult:
    cells: List[VocabCell]
    token_dim_snr: dict  # vocab -> averaged fan_out SNR of embed/head


def vocab_experiment(base: TrainConfig, vocabs, choices=VOCAB_EXP_CHOICES) -> VocabResult:
    """Train an untied linear token model over a grid of sharing choices.

    Reports the held-out loss gap of each (k_embd, k_head) cell against the
    uncompressed baseline, plus the averaged token-dimension SNR per vocab.
    """
    if base.model.kind != "LinearTokenModel" or base.model.weight_tying:
        raise ValueError("vocab experiment requires an untied LinearTokenModel")
    cells = []
    tok_snr = {}
    for vocab in vocabs:
        model_spec = _with(base.model, vocab=vocab)
        data_spec = _with(base.data, vocab=vocab)
        base_cfg = _with(base, model=model_spec, data=data_spec, rules=None)
        ref = train(base_cfg)
        avg = averaged_snr(ref.snr)
        tok_snr[vocab] = 0.5 * (avg[("embed", Axes.FAN_OUT)] + avg[("head", Axes.FAN_OUT)])
        for k_embd, k_head in itertools.product(choices, choices):
            if (k_embd, k_head) == (Axes.NONE, Axes.NONE):
                rep, delta = ref, 0.0
            else:
                rules = RuleSet({"embed": k_embd, "head": k_head}, provenance="manual")
                rep = train(_with(base_cfg, rules=rules))
                delta = rep.eval_loss - ref.eval_loss
            cells.append(VocabCell(vocab, k_embd, k_head, rep.eval_loss, delta, rep.diverged))
    return VocabResult(cells, tok_snr)


# ---- learning-rate sweeps --------------------------------------------------


@dataclass
class SweepRow:
    optimizer: str
    lr: float
    loss: float
    diverged: bool


def lr_sweep(base: TrainConfig, lrs, rule_sources) -> List[SweepRow]:
    """Best loss per (optimizer, lr); rule_sources: list of (label, RuleSet|None)."""
    if len(lrs) < 2:
        raise ValueError("need at least two learning rates")
    rows = []
    for label, rules in rule_sources:
        for lr in lrs:
            cfg = _with(base, rules=rules,
                        schedule=_with(base.schedule, peak_lr=lr))
            rep = train(cfg)
            loss = rep.eval_loss if np.isfinite(rep.eval_loss) else rep.best_loss
            rows.append(SweepRow(label, lr, loss, rep.diverged))
    return rows


def derive_rules_from_run(base: TrainConfig, lr: float, cutoff: float = 1.0,
                          mode: str = "per_layer", include_both: bool = True):
    """Train plain Adam at lr and turn its averaged SNR into rules."""
    cfg = _with(base, rules=None, schedule=_with(base.schedule, peak_lr=lr))
    rep = train(cfg)
    model = build_model(cfg.model, cfg.seed)
    census = census_entries(model)
    avg = averaged_snr(rep.snr)
    return derive_rules(avg, census, cutoff=cutoff, mode=mode,
                        include_both=include_both), rep


def adam_vs_slimadam(base: TrainConfig, lrs, cutoff: float = 1.0):
    """Adam sweep, rule derivation at optimal/10, then the SlimAdam sweep."""
    adam_rows = lr_sweep(base, lrs, [("adam", None)])
    ok = [r for r in adam_rows if not r.diverged]
    if not ok:
        raise DivergenceError("all")
    optimal = min(ok, key=lambda r: r.loss).lr
    rules, _ = derive_rules_from_run(base, optimal / 10.0, cutoff=cutoff)
    slim_rows = lr_sweep(base, lrs, [("slimadam", rules)])
    return adam_rows + slim_rows, rules, optimal


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["optimizer", "lr", "loss", "diverged"])
    for r in sorted(rows, key=lambda r: (r.optimizer, r.lr)):
        w.writerow([r.optimizer, np.format_float_scientific(r.lr, unique=True),
                    np.format_float_scientific(r.loss, unique=True), int(r.diverged)])
    return buf.getvalue()


# ---- SNR vs learning rate ---------------------------------------------------


@dataclass
class SnrVsLrResult:
    # (layer_type, lr) -> depth-averaged SNR at the best sharing dimension
    snr_table: dict
    # (lr, cutoff) -> savings fraction of rules derived at that lr
    savings_surface: dict
    divergent_lrs: list


def snr_vs_lr(base: TrainConfig, lrs, cutoffs=(0.5, 1.0, 2.0, 4.0)) -> SnrVsLrResult:
    if len(lrs) < 2:
        raise ValueError("need at least two learning rates")
    model = build_model(base.model, base.seed)
    census = census_entries(model)
    snr_table, surface, divergent = {}, {}, []
    for lr in lrs:
        cfg = _with(base, rules=None, schedule=_with(base.schedule, peak_lr=lr))
        rep = train(cfg)
        if rep.diverged:
            divergent.append(lr)
            continue
        avg = averaged_snr(rep.snr)
        pooled = depth_average(avg, census)
        # tied aliases carry no SNR samples of their own; vectors only record
        # BOTH.  Keep the matrix layer types with a full candidate set.
        for lt in sorted({lt for lt, _ in pooled}, key=lambda t: t.value):
            candidates = [pooled[(lt, k)] for k in
                          (Axes.BOTH, Axes.FAN_OUT, Axes.FAN_IN) if (lt, k) in pooled]
            if len(candidates) == 3:
                snr_table[(lt, lr)] = max(candidates)
        for cutoff in cutoffs:
            rules = derive_rules(avg, census, cutoff=cutoff)
            surface[(lr, cutoff)] = savings_fraction(census, rules)
    return SnrVsLrResult(snr_table, surface, divergent)


def _with(obj, **changes):
    from dataclasses import replace

    return replace(obj, **changes)
