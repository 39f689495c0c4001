"""Signal-to-noise diagnostics of second-moment tensors along a trajectory.

For a nonnegative moment tensor V and sharing axes k, the per-slice ratio is
mean(V over k)^2 / var(V over k); snr_k averages that ratio over the
remaining axes.  High values mean the entries along k are well described by
their mean, i.e. the moment is compressible along k.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .models import LayerType
from .tensors import Axes, REDUCING_AXES, mean_along, var_along


def snr_k(v: np.ndarray, k: Axes, eps_snr: float = 1e-12) -> float:
    """Mean-over-remaining-axes of mean(V,k)^2 / (var(V,k) + eps_snr)."""
    if k is Axes.NONE:
        raise ValueError("SNR is undefined without a reduction axis")
    if eps_snr < 0:
        raise ValueError("eps_snr must be nonnegative")
    mu = mean_along(v, k)
    var = var_along(v, k)
    ratio = mu * mu / (var + eps_snr)
    return float(np.mean(ratio))


@dataclass
class SnrSample:
    step: int
    block: str
    layer_type: LayerType
    depth: int
    k: Axes
    snr: float


@dataclass
class SnrTrajectory:
    samples: List[SnrSample] = field(default_factory=list)
    _seen: set = field(default_factory=set)

    def steps(self):
        return sorted({s.step for s in self.samples})


def snr_grid(total: int) -> list:
    """Measurement steps: dense (every total/100) until total/10, then sparse."""
    dense = max(1, total // 100)
    sparse = max(1, total // 10)
    steps = list(range(dense, sparse + 1, dense))
    steps += list(range(sparse + sparse, total + 1, sparse))
    return steps


def record_snr(traj: SnrTrajectory, t: int, blocks, state, eps_snr: float = 1e-12):
    """Append SNR samples at step t for every block's second moment.

    blocks: ParamBlocks (tied aliases skipped); state: name -> object with a
    .v array at that block's stored shape.  Matrix moments are measured at
    all three reductions; vector moments only at BOTH.
    """
    for b in blocks:
        if b.is_tied_alias:
            continue
        v = state[b.name].v
        ks = REDUCING_AXES if v.ndim == 2 else (Axes.BOTH,)
        for k in ks:
            key = (t, b.name, k)
            if key in traj._seen:
                raise ValueError(f"duplicate SNR sample {key}")
            traj._seen.add(key)
            traj.samples.append(
                SnrSample(t, b.name, b.layer_type, b.depth, k, snr_k(v, k, eps_snr))
            )


def averaged_snr(traj: SnrTrajectory) -> dict:
    """Time-average per (block, k) over the measurement grid."""
    if not traj.samples:
        raise ValueError("empty SNR trajectory")
    sums, counts = {}, {}
    for s in traj.samples:
        key = (s.block, s.k)
        sums[key] = sums.get(key, 0.0) + s.snr
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def write_snr_csv(traj: SnrTrajectory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "block", "layer_type", "depth", "k", "snr"])
    ordered = sorted(traj.samples, key=lambda s: (s.step, s.block, s.k.value))
    for s in ordered:
        w.writerow([s.step, s.block, s.layer_type.value, s.depth, s.k.value,
                    np.format_float_scientific(s.snr, unique=True)])
    return buf.getvalue()


def read_snr_csv(text: str) -> SnrTrajectory:
    traj = SnrTrajectory()
    rows = csv.reader(io.StringIO(text))
    header = next(rows)
    if header != ["step", "block", "layer_type", "depth", "k", "snr"]:
        raise ValueError("unexpected snr.csv header")
    for row in rows:
        step, block, lt, depth, k, snr = row
        sample = SnrSample(int(step), block, LayerType(lt), int(depth), Axes(k), float(snr))
        traj._seen.add((sample.step, sample.block, sample.k))
        traj.samples.append(sample)
    return traj
