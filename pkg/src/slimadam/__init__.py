"""Second-moment compression lab: shared-moment Adam family, SNR diagnostics,
rule derivation for SlimAdam, and a desk-scale training harness."""

from .tensors import Axes, ShapeError, broadcast_along, mean_along, var_along
from .autodiff import Tape, grad_check
from .models import (LayerType, Model, ModelSpec, ParamBlock, build_model,
                     census_entries, forward_loss, parse_census)
from .optim import (DivergenceError, Hyper, ReferenceAdam, Schedule,
                    SharedMomentAdam, clip_grad_norm, lr_at)
from .snr import (SnrTrajectory, averaged_snr, read_snr_csv, record_snr,
                  snr_grid, snr_k, write_snr_csv)
from .rules import (RuleSet, baseline_rules, canonical_rules, depth_average,
                    derive_rules, parse_rules, savings_fraction,
                    savings_report, serialize_rules)
from .data import ZipfStream, next_token_batches, zipf_probs, zipf_token_stream
from .harness import (TrainConfig, TrainReport, adam_vs_slimadam, lr_sweep,
                      snr_vs_lr, train, vocab_experiment)

__all__ = [name for name in dir() if not name.startswith("_")]
