"""Command-line entry points for single runs and the experiment protocols.

Configs are flat JSON documents; every key has a default so a config only
states what it overrides.  See README for the full key list.  Exit codes:
0 success, 2 config error, 3 every run in the experiment diverged.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .data import ZipfStream
from .harness import (TrainConfig, adam_vs_slimadam, derive_rules_from_run,
                      losses_csv, snr_vs_lr, sweep_csv, train, vocab_experiment)
from .models import ModelSpec, build_model, census_entries
from .optim import DivergenceError, Hyper, Schedule
from .rules import (RuleSet, baseline_rules, canonical_rules, parse_rules,
                    savings_report, serialize_rules)
from .snr import write_snr_csv
from .tensors import Axes

DEFAULTS = {
    # model
    "kind": "MiniTransformer", "vocab": 256, "d_model": 64, "n_layers": 2,
    "n_heads": 4, "context": 32, "weight_tying": True, "init": "mitchell",
    "init_std": 0.02,
    # data
    "alpha": 1.0, "data_length": 200_000,
    # optimizer
    "lr": 1e-3, "beta1": 0.9, "beta2": 0.95, "eps": 1e-8,
    "weight_decay": 0.1, "clip_norm": 1.0,
    # schedule / run
    "steps": 2000, "warmup": 200, "batch": 16, "seed": 0,
    # rules and derivation
    "rules": "adam", "cutoff": 1.0, "mode": "per_layer", "include_both": True,
    # sweeps
    "lrs": [1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
    "vocabs": [64, 256, 1024, 4096],
    "cutoffs": [0.5, 1.0, 2.0, 4.0],
    # output
    "out": "out",
}

BASELINE_NAMES = ("adam", "adalayer", "adalayer_ln_tl", "adamini_v2")


class ConfigError(Exception):
    pass


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for key in ("lr", "seed", "cutoff", "rules", "out"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = val
    return cfg


def build_train_config(cfg: dict, rules) -> TrainConfig:
    model = ModelSpec(
        kind=cfg["kind"], vocab=cfg["vocab"], d_model=cfg["d_model"],
        n_layers=cfg["n_layers"], n_heads=cfg["n_heads"], context=cfg["context"],
        weight_tying=cfg["weight_tying"], init=cfg["init"], init_std=cfg["init_std"],
    )
    try:
        model.validate()
        schedule = Schedule(peak_lr=cfg["lr"], warmup=cfg["warmup"], total=cfg["steps"])
    except ValueError as e:
        raise ConfigError(str(e))
    return TrainConfig(
        model=model,
        data=ZipfStream(cfg["vocab"], cfg["alpha"], cfg["data_length"], cfg["seed"]),
        hyper=Hyper(lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"],
                    eps=cfg["eps"], weight_decay=cfg["weight_decay"],
                    clip_norm=cfg["clip_norm"]),
        schedule=schedule,
        rules=rules,
        seed=cfg["seed"],
        batch=cfg["batch"],
    )


def resolve_rules(cfg: dict):
    """Rules key: a baseline name, "canonical", or a rules-file path."""
    spec = cfg["rules"]
    if spec == "adam":
        return None
    model = build_model(build_train_config(cfg, None).model, cfg["seed"])
    census = census_entries(model)
    if spec in BASELINE_NAMES:
        return baseline_rules(census, spec)
    if spec == "canonical":
        return canonical_rules(census)
    try:
        with open(spec) as f:
            return parse_rules(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read rules {spec!r}: {e}")
    except ValueError as e:
        raise ConfigError(f"bad rules file {spec!r}: {e}")


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as f:
        f.write(text)


def _write_run_json(out_dir, cfg):
    _write(out_dir, "run.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---- subcommands -----------------------------------------------------------


def cmd_train(cfg):
    rules = resolve_rules(cfg)
    tc = build_train_config(cfg, rules)
    report = train(tc)
    out = cfg["out"]
    _write_run_json(out, cfg)
    _write(out, "losses.csv", losses_csv(report))
    _write(out, "snr.csv", write_snr_csv(report.snr))
    model = build_model(tc.model, tc.seed)
    _write(out, "rules.txt", serialize_rules(tc.resolved_rules(model)))
    _write(out, "savings.json", json.dumps(
        savings_report(census_entries(model), tc.resolved_rules(model)),
        indent=2, sort_keys=True) + "\n")
    print(f"final loss {report.final_loss:.6f}  eval loss {report.eval_loss:.6f}"
          f"  savings {report.savings:.4f}  diverged {report.diverged}")
    return 3 if report.diverged else 0


def cmd_vocab_exp(cfg):
    cfg = dict(cfg, kind="LinearTokenModel", weight_tying=False)
    base = build_train_config(cfg, None)
    result = vocab_experiment(base, cfg["vocabs"])
    out = cfg["out"]
    _write_run_json(out, cfg)
    lines = ["vocab,k_embd,k_head,eval_loss,delta,diverged"]
    for c in result.cells:
        lines.append(f"{c.vocab},{c.k_embd.value},{c.k_head.value},"
                     f"{np.format_float_scientific(c.eval_loss, unique=True)},"
                     f"{np.format_float_scientific(c.delta, unique=True)},{int(c.diverged)}")
    _write(out, "vocab_exp.csv", "\n".join(lines) + "\n")
    snr_lines = ["vocab,token_dim_snr"]
    for v in sorted(result.token_dim_snr):
        snr_lines.append(f"{v},{np.format_float_scientific(result.token_dim_snr[v], unique=True)}")
    _write(out, "vocab_snr.csv", "\n".join(snr_lines) + "\n")
    if all(c.diverged for c in result.cells):
        return 3
    return 0


def cmd_lr_sweep(cfg):
    base = build_train_config(cfg, None)
    try:
        rows, rules, optimal = adam_vs_slimadam(base, cfg["lrs"], cutoff=cfg["cutoff"])
    except DivergenceError:
        return 3
    out = cfg["out"]
    _write_run_json(out, cfg)
    _write(out, "sweep.csv", sweep_csv(rows))
    _write(out, "rules.txt", serialize_rules(rules))
    print(f"adam optimal lr {optimal:g}; rules derived at {optimal / 10:g}")
    return 0


def cmd_snr_vs_lr(cfg):
    base = build_train_config(cfg, None)
    result = snr_vs_lr(base, cfg["lrs"], tuple(cfg["cutoffs"]))
    out = cfg["out"]
    _write_run_json(out, cfg)
    lines = ["layer_type,lr,snr"]
    for (lt, lr), v in sorted(result.snr_table.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        lines.append(f"{lt.value},{np.format_float_scientific(lr, unique=True)},"
                     f"{np.format_float_scientific(v, unique=True)}")
    _write(out, "snr_vs_lr.csv", "\n".join(lines) + "\n")
    surf = ["lr,cutoff,savings"]
    for (lr, cutoff), v in sorted(result.savings_surface.items()):
        surf.append(f"{np.format_float_scientific(lr, unique=True)},{cutoff},"
                    f"{np.format_float_scientific(v, unique=True)}")
    _write(out, "savings_surface.csv", "\n".join(surf) + "\n")
    if len(result.divergent_lrs) == len(cfg["lrs"]):
        return 3
    return 0


def cmd_derive_rules(cfg):
    base = build_train_config(cfg, None)
    rules, report = derive_rules_from_run(
        base, cfg["lr"], cutoff=cfg["cutoff"], mode=cfg["mode"],
        include_both=cfg["include_both"])
    out = cfg["out"]
    _write_run_json(out, cfg)
    _write(out, "rules.txt", serialize_rules(rules))
    _write(out, "snr.csv", write_snr_csv(report.snr))
    return 3 if report.diverged else 0


def cmd_savings(cfg):
    rules = resolve_rules(cfg)
    model = build_model(build_train_config(cfg, None).model, cfg["seed"])
    census = census_entries(model)
    if rules is None:
        rules = baseline_rules(census, "adam")
    out = cfg["out"]
    _write_run_json(out, cfg)
    report = savings_report(census, rules)
    _write(out, "savings.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"savings fraction {report['savings_fraction']:.4f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "vocab-exp": cmd_vocab_exp,
    "lr-sweep": cmd_lr_sweep,
    "snr-vs-lr": cmd_snr_vs_lr,
    "derive-rules": cmd_derive_rules,
    "savings": cmd_savings,
}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="slimadam")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--cutoff", type=float, default=None)
        p.add_argument("--rules", default=None)
        p.add_argument("--out", default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
