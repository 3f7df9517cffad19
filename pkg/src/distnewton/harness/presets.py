"""Canned experiments reproducing the three comparison studies on the 30-node ring.

Each preset is a base INI text plus a list of per-run overrides.  All
runs of a preset share the instance seed, so the traces are directly
comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, parse_config
from .experiment import EXIT_OK, Outcome, build_problem, execute, scan, write_run, write_summary

# Seed at which the three Algorithm B regimes (convergence, transient growth,
# guard-triggering divergence) all appear; the behaviour at the middle
# target is seed-sensitive.
PRESET_SEED = 6

BASE = """\
[topology]
kind = ring
nodes = 30          # network size
self_weight = 0.7   # weight a node keeps
prev_weight = 0.15  # weight on node i-1
skip_weight = 0.15  # weight on node i+2

[objective]
kind = localization
x_true = 0, 0       # target position
noise_var = 0.01    # variance of the squared-range noise
seed = {seed}
init_scale = 1.0    # initial points ~ N(x_true, I)

[run]
variant = proposed
stepsize = scan     # step minimizing the deflated local rate
beta = 0.1          # Hessian eigenvalue floor is 1 / beta
rounds = {rounds}
threshold = 1e12    # divergence guard on ||x||

[scan]
lo = 1e-4
hi = 0.02
points = 200
"""


@dataclass(frozen=True)
class PresetRun:
    name: str
    overrides: dict


PRESETS = {
    "fig1": [
        PresetRun("proposed", {}),
        PresetRun("alga", {"variant": "alga"}),
        PresetRun("vzcps", {"variant": "vzcps"}),
    ],
    "fig2": [
        PresetRun(f"{v}_x{t}", {"variant": v, "x_true": (float(t), float(t))})
        for t in (0, 300, 1000) for v in ("algb", "proposed")
    ],
    "fig3": [
        PresetRun("adaptive", {"stepsize": "adaptive"}),
        PresetRun("fixed", {}),
    ],
}

DEFAULT_ROUNDS = {"fig1": 5000, "fig2": 5000, "fig3": 5000}


def preset_config(name: str, seed: Optional[int] = None, rounds: Optional[int] = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = BASE.format(seed=PRESET_SEED if seed is None else seed,
                       rounds=DEFAULT_ROUNDS[name] if rounds is None else rounds)
    return parse_config(text, source=f"preset {name}")


def preset_text(name: str, seed: Optional[int] = None, rounds: Optional[int] = None) -> str:
    preset_config(name, seed, rounds)
    return BASE.format(seed=PRESET_SEED if seed is None else seed,
                       rounds=DEFAULT_ROUNDS[name] if rounds is None else rounds)


def run_preset(name: str, out, seed: Optional[int] = None, rounds: Optional[int] = None) -> Outcome:
    """Run every member of a preset and write its CSVs under ``out``.

    Divergence of individual runs is part of what the presets show, so it
    is recorded in ``summary.csv`` and does not change the exit code.
    """
    base = preset_config(name, seed, rounds)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(preset_text(name, seed, rounds))
    files = [out / "config.ini"]
    records = []
    problems = {}
    scans = {}
    for member in PRESETS[name]:
        cfg = base.replace(**member.overrides)
        key = tuple(cfg.x_true)
        if key not in problems:
            problems[key] = build_problem(cfg)
            scans[key] = scan(cfg, problems[key])
        rec = execute(cfg, problems[key], member.name, scans[key].alpha_opt)
        files += write_run(out, rec, prefix=f"{member.name}_")
        records.append(rec)
    for key, sc in scans.items():
        suffix = "" if len(scans) == 1 else "_x" + "_".join(f"{v:g}" for v in key)
        files.append(out / f"scan{suffix}.csv")
        sc.to_csv(files[-1])
    if name == "fig3":
        files.append(out / "alpha_series.csv")
        _write_alpha_series(files[-1], records[0].result.trace)
    files.append(out / "summary.csv")
    write_summary(files[-1], records)
    return Outcome(EXIT_OK, files, records, next(iter(scans.values())))


def _write_alpha_series(path, trace) -> None:
    al = trace.alpha
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "i", "alpha"))
        for r, k in enumerate(trace.ks):
            for i in range(al.shape[1]):
                w.writerow((k, i, repr(float(al[r, i]))))
