"""Probe-slippage statistics over repeated-trial 6-DOF pose recordings.

Each trial is a time series of holder poses (translation in millimeters,
rotation in degrees). Slippage per trial and axis is the maximum absolute
deviation from that trial's first sample; the report aggregates mean and
population standard deviation of those maxima across trials. The baseline
is the first sample because the recordings carry no separate reference
pose, and the std is the population form to match small-trial-count
reporting; both choices are echoed in the report itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import EmptyTrial

AXES = ("x", "y", "z", "roll", "yaw", "pitch")
TRANSLATIONAL = ("x", "y", "z")
AXIS_UNITS = {a: ("mm" if a in TRANSLATIONAL else "deg") for a in AXES}


@dataclass(frozen=True)
class PoseSample6DOF:
    t_us: int
    x: float
    y: float
    z: float
    roll: float
    yaw: float
    pitch: float

    def axis(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class AxisStat:
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class SlippageReport:
    axes: Dict[str, AxisStat]
    trial_count: int
    per_trial_max: Dict[str, List[float]]

    def to_dict(self) -> dict:
        return {
            "trial_count": self.trial_count,
            "baseline": "first sample of each trial",
            "std": "population",
            "axes": {
                a: {**self.axes[a].to_dict(), "unit": AXIS_UNITS[a]}
                for a in AXES
            },
        }


def analyze_trials(trials: Sequence[Sequence[PoseSample6DOF]]) -> SlippageReport:
    """Max |deviation from first sample| per trial/axis, aggregated across trials."""
    if not trials:
        raise EmptyTrial("no trials")
    maxima = {a: [] for a in AXES}
    for i, trial in enumerate(trials):
        if len(trial) < 2:
            raise EmptyTrial(f"trial {i} has {len(trial)} samples (need >= 2)")
        ts = [s.t_us for s in trial]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"trial {i}: t_us not strictly increasing")
        base = trial[0]
        for a in AXES:
            b = base.axis(a)
            maxima[a].append(max(abs(s.axis(a) - b) for s in trial))
    axes = {
        a: AxisStat(mean=float(np.mean(maxima[a])), std=float(np.std(maxima[a])))
        for a in AXES
    }
    return SlippageReport(axes=axes, trial_count=len(trials), per_trial_max=maxima)


# ---------------------------------------------------------------------------
# CSV input / JSON report
# ---------------------------------------------------------------------------

def read_trials_csv(path) -> Dict[Optional[str], List[List[PoseSample6DOF]]]:
    """Parse `trial,t_us,x,y,z,roll,yaw,pitch[,condition]` rows into trials.

    Returns trials grouped by condition; the key is None when the CSV has
    no condition column. Rows may arrive in any order; samples are sorted
    by t_us within each trial.
    """
    groups: Dict[Optional[str], Dict[str, List[PoseSample6DOF]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = {"trial", "t_us", *AXES} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        has_condition = "condition" in reader.fieldnames
        for row in reader:
            cond = row["condition"].strip() if has_condition else None
            sample = PoseSample6DOF(
                t_us=int(row["t_us"]),
                **{a: float(row[a]) for a in AXES})
            groups.setdefault(cond, {}).setdefault(row["trial"], []).append(sample)
    out: Dict[Optional[str], List[List[PoseSample6DOF]]] = {}
    for cond, by_trial in groups.items():
        out[cond] = [sorted(by_trial[k], key=lambda s: s.t_us)
                     for k in sorted(by_trial)]
    return out


def analyze_csv(path) -> dict:
    """Full report dict for a trials CSV; per-condition when the column exists."""
    grouped = read_trials_csv(path)
    if set(grouped) == {None}:
        return analyze_trials(grouped[None]).to_dict()
    return {
        "conditions": {
            cond: analyze_trials(trials).to_dict()
            for cond, trials in sorted(grouped.items())
        }
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n")
