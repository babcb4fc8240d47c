"""Experiment configuration: JSON documents merged over full defaults.

An empty document runs the default experiment. ``--fast`` swaps in the
reduced budgets listed under ``"fast"`` for each experiment.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import InvalidArgument

EXPERIMENTS = ("rossler-recovery", "circuit-noisy", "ngnmm-sparsity", "landscape", "shadow",
               "lyapunov-cdf", "plv-analysis")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "rossler-recovery": {
        "system": {"a": 0.2, "b": 0.22, "c": 14.0, "x0": [1.0, 1.0, 1.0], "t_end": 100.0, "dt_obs": 0.1},
        "solver": {"abstol": 1e-12, "reltol": 1e-12, "substeps": 4},
        "training": {"epochs": 20000, "gain": [0.0, 0.25, 0.0], "learning_rate": 2e-2,
                     "lr_final": 2e-3, "weight_decay": 1e-4, "net_seed": 1, "jitter": 1e-2,
                     "normalize_inputs": True, "compare_without_pem": True},
        "symreg": {"degree": 2, "threshold": 0.1, "refine": True,
                   "refine_gains": [0.25, 0.1, 0.05, 0.02]},
        "validation": {"extension": 0.5},
        "fast": {"training": {"epochs": 2000}},
    },
    "circuit-noisy": {
        "system": {"a": 1.25, "b": 0.5, "c": 1.0, "x0": [0.1, 0.0, 0.0], "t_end": 100.0, "dt_obs": 0.1,
                   "noise_multiplier": 5.0, "noisy_channel": "x", "background_noise": 0.01,
                   "noise_seed": 0, "true_initial_state": True},
        "solver": {"abstol": 1e-12, "reltol": 1e-12, "substeps": 4},
        "training": {"epochs": 20000, "gain": [0.0, 0.5, 0.0], "learning_rate": 1e-2,
                     "weight_decay": 1e-4, "net_seed": 1, "jitter": 1e-2, "normalize_inputs": False},
        "symreg": {"degree": 2, "threshold": 0.5, "refine": True, "refine_gains": [0.5],
                   "baseline_thresholds": [0.1, 0.2, 0.3, 0.4, 0.5],
                   "savgol_window": 11, "savgol_order": 3},
        "fast": {"training": {"epochs": 2000}},
    },
    "ngnmm-sparsity": {
        "system": {"N": 1000, "p_c_grid": [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
                   "duration": 300.0, "dt": 1e-3, "dt_obs": 0.5, "transient": 20.0,
                   "x0": [0.1, 0.0, 0.0, 0.0], "adjacency_seed": 0},
        "training": {"epochs": 10000, "gain": [0.25, 0.25, 0.0, 0.0], "learning_rate": 1e-2,
                     "weight_decay": 1e-4, "net_seed": 1, "jitter": 1e-2, "normalize_inputs": True},
        "symreg": {"degree": 2, "threshold": 0.1},
        "analysis": {"t_end": 3000.0, "transient": 1000.0, "dt": 0.01, "record_dt": 0.05},
        "fast": {"system": {"N": 200, "p_c_grid": [0.05, 0.3, 1.0]}, "training": {"epochs": 300},
                 "analysis": {"t_end": 1500.0, "transient": 500.0}},
    },
    "landscape": {
        "system": {"a": 0.2, "b": 0.22, "c": 14.0, "x0": [1.0, 1.0, 1.0], "t_end": 100.0, "dt_obs": 0.025},
        "solver": {"abstol": 1e-12, "reltol": 1e-12, "substeps": 4},
        "sweep": {"gains": [0.0, 0.1, 0.25, 0.5], "gain_channel": 1,
                  "a": [0.1, 0.3, 0.002], "b": [0.1, 0.34, 0.002], "c": [10.0, 18.0, 0.04],
                  "plane": {"a": [0.15, 0.25, 0.005], "b": [0.17, 0.27, 0.005]}},
        "fast": {"sweep": {"plane": {"a": [0.15, 0.25, 0.01], "b": [0.17, 0.27, 0.01]}}},
    },
    "shadow": {
        "system": {"a": 0.2, "b": 0.22, "c": 14.0, "x0": [1.0, 1.0, 1.0], "t_end": 200.0, "dt_obs": 0.1},
        "solver": {"abstol": 1e-12, "reltol": 1e-12, "substeps": 4},
        "sweep": {"gains": [0.0, 0.05, 0.1, 0.18, 0.25], "delta": 1e-9,
                  "deltas": [1e-12, 1e-9, 1e-6, 1e-3, 1e-1], "delta_gain": 0.25},
        "fast": {},
    },
    "lyapunov-cdf": {
        "system": {"a": 0.2, "b": 0.22, "c": 14.0, "x0": [1.0, 1.0, 1.0]},
        "lyapunov": {"t_total": 1000.0, "renorm_interval": 1.0, "d0": 1e-9, "dt": 0.01,
                     "chaos_threshold": 0.01},
        "sweep": {"a": [0.1, 0.3, 7], "b": [0.1, 0.3, 7], "c": [10.0, 18.0, 7]},
        "fast": {"lyapunov": {"t_total": 500.0}, "sweep": {"a": [0.1, 0.3, 3], "b": [0.1, 0.3, 3],
                                                           "c": [10.0, 18.0, 3]}},
    },
    "plv-analysis": {
        "input": {"recordings": [], "edge_fraction": 0.05},
        "system": {"N": 1000, "p_c": [1.0, 0.3, 0.05], "duration": 200.0, "dt": 1e-3,
                   "adjacency_seed": 0, "electrodes": 4, "window": 0.1, "transient": 20.0},
        "fast": {"system": {"N": 200, "duration": 100.0}},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    fast: bool = False
    out_dir: str = "runs"
    sections: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidArgument(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")

    def __getitem__(self, key):
        return self.sections[key]

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "fast": self.fast,
                "out_dir": self.out_dir, **copy.deepcopy(self.sections)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict, experiment: Optional[str] = None, fast: Optional[bool] = None,
                  seed: Optional[int] = None, out_dir: Optional[str] = None) -> "ExperimentConfig":
        doc = dict(doc or {})
        name = experiment or doc.pop("experiment", None)
        doc.pop("experiment", None)
        if name is None:
            raise InvalidArgument("config names no experiment")
        if name not in DEFAULTS:
            raise InvalidArgument(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        is_fast = bool(doc.pop("fast", False)) if fast is None else bool(fast) or bool(doc.pop("fast", False))
        doc.pop("fast", None)
        s = int(doc.pop("seed", 0)) if seed is None else int(seed)
        doc.pop("seed", None)
        od = doc.pop("out_dir", "runs") if out_dir is None else out_dir
        doc.pop("out_dir", None)
        defaults = copy.deepcopy(DEFAULTS[name])
        fast_over = defaults.pop("fast", {})
        merged = deep_merge(defaults, fast_over) if is_fast else defaults
        merged = deep_merge(merged, doc)
        return cls(name, s, is_fast, str(od), merged)


def load_config(path, experiment: Optional[str] = None, **kw) -> ExperimentConfig:
    """Read a JSON config (missing file is an error; empty file means all defaults)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text().strip()
    doc = json.loads(text) if text else {}
    if not isinstance(doc, dict):
        raise InvalidArgument("config must be a JSON object")
    return ExperimentConfig.from_dict(doc, experiment, **kw)
