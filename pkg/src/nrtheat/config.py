"""Run configuration: defaults, schema validation and typed accessors.

A configuration is a JSON object validated against the schema shipped in
``nrtheat/data/run_config.schema.json``. Missing keys take the standard
values (unit-disk conductor, cavity disk of radius 0.25 at (0.3, 0),
``T = 1``, 64 boundary nodes, 32 time steps).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .forward import MFSParams, TimeGrid, make_g
from .geometry import RadialShape, circle
from .indicator import DEFAULT_ALPHAS, Policy
from .operators import OperatorParams

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_schema", "standard_family"]


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


def standard_family():
    """Twelve disks containing the cavity and twelve disjoint from it."""
    angles = np.deg2rad(np.arange(70.0, 291.0, 20.0))
    ring = [circle((0.55 * np.cos(a), 0.55 * np.sin(a)), 0.2).to_dict() for a in angles]
    return [
        {"kind": "disk_grid", "box": [0.25, 0.35, -0.06, 0.06], "nx": 3, "ny": 4,
         "radii": [0.35]},
        {"kind": "custom", "shapes": ring},
    ]


DEFAULTS = {
    "geometry": {
        "omega": circle().to_dict(),
        "cavity": circle((0.3, 0.0), 0.25).to_dict(),
        "family": standard_family(),
        "clearance": 0.05,
    },
    "grid": {"T": 1.0, "nt": 32, "n_omega": 64, "n_cavity": 32, "n_G": 32,
             "data_refine": 2, "pixels": 128},
    "boundary_data": {"g": "ramp", "expr": None},
    "solver": {"outer_factor": 1.4, "inner_factor": 0.6, "source_ratio": 0.5,
               "data_source_ratio": 0.25, "time_refine": 2, "colloc_per_interval": 3,
               "svd_cutoff": 1e-12, "kernel": "dirichlet", "time_rule": "interval"},
    "indicator": {"alphas": None, "slope_positive": -0.1, "slope_negative": -0.15,
                  "theta_factor": 3.0, "negative_factor": 10.0, "sup_cutoff": 1e-3,
                  "c_norm": 1.0, "rho": 0.25, "eps": 0.05, "m_max": 60, "ndirs": 8},
    "noise": {"delta": 0.0, "seed": 0},
    "workers": 1,
    "output": "nrt_out",
}


def load_schema():
    text = resources.files("nrtheat").joinpath("data/run_config.schema.json").read_text()
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated configuration with all defaults filled in."""

    data: dict

    @classmethod
    def from_dict(cls, raw):
        try:
            jsonschema.validate(raw, load_schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        cfg = cls(data)
        cfg._check()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def standard(cls, **overrides):
        return cls.from_dict(overrides)

    def _check(self):
        try:
            _ = (self.omega, self.cavity, self.g)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        al = self.alphas
        if np.any(np.diff(al) >= 0):
            raise ConfigError("indicator/alphas must be strictly decreasing")
        if len(al) < self.policy.min_alphas:
            raise ConfigError(f"indicator/alphas needs at least {self.policy.min_alphas} values")

    def to_dict(self):
        return copy.deepcopy(self.data)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.data, indent=1, sort_keys=True))

    def hash(self):
        """sha256 of the canonical JSON echo (the output directory is excluded)."""
        blob = {k: v for k, v in self.data.items() if k not in ("output", "workers")}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **sections):
        return RunConfig.from_dict(_merge(self.data, sections))

    # typed views

    @property
    def omega(self):
        return RadialShape.from_dict(self.data["geometry"]["omega"])

    @property
    def cavity(self):
        c = self.data["geometry"]["cavity"]
        return None if c is None else RadialShape.from_dict(c)

    @property
    def grid(self):
        g = self.data["grid"]
        return TimeGrid(g["T"], g["nt"])

    @property
    def g(self):
        b = self.data["boundary_data"]
        return make_g(b["g"], self.data["grid"]["T"], b.get("expr"))

    def mfs_params(self, data=False):
        s = self.data["solver"]
        return MFSParams(outer_factor=s["outer_factor"], inner_factor=s["inner_factor"],
                         source_ratio=s["data_source_ratio"] if data else s["source_ratio"],
                         time_refine=s["time_refine"],
                         colloc_per_interval=s["colloc_per_interval"], cutoff=s["svd_cutoff"])

    @property
    def operator_params(self):
        s, g = self.data["solver"], self.data["grid"]
        return OperatorParams(n_omega=g["n_omega"], n_G=g["n_G"], kernel=s["kernel"],
                              time_rule=s["time_rule"], mfs=self.mfs_params())

    @property
    def policy(self):
        i = self.data["indicator"]
        return Policy(slope_positive=i["slope_positive"], slope_negative=i["slope_negative"],
                      negative_factor=i["negative_factor"])

    @property
    def alphas(self):
        a = self.data["indicator"]["alphas"]
        return DEFAULT_ALPHAS.copy() if a is None else np.asarray(a, dtype=float)

    @property
    def indicator(self):
        return self.data["indicator"]

    @property
    def noise(self):
        return self.data["noise"]

    @property
    def output(self):
        return Path(self.data["output"])
