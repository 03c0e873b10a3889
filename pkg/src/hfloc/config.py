"""Experiment configuration: JSON on disk, dataclass in memory."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .disorder import DisorderModel
from .effpot import FSpec, KernelSpec
from .hamiltonian import HamiltonianSpec
from .lattice import Metric


@dataclass
class ExperimentConfig:
    d: int = 1
    L: int = 7
    lam: float = 10.0
    g: float = 1e-3
    fspec: dict = field(default_factory=lambda: {"kind": "fermi_dirac", "eta": 20.0, "beta": math.pi / 25})
    kernel: dict = field(default_factory=lambda: {"kind": "kronecker", "gamma_a": 20.0, "C_a": 1.0})
    metric: dict = field(default_factory=lambda: {"kind": "ell1", "kappa": 1.0})
    model: dict = field(default_factory=lambda: {"kind": "two_sided_exponential", "c_rho": 1.0, "eps2": 0.25})
    name: str = "unnamed"
    grids: dict = field(default_factory=dict)
    samples: int = 2000
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        self.to_spec()  # validates every nested block

    def to_spec(self) -> HamiltonianSpec:
        return HamiltonianSpec(
            d=int(self.d), L=int(self.L), lam=float(self.lam), g=float(self.g),
            fspec=FSpec.from_dict(self.fspec), kernel=KernelSpec.from_dict(self.kernel),
            metric=Metric.from_dict(self.metric), model=DisorderModel.from_dict(self.model),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**copy.deepcopy(data))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        """Digest of the physics and sampling inputs (the output directory is excluded)."""
        data = self.to_dict()
        data.pop("out")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, items) -> "ExperimentConfig":
        """Apply ``key=value`` strings; dotted keys reach into nested blocks and
        values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in items or ():
            if "=" not in item:
                raise ValueError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.strip().split(".")
            node = data
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    node[p] = {}
                node = node[p]
            node[parts[-1]] = value
        return ExperimentConfig.from_dict(data)


def spec_from_file(path) -> HamiltonianSpec:
    return ExperimentConfig.load(path).to_spec()


CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def named(name: str) -> ExperimentConfig:
    """One of the shipped configurations in ``configs/``."""
    return ExperimentConfig.load(CONFIG_DIR / f"{name}.json")
