"""Experiment configuration: a flat JSON document with a fixed key set."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

from .losses import LossWeights
from .optim import FitConfig
from .synth import CaseSpec


@dataclass
class ExperimentConfig:
    version: int
    out_dir: str
    manifest: str | None
    case_seeds: list
    target_level: int
    n_bumps: int
    amplitude: float
    inner_radius: float
    outer_radius: float
    bump_width: float
    trt_sigma_frac: float
    trt_draws: int
    template_level: int
    template_inner_radius: float
    template_outer_radius: float
    seeds: list
    lambdas: list
    steps: int
    resolution: int
    iterations: int
    lr: float
    beta1: float
    beta2: float
    eps: float
    init_sigma: float
    kappa: float
    box_inflate: float
    w_chamfer: float
    w_edge: float
    w_normal: float
    normalization_box: list | None
    jobs: int

    def __post_init__(self):
        if len(self.seeds) < 2:
            raise ValueError("at least two seeds are needed for RMSD")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.lambdas:
            raise ValueError("lambda list must be non-empty")
        if self.trt_draws not in (0, 2):
            raise ValueError("trt_draws must be 0 (disabled) or 2")
        self.seeds = [int(s) for s in self.seeds]
        self.lambdas = [float(x) for x in self.lambdas]
        self.case_seeds = [int(s) for s in self.case_seeds]

    # -- construction ------------------------------------------------------

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        text = resources.files("medflow").joinpath("defaults.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, data: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = asdict(base) if base is not None else {}
        merged.update(data)
        missing = names - set(merged)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        return cls(**merged)

    @classmethod
    def load(cls, path=None, **overrides) -> "ExperimentConfig":
        cfg = cls.defaults()
        if path is not None:
            cfg = cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")), base=cfg)
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if overrides:
            cfg = cls.from_dict(overrides, base=cfg)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    # -- derived objects ---------------------------------------------------

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def manifest_path(self) -> Path:
        return Path(self.manifest) if self.manifest else self.out / "suite" / "manifest.json"

    def case_spec(self, case_seed: int) -> CaseSpec:
        return CaseSpec(
            seed=case_seed, n_bumps=self.n_bumps, amplitude=self.amplitude,
            inner_radius=self.inner_radius, outer_radius=self.outer_radius, width=self.bump_width,
        )

    def fit_config(self, lam: float) -> FitConfig:
        return FitConfig(
            steps=self.steps, resolution=self.resolution, iterations=self.iterations,
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            init_sigma=self.init_sigma, kappa=self.kappa, box_inflate=self.box_inflate,
            weights=LossWeights(self.w_chamfer, self.w_edge, self.w_normal, float(lam)),
        )
