"""Scenario configuration schema.

Configs are YAML (a nested mapping) or JSON with the same keys.  Unknown keys
are rejected at every level.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .evolve import GaussianPacket, HarmonicGroundState, PlaneWave, Potential
from .lattice import Grid

SCENARIOS = ("evolveOnly", "madelungResiduals", "transformResiduals", "equivariance",
             "vanishingExpectations", "backwardHJB", "classicalTransforms", "nelson",
             "halfQDuality", "dpSolvers", "subEnsembleDemo")
STOCHASTIC = frozenset({"equivariance", "vanishingExpectations", "backwardHJB", "dpSolvers",
                        "subEnsembleDemo"})
NEEDS_WAVEFUNCTION = frozenset({"evolveOnly", "madelungResiduals", "transformResiduals", "equivariance",
                                "backwardHJB", "nelson", "halfQDuality"})


class ConfigError(ValueError):
    """Raised for anything that makes a config unusable."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    points: int = Field(512, ge=8)
    extent: float = Field(16.0, gt=0)
    boundary: Literal["periodic", "clamped"] = "periodic"
    dims: Literal[1, 2] = 1
    origin: Optional[float] = None

    def build(self) -> Grid:
        if self.dims == 1:
            return Grid.line(self.points, self.extent, self.boundary, self.origin)
        return Grid.square(self.points, self.extent, self.boundary, self.origin)


class PotentialConfig(_Strict):
    kind: Literal["free", "harmonic", "barrier", "coupledPair"] = "harmonic"
    omega: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = Field(1.0, gt=0)
    coupling: float = 0.0
    single: Optional["PotentialConfig"] = None

    def build(self, mass: float) -> Potential:
        if self.kind == "coupledPair":
            single = (self.single or PotentialConfig(kind="free")).build(mass)
            return Potential.coupled_pair(single, self.coupling)
        if self.kind == "harmonic":
            return Potential.harmonic(mass, self.omega, self.center)
        if self.kind == "barrier":
            return Potential.barrier(self.height, self.width, self.center)
        return Potential.free()


class InitialConfig(_Strict):
    kind: Literal["planeWave", "gaussianPacket", "harmonicGroundState"] = "harmonicGroundState"
    k: Union[float, List[float]] = 0.0
    center: Union[float, List[float]] = 0.0
    width: Union[float, List[float]] = 1.0
    latticeEigenstate: bool = True

    def build(self, potential: PotentialConfig, hbar: float, mass: float):
        if self.kind == "planeWave":
            return PlaneWave(self.k)
        if self.kind == "gaussianPacket":
            return GaussianPacket(self.center, self.width, self.k)
        return HarmonicGroundState(mass, potential.omega, hbar, potential.center, self.latticeEigenstate)


class ConstantsConfig(_Strict):
    hbar: float = Field(1.0, gt=0)
    mass: float = Field(1.0, gt=0)
    k: Optional[float] = Field(None, gt=0)

    @property
    def diffusion(self) -> float:
        return self.hbar if self.k is None else self.k


class TimeConfig(_Strict):
    dt: float = Field(0.005, gt=0)
    steps: int = Field(1000, ge=2)
    snapshotEvery: int = Field(100, ge=1)


class EnsembleConfig(_Strict):
    size: int = Field(100_000, ge=100)
    bins: int = Field(64, ge=2)
    workers: int = Field(1, ge=1)
    writeParticles: bool = False


class BackwardConfig(_Strict):
    samplesPerSite: int = Field(256, ge=16)
    horizon: int = Field(10, ge=1)


class TransformConfig(_Strict):
    direction: Literal["forward", "retro"] = "forward"
    qForm: Literal["sqrt", "log_grad", "log_laplacian", "third"] = "third"


class ClassicalConfig(_Strict):
    cases: List[Literal[1, 2, 3, 4]] = [1, 2, 3, 4]
    momentum: float = 0.25
    width: float = Field(3.0, gt=0)
    time: float = 0.5
    qForm: Literal["sqrt", "log_grad", "log_laplacian", "third"] = "log_laplacian"


class VanishingConfig(_Strict):
    point: float = 0.5
    width: float = Field(2.0, gt=0)
    dtMin: float = Field(1e-3, gt=0)
    dtMax: float = Field(1e-1, gt=0)
    levels: int = Field(9, ge=3)


class MdpConfig(_Strict):
    path: Optional[str] = None
    states: int = Field(20, ge=1, le=10_000)
    actions: int = Field(4, ge=1)
    gamma: float = Field(0.9, ge=0, le=1)
    instances: int = Field(1, ge=1)
    proposalsPerState: int = Field(2, ge=1)
    patience: int = Field(25, ge=1)
    demoSeeds: int = Field(8, ge=1)


class SubEnsembleConfig(_Strict):
    states: int = Field(8, ge=2, le=64)
    dt: float = Field(0.1, gt=0)
    steps: int = Field(5, ge=1)
    mixing: float = Field(0.4, ge=0, lt=0.5)


class ScenarioConfig(_Strict):
    scenario: Literal[SCENARIOS]  # type: ignore[valid-type]
    output: str
    seed: Optional[int] = Field(None, ge=0)
    grid: GridConfig = GridConfig()
    potential: PotentialConfig = PotentialConfig()
    initial: InitialConfig = InitialConfig()
    constants: ConstantsConfig = ConstantsConfig()
    time: TimeConfig = TimeConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    backward: BackwardConfig = BackwardConfig()
    transform: TransformConfig = TransformConfig()
    classical: ClassicalConfig = ClassicalConfig()
    vanishing: VanishingConfig = VanishingConfig()
    mdp: MdpConfig = MdpConfig()
    subEnsemble: SubEnsembleConfig = SubEnsembleConfig()
    tolerances: Dict[str, float] = {}
    figures: bool = True

    @model_validator(mode="after")
    def _seed_for_stochastic(self):
        if self.scenario in STOCHASTIC and self.seed is None:
            raise ValueError(f"scenario {self.scenario!r} is stochastic and needs a seed")
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def parse_text(text: str, suffix: str) -> dict:
    if suffix == ".json":
        return json.loads(text)
    return yaml.safe_load(text)


def load_config(path) -> ScenarioConfig:
    """Read and validate a config file; every failure surfaces as :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = parse_text(text, path.suffix.lower())
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
