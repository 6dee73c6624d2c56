"""Scenario files: YAML documents validated into :class:`ScenarioConfig`."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..coefficients import (DRIFT_FAMILIES, INITIAL_FAMILIES, INTERACTION_FAMILIES, NOISE_FAMILIES,
                            CoefficientSet, InitialLaw, builtin_coefficients)
from ..graph_limits import FAMILIES, GraphSpec, ValidationError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _Family(BaseModel):
    """A ``family`` name plus free-form parameters."""

    model_config = ConfigDict(extra="allow", frozen=True)
    family: str

    def params(self) -> dict[str, Any]:
        return dict(self.model_extra or {})


class DynamicsConfig(_Strict):
    d: int = Field(1, ge=1)
    radius: float = Field(10.0, gt=0)
    drift: _Family = _Family(family="zero")
    interaction: _Family = _Family(family="zero")
    noise: _Family = _Family(family="zero")

    @model_validator(mode="after")
    def _known(self):
        for part, allowed in ((self.drift, DRIFT_FAMILIES), (self.interaction, INTERACTION_FAMILIES),
                              (self.noise, NOISE_FAMILIES)):
            if part.family not in allowed:
                raise ValueError(f"unknown family {part.family!r}; expected one of {allowed}")
        return self

    def build(self) -> CoefficientSet:
        def spec(part):
            return {"family": part.family, **part.params()}

        return builtin_coefficients(spec(self.drift), spec(self.interaction), spec(self.noise),
                                    d=self.d, radius=self.radius)


class GraphFamily(_Family):
    def build(self) -> GraphSpec:
        params = self.params()
        independent = bool(params.pop("independent_noise", False))
        return GraphSpec(self.family, params, independent)


def _check_graph(spec: GraphFamily | None):
    if spec is None:
        return
    if spec.family not in FAMILIES:
        raise ValueError(f"unknown graph family {spec.family!r}")
    spec.build()


class GraphConfig(_Strict):
    drift: GraphFamily
    noise: Optional[GraphFamily] = None  # None: same matrix as the drift graph

    @model_validator(mode="after")
    def _valid(self):
        _check_graph(self.drift)
        _check_graph(self.noise)
        return self


class LimitConfig(_Strict):
    reference_grid: int = Field(1024, ge=1)
    drift: Optional[GraphFamily] = None  # None: the drift graph's own family
    noise: Optional[GraphFamily] = None  # None: the drift limit

    @model_validator(mode="after")
    def _valid(self):
        _check_graph(self.drift)
        _check_graph(self.noise)
        return self


class InitialConfig(_Family):
    def build(self, d: int) -> InitialLaw:
        return InitialLaw(self.family, self.params(), d)


class TimeConfig(_Strict):
    T: float = Field(gt=0)
    steps: int = Field(ge=1)


class MeanFieldConfig(_Strict):
    u_points: int = Field(16, ge=1)
    M: int = Field(2000, ge=2)
    tol: float = Field(1e-3, gt=0)
    max_iter: int = Field(20, ge=1)
    share_initial: bool = True


class PDEConfig(_Strict):
    x_min: float
    x_max: float
    cells: int = Field(ge=4)
    testfns: list[int] = [1, 2]  # monomial powers
    max_substeps: int = Field(2_000_000, ge=1)

    @model_validator(mode="after")
    def _box(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        return self


class ChecksConfig(_Strict):
    slope_max: Optional[float] = None
    slope_min: Optional[float] = None
    dinf_nonincreasing: bool = False


class ScenarioConfig(_Strict):
    name: str
    dynamics: DynamicsConfig
    graph: GraphConfig
    limit_dgm: Union[Literal["none"], LimitConfig] = LimitConfig()
    initial: InitialConfig
    time: TimeConfig
    meanfield: MeanFieldConfig = MeanFieldConfig()
    pde: Optional[PDEConfig] = None
    sweep: list[int]
    seeds: list[int] = [0]
    outputs: str = "results"
    checks: ChecksConfig = ChecksConfig()

    @field_validator("sweep")
    @classmethod
    def _sweep(cls, v):
        if not v:
            raise ValueError("sweep must list at least one N")
        if any(n < 1 for n in v):
            raise ValueError("every N must be >= 1")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v:
            raise ValueError("need at least one seed")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.initial.family not in INITIAL_FAMILIES:
            raise ValueError(f"unknown initial family {self.initial.family!r}")
        self.initial.build(self.dynamics.d)
        self.dynamics.build()
        if self.pde is not None and self.dynamics.d != 1:
            raise ValueError("the PDE stage needs d = 1")
        if self.limit_dgm == "none" and self.pde is not None:
            raise ValueError("the PDE stage needs a limit DGM")
        return self

    # derived objects

    def coefficients(self) -> CoefficientSet:
        return self.dynamics.build()

    def initial_law(self) -> InitialLaw:
        return self.initial.build(self.dynamics.d)

    def graph_specs(self) -> tuple[GraphSpec, GraphSpec | None]:
        return self.graph.drift.build(), (self.graph.noise.build() if self.graph.noise else None)

    def limit_specs(self) -> tuple[GraphSpec, GraphSpec] | None:
        if self.limit_dgm == "none":
            return None
        drift = self.limit_dgm.drift.build() if self.limit_dgm.drift else self.graph.drift.build()
        if self.limit_dgm.noise is not None:
            noise = self.limit_dgm.noise.build()
        elif self.graph.noise is not None:
            noise = self.graph.noise.build()
        else:
            noise = drift
        return drift, noise

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ``ValidationError`` on bad input."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"config {path} must be a mapping")
    return parse_config(raw)


def parse_config(raw: dict) -> ScenarioConfig:
    from pydantic import ValidationError as PydanticError

    try:
        return ScenarioConfig.model_validate(raw)
    except PydanticError as exc:
        raise ValidationError(str(exc)) from exc
    except (ValidationError, ValueError, TypeError) as exc:
        raise ValidationError(str(exc)) from exc
