"""Run configuration: YAML text validated into typed models.

Every experiment is one YAML file with a ``model`` section, a ``seed`` and an
``experiment`` section whose ``kind`` names the subcommand.  See
``configs/`` for an annotated example of each kind.
"""

from __future__ import annotations

import math
from typing import Annotated, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import Box, ConfigurationError, DomainSpec, ModelParams
from .micro import MAX_SITES

__all__ = ["RunConfig", "ConfigError", "load_config", "dump_config", "parse_config"]


class ConfigError(Exception):
    """Invalid configuration; ``messages`` carry field paths and line numbers."""

    def __init__(self, messages: list[str]):
        super().__init__("\n".join(messages))
        self.messages = messages


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Strict):
    kind: Literal["torus", "box"]
    L: float | None = None
    lo: list[float] | None = None
    hi: list[float] | None = None


class ModelConfig(_Strict):
    d: Literal[1, 2]
    R: float = Field(gt=0)
    domain: DomainConfig
    interaction: Literal["area", "free"] = "area"

    @model_validator(mode="after")
    def _domain(self):
        self.params()
        return self

    def params(self) -> ModelParams:
        dom = self.domain
        try:
            if dom.kind == "torus":
                if dom.L is None:
                    raise ValueError("torus domain needs L")
                spec = DomainSpec.torus(self.d, dom.L)
            else:
                if dom.lo is None or dom.hi is None or len(dom.lo) != self.d or len(dom.hi) != self.d:
                    raise ValueError(f"box domain needs lo and hi of length d={self.d}")
                spec = DomainSpec.make_box(dom.lo, dom.hi)
            return ModelParams(self.R, spec, interaction=self.interaction)
        except ConfigurationError as err:
            raise ValueError(str(err)) from None


class Region(_Strict):
    lo: list[float]
    hi: list[float]

    def box(self) -> Box:
        try:
            return Box(tuple(self.lo), tuple(self.hi))
        except (ConfigurationError, ValueError) as err:
            raise ValueError(str(err)) from None


class Source(_Strict):
    """Where configurations come from: exact Gibbs, MCMC, Poisson or empty."""

    kind: Literal["gibbs", "mcmc", "poisson", "empty"] = "gibbs"
    intensity: float = Field(1.0, gt=0)
    burn_in: float = Field(50.0, ge=0)
    max_attempts: int = Field(100_000, ge=1)


class Schedule(_Strict):
    """Time grid: explicit ``times`` or ``step`` up to the horizon."""

    times: list[float] | None = None
    step: float | None = Field(None, gt=0)

    def grid(self, T: float) -> list[float]:
        if self.times is not None:
            return sorted(set(float(t) for t in self.times))
        if self.step is not None:
            n = int(math.floor(T / self.step + 1e-9))
            pts = [round(i * self.step, 12) for i in range(n + 1)]
            return pts + ([T] if pts[-1] < T - 1e-12 else [])
        return [T]


class GibbsSampleExp(_Strict):
    kind: Literal["gibbs-sample"]
    window: Region | None = None
    sampler: Literal["rejection", "mcmc"] = "rejection"
    n_samples: int = Field(ge=1)
    burn_in: float = Field(50.0, ge=0)
    max_attempts: int = Field(100_000, ge=1)
    dump_samples: bool = True


class SimulateExp(_Strict):
    kind: Literal["simulate"]
    window: Region | None = None
    T: float = Field(ge=0)
    snapshots: Schedule = Schedule()
    initial: Source = Source(kind="empty")
    replicas: int = Field(1, ge=1)
    write_events: bool = True


class BoundaryConfig(_Strict):
    mode: Literal["mcmc", "exact"] = "mcmc"
    width: float | None = Field(None, gt=0)
    burn_in: float = Field(20.0, ge=0)
    max_attempts: int = Field(10_000, ge=1)


class LocalizedExp(_Strict):
    kind: Literal["simulate-localized"]
    Lambda: Region
    T: float = Field(ge=0)
    snapshots: Schedule = Schedule()
    initial: Source = Source(kind="gibbs")
    boundary: BoundaryConfig = BoundaryConfig()
    replicas: int = Field(1, ge=1)
    write_events: bool = True


class CoupleExp(_Strict):
    kind: Literal["couple"]
    Lambda: Region
    ells: list[float]
    reference_ell: float
    T: float = Field(ge=0)
    initial: Source = Source(kind="poisson")
    replicas: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _nested(self):
        if sorted(self.ells) != list(self.ells) or any(e < 0 for e in self.ells):
            raise ValueError("ells must be nonnegative and increasing")
        if self.ells and self.reference_ell <= self.ells[-1]:
            raise ValueError("reference_ell must exceed every ell")
        return self


class EntropyMicroExp(_Strict):
    kind: Literal["entropy-micro"]
    sites: list[list[float]] | list[float]
    times: Schedule = Schedule(step=0.5)
    T: float = Field(5.0, ge=0)
    initial: Union[Literal["empty", "stationary", "random"], list[float]] = "empty"
    h: float = Field(1e-4, gt=0)

    @field_validator("sites")
    @classmethod
    def _k(cls, v):
        if len(v) > MAX_SITES:
            raise ValueError(f"k exceeds {MAX_SITES} (got k={len(v)})")
        return v


class GnzExp(_Strict):
    kind: Literal["gnz"]
    window: Region | None = None
    B: Region
    source: Source = Source()
    n_samples: int = Field(ge=30)
    family: list[str] = ["constant", "count", "covered", "nn", "empty"]
    spacing: float | None = Field(None, gt=0)
    n_boot: int = Field(200, ge=0)


class FisherExp(_Strict):
    kind: Literal["fisher"]
    intensity: float = Field(gt=0)
    windows: list[Region]
    n_samples: int = Field(ge=30)
    spacing: float | None = Field(None, gt=0)


class StationarityExp(_Strict):
    kind: Literal["stationarity"]
    window: Region | None = None
    start: Source = Source()
    times: list[float]
    replicas: int = Field(ge=30)
    reference_samples: int = Field(ge=30)


class DvExp(_Strict):
    kind: Literal["dv-entropy"]
    window: Region
    sample_window: Region | None = None
    mu: Source
    nu: Source
    n_samples: int = Field(ge=500)
    family: list[str] = ["constant"]
    restarts: int = Field(3, ge=1)
    maxiter: int = Field(500, ge=1)


Experiment = Annotated[
    Union[GibbsSampleExp, SimulateExp, LocalizedExp, CoupleExp, EntropyMicroExp, GnzExp,
          FisherExp, StationarityExp, DvExp],
    Field(discriminator="kind"),
]


class RunConfig(_Strict):
    model: ModelConfig
    seed: int = Field(ge=0, lt=2**64)
    experiment: Experiment
    threads: int = Field(1, ge=1)
    output: str | None = None

    @model_validator(mode="after")
    def _regions(self):
        params = self.model.params()
        dom = params.domain.box
        exp = self.experiment
        for name in ("window", "Lambda", "B", "sample_window"):
            reg = getattr(exp, name, None)
            if reg is None:
                continue
            box = reg.box()
            if box.d != params.d:
                raise ValueError(f"{name} has dimension {box.d}, model has d={params.d}")
            if not box.inside(dom):
                raise ValueError(f"{name} is not contained in the domain")
        if isinstance(exp, FisherExp):
            for reg in exp.windows:
                if not reg.box().inside(dom):
                    raise ValueError("fisher window is not contained in the domain")
        if isinstance(exp, StationarityExp):
            box = exp.window.box() if exp.window else dom
            if min(box.sides) < 6 * params.R:
                raise ValueError(
                    f"summary statistics need window side >= 6R = {6 * params.R}, got {min(box.sides)}"
                )
        if isinstance(exp, LocalizedExp) and not params.domain.is_torus:
            raise ValueError("simulate-localized needs a torus domain")
        if isinstance(exp, CoupleExp):
            lam = exp.Lambda.box()
            if not lam.grow(exp.reference_ell).inside(dom):
                raise ValueError("the reference region Lambda + reference_ell leaves the domain")
        return self


def _line_of(node, loc) -> int | None:
    """1-based line of the YAML node at pydantic location ``loc``."""
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [(k, v) for k, v in node.value if k.value == str(key)]
            if not match:
                break
            key_node, node = match[0]
            line = key_node.start_mark.line + 1
            continue
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            continue
        line = node.start_mark.line + 1
    return line


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML text.

    Raises
    ------
    ConfigError
        With one ``line N: field.path: message`` entry per problem.
    """
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as err:
        raise ConfigError([f"YAML syntax error: {err}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a mapping"])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        msgs = []
        for e in err.errors():
            # drop discriminator tags from the location
            loc = [p for p in e["loc"] if not (isinstance(p, str) and "-" in p and p in _KINDS)]
            path = ".".join(str(p) for p in loc) or "<root>"
            line = _line_of(root, loc)
            where = f"line {line}: " if line else ""
            msgs.append(f"{where}{path}: {e['msg']}")
        raise ConfigError(msgs) from None


_KINDS = {"gibbs-sample", "simulate", "simulate-localized", "couple", "entropy-micro", "gnz",
          "fisher", "stationarity", "dv-entropy"}


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
