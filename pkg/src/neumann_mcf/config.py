"""Experiment configuration: INI sections validated by a strict schema.

Unknown sections or keys are errors, and all violations are reported
together.  Every tolerance used by a check is a field here.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, model_validator

OUTPUT_ROOT_ENV = "NEUMANN_MCF_OUTPUT_ROOT"

SUITES = ("initial", "evolve", "diagnostics", "varifold")
FIELD_NAMES = ("sin_x1", "sin_x2", "wall_bubble", "normal_extension", "constant_y", "wave", "radial_local")
FUNCTION_NAMES = ("one", "cos_decay", "one_plus_y", "one_plus_y_decay", "cos_squared")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _split(v):
    if isinstance(v, str):
        parts = [p for p in v.replace(",", " ").split() if p]
        return parts
    if isinstance(v, (int, float)):
        return [v]
    return v


FloatList = Annotated[list[float], BeforeValidator(_split)]
StrList = Annotated[list[str], BeforeValidator(_split)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Section):
    period_x: float = Field(1.0, gt=0)
    height_y: float = Field(1.0, gt=0)
    nx: int = Field(256, ge=8)
    ny: int = Field(257, ge=5)


class InitialConfig(_Section):
    center_x: float = 0.5
    center_y: float = 0.0
    radius: float = Field(0.25, gt=0)
    cutoff_outer: float | None = Field(None, gt=0, description="R; default min(0.48 radius, 0.24 L_y)")
    cutoff_inner: float | None = Field(None, gt=0, description="r; default 0.375 R")
    delta: float | None = Field(None, gt=0, description="profile half-width; default 8/9 r")
    s0: float | None = Field(None, gt=0, description="flow-time window; default R")
    ode_step: float | None = Field(None, gt=0, description="default s0/64")
    root_tol: float = Field(1e-12, gt=0)
    max_halvings: int = Field(10, ge=0)


class SolverSection(_Section):
    epsilon: FloatList = Field(default_factory=lambda: [1e-3])
    cfl: float = Field(0.2, gt=0, le=0.5)
    t_end: float = Field(0.015625, ge=0)
    snapshot_every: float = Field(0.015625 / 64, gt=0)
    stats_every: int = Field(1, ge=1)
    scheme: Literal["flux", "sigma"] = "flux"

    @model_validator(mode="after")
    def _eps(self):
        if not self.epsilon:
            raise ValueError("epsilon: at least one value required")
        for e in self.epsilon:
            if not 0 < e < 1:
                raise ValueError(f"epsilon: each value must satisfy 0 < epsilon < 1 (got {e!r})")
        return self


class ChecksConfig(_Section):
    suites: StrList = Field(default_factory=lambda: list(SUITES))
    initial_zero_tol: float = Field(1e-10, gt=0)
    initial_neumann_tol: float = Field(1e-8, gt=0)
    initial_eps: FloatList = Field(default_factory=lambda: [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    initial_slope_rel_tol: float = Field(0.05, gt=0)
    max_principle_tol: float = Field(1e-10, ge=0)
    radius_rel_tol: float = Field(0.02, gt=0)
    gradient_rel_tol: float = Field(1e-6, ge=0)
    gradient_step_jitter: float = Field(1e-8, ge=0)
    l1_rel_jitter: float = Field(1e-3, ge=0)
    l1_uniform_factor: float = Field(1.1, gt=0)
    dissipation_rel_tol: float = Field(0.01, gt=0)
    first_variation_rel_tol: float = Field(0.02, gt=0)
    brakke_field_rel_tol: float = Field(0.02, gt=0)
    fields: StrList = Field(default_factory=lambda: list(FIELD_NAMES))
    test_functions: StrList = Field(default_factory=lambda: ["one", "cos_decay", "one_plus_y", "one_plus_y_decay"])
    gamma_count: int = Field(17, ge=2)
    gamma_limit: float = Field(0.9, gt=0, lt=1)
    varifold_stride: int = Field(8, ge=1, description="use every k-th snapshot for level curves")
    outlier_jump: float = Field(0.5, gt=0)
    mass_rel_tol: float = Field(0.02, ge=0)
    coarea_rel_tol: float = Field(0.02, gt=0)
    conormal_max_deg: float = Field(2.0, gt=0)
    brakke_curve_rel_tol: float = Field(0.03, gt=0)
    semidecreasing_rel_jitter: float = Field(0.02, ge=0)
    semidecreasing_function: str = "cos_squared"
    tv_factor: float = Field(1.05, gt=0)
    seed: int = 0

    @model_validator(mode="after")
    def _names(self):
        errs = []
        for s in self.suites:
            if s not in SUITES:
                errs.append(f"suites: unknown suite {s!r} (choose from {', '.join(SUITES)})")
        for f in self.fields:
            if f not in FIELD_NAMES:
                errs.append(f"fields: unknown test field {f!r} (choose from {', '.join(FIELD_NAMES)})")
        for f in list(self.test_functions) + [self.semidecreasing_function]:
            if f not in FUNCTION_NAMES:
                errs.append(f"test_functions: unknown test function {f!r} (choose from {', '.join(FUNCTION_NAMES)})")
        if errs:
            raise ValueError("; ".join(errs))
        return self


class OutputConfig(_Section):
    directory: str = "runs/semicircle"


class ExperimentConfig(_Section):
    domain: DomainConfig = Field(default_factory=DomainConfig)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    solver: SolverSection = Field(default_factory=SolverSection)
    checks: ChecksConfig = Field(default_factory=ChecksConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def epsilons(self) -> list[float]:
        return list(self.solver.epsilon)

    def sweep(self) -> list[float]:
        """One run per epsilon, in the given order."""
        return self.epsilons

    def output_dir(self) -> Path:
        """Output directory; relative paths resolve under ``$NEUMANN_MCF_OUTPUT_ROOT`` if set."""
        p = Path(self.output.directory)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not p.is_absolute():
            return Path(root) / p
        return p

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, vals in self.canonical().items():
            cp[sec] = {}
            for k, v in vals.items():
                if v is None:
                    continue
                if isinstance(v, list):
                    cp[sec][k] = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
                else:
                    cp[sec][k] = repr(v) if isinstance(v, float) else str(v)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_BOUND_WORDS = {
    "greater_than": ">",
    "greater_than_equal": "≥",
    "less_than": "<",
    "less_than_equal": "≤",
}


def _format_error(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"])
    name = str(err["loc"][-1]) if err["loc"] else ""
    kind = err["type"]
    ctx = err.get("ctx") or {}
    if kind in _BOUND_WORDS:
        limit = next(iter(ctx.values()))
        return f"{loc}: {name} {_BOUND_WORDS[kind]} {limit} required (got {err.get('input')!r})"
    if kind == "extra_forbidden":
        return f"{loc}: unknown key"
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    return f"{loc}: {msg} (got {err.get('input')!r})" if "input" in err and kind != "value_error" else f"{loc}: {msg}"


def validate_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError([_format_error(e) for e in exc.errors()]) from None


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    data = {sec: dict(cp[sec]) for sec in cp.sections()}
    return validate_config(data)


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: file not found"])
    return parse_config_text(path.read_text(), str(path))
