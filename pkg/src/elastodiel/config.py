"""Run configurations: TOML files parsed into dataclass sections.

Spatial functions (boundary data, modulations, sources) are given as
expressions in the coordinates ``x`` (``x[0]``, ``x[1]``, ...) using numpy
names such as ``sin``, ``cos``, ``exp``, ``pi``.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUBCOMMANDS = ("cell", "enhance", "dilute", "macro", "verify")

# sections each subcommand cannot run without
REQUIRED = {
    "cell": ("geometry", "phases", "solver"),
    "enhance": ("geometry", "phases", "charge", "solver"),
    "dilute": ("study",),
    "macro": ("macro",),
    "verify": ("geometry", "phases", "charge", "solver", "study"),
}

_NAMESPACE = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh", "arctan", "pi", "ones_like",
    "zeros_like", "where", "maximum", "minimum")}


def expression(src: str):
    """Callable ``x -> value`` for an expression string in the coordinates ``x``."""
    try:
        code = compile(src, "<config expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {src!r}: {exc.msg}") from None
    for name in code.co_names:
        if name != "x" and name not in _NAMESPACE:
            raise ConfigError(f"expression {src!r} uses unknown name {name!r}")

    def fn(x):
        return np.asarray(eval(code, {"__builtins__": {}}, {**_NAMESPACE, "x": x}), dtype=float)

    fn.source = src
    return fn


def _matrix(value, dim, what):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.shape != (dim, dim):
        raise ConfigError(f"{what} must be a scalar or a {dim}x{dim} matrix")
    return a


@dataclass
class PhaseConfig:
    permittivity: object = 1.0  # scalar (times identity) or matrix
    lame: Optional[float] = None
    shear: Optional[float] = None
    m1: Optional[float] = None
    m2: Optional[float] = None

    def material(self, dim):
        from .microstructure import Material, isotropic_electrostriction, isotropic_elasticity

        L = isotropic_elasticity(self.lame, self.shear, dim) if self.shear is not None else None
        M = None
        if self.m1 is not None or self.m2 is not None:
            M = isotropic_electrostriction(self.m1 or 0.0, self.m2 or 0.0, dim)
        if M is not None and L is None:
            raise ConfigError("electrostriction given without elasticity (lame, shear)")
        return Material(_matrix(self.permittivity, dim, "permittivity"), L, M)


@dataclass
class GeometryConfig:
    dim: int = 2
    kind: str = "inclusions"  # inclusions | laminate | checkerboard | homogeneous
    inclusions: list = field(default_factory=list)  # tables with center, radius, coating
    fraction: float = 0.5  # laminate: inclusion-phase fraction
    axis: int = 0  # laminate normal
    check_connected: Optional[bool] = None

    def validate(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"geometry.dim must be 2 or 3, got {self.dim}")
        if self.kind not in ("inclusions", "laminate", "checkerboard", "homogeneous"):
            raise ConfigError(f"unknown geometry.kind {self.kind!r}")
        if self.kind == "laminate" and not (0 < self.fraction < 1 and 0 <= self.axis < self.dim):
            raise ConfigError("laminate needs 0 < fraction < 1 and a valid axis")
        for k, inc in enumerate(self.inclusions):
            if "center" not in inc or "radius" not in inc:
                raise ConfigError(f"geometry.inclusions[{k}] needs center and radius")
            if len(inc["center"]) != self.dim or inc["radius"] <= 0:
                raise ConfigError(f"geometry.inclusions[{k}] has a bad center or radius")
        return self

    def build(self, side=1.0):
        from .microstructure import Inclusion, PhaseGeometry

        incs = tuple(Inclusion(tuple(float(c) for c in d["center"]), float(d["radius"]), d.get("coating"))
                     for d in self.inclusions) if self.kind == "inclusions" else ()
        levelset = None
        if self.kind == "laminate":
            frac, axis = self.fraction, self.axis
            levelset = lambda y: np.where(y[axis] / side >= 1.0 - frac, -1.0, 1.0)  # noqa: E731
        elif self.kind == "checkerboard":
            levelset = lambda y: np.where(np.sum(np.floor(2 * y / side), axis=0) % 2 == 1, -1.0, 1.0)  # noqa: E731
        return PhaseGeometry(self.dim, incs, levelset, side)

    @property
    def connected_check(self):
        if self.check_connected is not None:
            return self.check_connected
        return self.kind == "inclusions"


@dataclass
class ChargeConfig:
    families: list = field(default_factory=list)  # tables: mode, index, profile, amplitude, expression, eps_bar
    lambdas: list = field(default_factory=list)
    direction: Optional[list] = None  # fixed xi for the Rayleigh quotient

    def validate(self):
        for k, fam in enumerate(self.families):
            mode = fam.get("mode")
            if mode not in ("analytic", "coating", "corrector"):
                raise ConfigError(f"charge.families[{k}].mode must be analytic, coating or corrector")
            if mode == "analytic" and "expression" not in fam:
                raise ConfigError(f"charge.families[{k}] (analytic) needs an expression")
        return self


@dataclass
class SolverConfig:
    resolution: int = 64
    tol: float = 1e-8
    max_iter: int = 10_000
    elastic: Optional[bool] = None
    caps: dict = field(default_factory=dict)  # dimension -> max fine grid points per axis

    def validate(self):
        n = self.resolution
        if n < 8 or n & (n - 1):
            raise ConfigError(f"solver.resolution must be a power of two >= 8, got {n}")
        if not (0 < self.tol < 1) or self.max_iter < 1:
            raise ConfigError("solver.tol must lie in (0, 1) and solver.max_iter be positive")
        return self


@dataclass
class StudyConfig:
    ells: list = field(default_factory=lambda: [4, 8, 16])
    deltas: list = field(default_factory=lambda: [0.25, 0.125, 0.0625])
    lambdas: list = field(default_factory=list)
    q: list = field(default_factory=lambda: [2, 4])
    voxels: int = 32
    eps_bar: float = 5.0
    eta: float = 0.5
    dim: int = 2
    tol: float = 1e-10
    boundary: str = "x[0]"
    modulation: list = field(default_factory=list)
    modulation_grad: Optional[list] = None  # per family, list of component expressions
    boundary_layer: bool = True

    def validate(self):
        if any(d <= 0 or d > 1 for d in self.deltas):
            raise ConfigError("study.deltas must lie in (0, 1]")
        if any(q < 1 for q in self.q):
            raise ConfigError("study.q values must be >= 1")
        if self.eta <= 0 or self.eps_bar <= 0:
            raise ConfigError("study.eta and study.eps_bar must be positive")
        return self


@dataclass
class MacroConfig:
    dim: int = 2
    n: int = 64
    eps: object = 1.0
    a: Optional[list] = None  # a[j][p]; computed from the cell when omitted and geometry is given
    boundary: str = "x[0]"
    modulation: object = None  # "active" or a list of expressions
    source: Optional[str] = None
    L: Optional[dict] = None  # {lame, shear} of an isotropic homogenized stiffness
    M: Optional[dict] = None  # {m1, m2}

    def validate(self):
        if self.n < 2:
            raise ConfigError("macro.n must be at least 2")
        if isinstance(self.modulation, str) and self.modulation != "active":
            raise ConfigError("macro.modulation must be 'active' or a list of expressions")
        return self


@dataclass
class OutputConfig:
    fields: list = field(default_factory=list)  # e.g. ["chi", "theta", "phi"]
    format: str = "csv"  # csv | binary

    def validate(self):
        if self.format not in ("csv", "binary"):
            raise ConfigError("output.format must be csv or binary")
        return self


@dataclass
class RunConfig:
    subcommand: str
    geometry: Optional[GeometryConfig] = None
    matrix: Optional[PhaseConfig] = None
    inclusion: Optional[PhaseConfig] = None
    charge: Optional[ChargeConfig] = None
    solver: Optional[SolverConfig] = None
    study: Optional[StudyConfig] = None
    macro: Optional[MacroConfig] = None
    output: OutputConfig = field(default_factory=OutputConfig)
    sha256: str = ""

    @property
    def phases_given(self):
        return self.matrix is not None

    def phase_tensors(self):
        from .microstructure import PhaseTensors

        dim = self.geometry.dim
        matrix = self.matrix.material(dim)
        inclusion = (self.inclusion or self.matrix).material(dim)
        return PhaseTensors(matrix, inclusion).validate()


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"section [{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(unknown)}")
    try:
        return cls(**data).validate() if hasattr(cls, "validate") else cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad section [{name}]: {exc}") from None


def parse_config(text: str, subcommand: str, sha256: str = "") -> RunConfig:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
    for name in REQUIRED[subcommand]:
        if name not in data:
            raise ConfigError(f"missing section [{name}] required by '{subcommand}'")
    allowed = {"geometry", "phases", "charge", "solver", "study", "macro", "output"}
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(extra)}")
    cfg = RunConfig(subcommand, sha256=sha256)
    if "geometry" in data:
        cfg.geometry = _section(GeometryConfig, data["geometry"], "geometry")
    if "phases" in data:
        phases = data["phases"]
        if "matrix" not in phases:
            raise ConfigError("missing section [phases.matrix]")
        cfg.matrix = _section(PhaseConfig, phases["matrix"], "phases.matrix")
        if "inclusion" in phases:
            cfg.inclusion = _section(PhaseConfig, phases["inclusion"], "phases.inclusion")
    if "charge" in data:
        cfg.charge = _section(ChargeConfig, data["charge"], "charge")
    if "solver" in data:
        cfg.solver = _section(SolverConfig, data["solver"], "solver")
    if "study" in data:
        cfg.study = _section(StudyConfig, data["study"], "study")
    if "macro" in data:
        cfg.macro = _section(MacroConfig, data["macro"], "macro")
    if "output" in data:
        cfg.output = _section(OutputConfig, data["output"], "output")
    if subcommand == "enhance" and not cfg.charge.lambdas:
        raise ConfigError("'enhance' needs a non-empty charge.lambdas list")
    if subcommand == "verify" and not cfg.study.modulation and cfg.charge.families:
        raise ConfigError("'verify' needs study.modulation, one expression per charge family")
    return cfg


def load_config(path, subcommand: str) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8 text") from None
    return parse_config(text, subcommand, hashlib.sha256(raw).hexdigest())
