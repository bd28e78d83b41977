"""Run configuration: flat ``section.key = value`` text.

Example::

    # anisotropic test case
    problem.lengths = 1, 1
    problem.p1 = 2 + 0.2*sin(3*x1)
    problem.p2 = 2
    problem.initial = sin(pi*x1)^2*sin(pi*x2)^2
    problem.eps = 1e-2
    problem.T = 0.25
    solver.modes = 16
    sweep.axis = epsilon
    sweep.values = 1e-1, 1e-2, 1e-3

Lists are comma separated.  ``auto`` leaves an optional number unset.
Expressions are kept as text here and parsed when the problem is built, so
``problem.*`` expressions may themselves contain commas (``min(x1, t)``).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .field_dsl import ParseError, parse


class ConfigError(ValueError):
    pass


@dataclass
class ProblemBlock:
    lengths: tuple[float, ...] = (1.0, 1.0)
    exponents: tuple[str, ...] = ("2", "2")
    forcing: str = "0"
    initial: str = "0"
    u_exact: str | None = None
    eps: float = 1e-2
    T: float = 1.0
    lipschitz: float | None = None


@dataclass
class ExponentBlock:
    grid: int = 64
    time_grid: int = 64
    slow_mode: bool = False


@dataclass
class SolverBlock:
    modes: int = 8
    nodes: int | None = None
    integrator: str = "imex-exponential"
    dt: float = 1e-4
    dt_min: float = 1e-12
    dt_max: float | None = None
    tol: float = 1e-6
    kappa: float | None = None
    snapshots: int = 100


@dataclass
class MonitorBlock:
    r_list: tuple[float, ...] = ()
    r_fractions: tuple[float, ...] = (0.5,)
    slack: float = 0.2
    fields: tuple[str, ...] = ("higher_int", "hessian_weighted", "dissipation", "sup_modular")


@dataclass
class SweepBlock:
    axis: str | None = None
    values: tuple[float, ...] = ()


@dataclass
class MMSBlock:
    modes: tuple[int, ...] = (4, 8, 16)


@dataclass
class VerifyBlock:
    suites: tuple[str, ...] = ("all",)
    tolerances: dict[str, float] = field(default_factory=dict)


@dataclass
class RunConfig:
    problem: ProblemBlock = field(default_factory=ProblemBlock)
    exponents: ExponentBlock = field(default_factory=ExponentBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    monitor: MonitorBlock = field(default_factory=MonitorBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    mms: MMSBlock = field(default_factory=MMSBlock)
    verify: VerifyBlock = field(default_factory=VerifyBlock)
    output_dir: str = "out"
    seed: int = 0

    @property
    def dim(self) -> int:
        return len(self.problem.lengths)


# -- value codecs -----------------------------------------------------------

def _float(text: str) -> float:
    return float(text)


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("auto", "none", "") else int(text)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "yes", "1", "on"):
        return True
    if value in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in _split(text))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in _split(text))


def _words(text: str) -> tuple[str, ...]:
    return tuple(_split(text))


def _opt_str(text: str) -> str | None:
    text = text.strip()
    return None if text.lower() in ("auto", "none", "") else text


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


# key -> (block attribute or None for top level, field name, decoder)
_SCHEMA: dict[str, tuple[str | None, str, object]] = {
    "problem.lengths": ("problem", "lengths", _floats),
    "problem.forcing": ("problem", "forcing", str.strip),
    "problem.initial": ("problem", "initial", str.strip),
    "problem.u_exact": ("problem", "u_exact", _opt_str),
    "problem.eps": ("problem", "eps", _float),
    "problem.T": ("problem", "T", _float),
    "problem.lipschitz": ("problem", "lipschitz", _opt_float),
    "exponents.grid": ("exponents", "grid", int),
    "exponents.time_grid": ("exponents", "time_grid", int),
    "exponents.slow_mode": ("exponents", "slow_mode", _bool),
    "solver.modes": ("solver", "modes", int),
    "solver.nodes": ("solver", "nodes", _opt_int),
    "solver.integrator": ("solver", "integrator", str.strip),
    "solver.dt": ("solver", "dt", _float),
    "solver.dt_min": ("solver", "dt_min", _float),
    "solver.dt_max": ("solver", "dt_max", _opt_float),
    "solver.tol": ("solver", "tol", _float),
    "solver.kappa": ("solver", "kappa", _opt_float),
    "solver.snapshots": ("solver", "snapshots", int),
    "monitor.r_list": ("monitor", "r_list", _floats),
    "monitor.r_fractions": ("monitor", "r_fractions", _floats),
    "monitor.slack": ("monitor", "slack", _float),
    "monitor.fields": ("monitor", "fields", _words),
    "sweep.axis": ("sweep", "axis", _opt_str),
    "sweep.values": ("sweep", "values", _floats),
    "mms.modes": ("mms", "modes", _ints),
    "verify.suites": ("verify", "suites", _words),
    "output.dir": (None, "output_dir", str.strip),
    "seed": (None, "seed", int),
}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    exponents: dict[int, str] = {}
    n_declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "problem.N":
                n_declared = int(value)
            elif key.startswith("problem.p") and key[len("problem.p"):].isdigit():
                exponents[int(key[len("problem.p"):])] = value
            elif key.startswith("verify.tol."):
                cfg.verify.tolerances[key[len("verify.tol."):]] = float(value)
            elif key in _SCHEMA:
                block, name, decode = _SCHEMA[key]
                target = cfg if block is None else getattr(cfg, block)
                setattr(target, name, decode(value))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    dim = cfg.dim
    if n_declared is not None and n_declared != dim:
        raise ConfigError(f"problem.N = {n_declared} but problem.lengths has {dim} entries")
    if exponents:
        if sorted(exponents) != list(range(1, dim + 1)):
            raise ConfigError(f"need exponents problem.p1 .. problem.p{dim}")
        cfg.problem.exponents = tuple(exponents[i] for i in range(1, dim + 1))
    check_expressions(cfg)
    return cfg


def check_expressions(cfg: RunConfig) -> None:
    """Raise :class:`ParseError` for any malformed expression in the problem block."""
    p = cfg.problem
    if len(p.exponents) != cfg.dim:
        raise ConfigError(f"{len(p.exponents)} exponents for a {cfg.dim}-D domain")
    named = [(f"problem.p{i + 1}", e) for i, e in enumerate(p.exponents)]
    named += [("problem.forcing", p.forcing), ("problem.initial", p.initial)]
    if p.u_exact is not None:
        named.append(("problem.u_exact", p.u_exact))
    for key, text in named:
        try:
            parse(text, cfg.dim)
        except ParseError as exc:
            raise ParseError(f"{key}: {exc.args[0].split(' at byte')[0]}", text,
                             len(text.encode()[: exc.offset].decode("utf-8", "ignore"))) from exc


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"problem.N = {cfg.dim}"]
    for key, (block, name, _) in _SCHEMA.items():
        target = cfg if block is None else getattr(cfg, block)
        lines.append(f"{key} = {_fmt(getattr(target, name))}")
        if key == "problem.lengths":
            lines += [f"problem.p{i + 1} = {e}" for i, e in enumerate(cfg.problem.exponents)]
    for name, value in sorted(cfg.verify.tolerances.items()):
        lines.append(f"verify.tol.{name} = {value!r}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def replace_block(cfg: RunConfig, block: str, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **{block: dataclasses.replace(getattr(cfg, block), **changes)})
