"""Scenario configuration files and the builtin scenarios.

Config grammar (one statement per line; ``#`` starts a comment)::

    [section]
    key = value

Values are booleans (``true``/``false``), numbers, bracketed lists such as
``[1, 0]`` or matrices as lists of rows ``[[0, 1], [0, 0]]``, or bare
strings. Sections and keys:

``[scenario]``
    ``name``, ``description``, ``controller`` (predictor_feedback,
    nominal_uncompensated, open_loop_zero, nominal_delay_free),
    ``predictor`` (generic, linear-explicit), ``dt``, ``horizon``, ``x0``,
    ``histories`` (one constant per channel), ``record_predictors``.
``[model]``
    ``kind = unicycle`` with ``delays`` and optional ``allow_reversed``, or
    ``kind = linear`` with ``A``, ``b`` (rows are the b_i), ``k`` (rows are
    the k_i) and ``delays``.
``[run]``
    ``verify``, ``expect_divergence``.

Errors carry the line and column of the offending text.
"""

from __future__ import annotations

import ast
import os
import pathlib
from dataclasses import dataclass

from .errors import ConfigurationError
from .model import make_linear, make_unicycle
from .simulator import CONTROLLERS, PREDICTORS, Scenario

CONFIG_SUFFIX = ".cfg"
SCENARIO_DIR_ENV = "LAGSTEP_SCENARIO_DIR"


class ConfigParseError(ConfigurationError):
    """Malformed or invalid config text, located at ``line``:``column`` (1-based)."""

    def __init__(self, message, line, column, source="<config>"):
        super().__init__(f"{source}:{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.source = source


@dataclass
class _Entry:
    value: object
    line: int
    column: int
    value_column: int


@dataclass
class RunConfig:
    """A resolved scenario plus run options."""

    name: str
    scenario: Scenario
    description: str = ""
    verify: bool = False
    expect_divergence: bool = False
    source: str = "builtin"


_SCHEMA = {
    "scenario": {"name", "description", "controller", "predictor", "dt", "horizon", "x0", "histories",
                 "record_predictors"},
    "model": {"kind", "delays", "allow_reversed", "A", "b", "k"},
    "run": {"verify", "expect_divergence"},
}


def _parse_value(text, line, column, source):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if text[:1] in "[(-+.0123456789":
        try:
            return ast.literal_eval(text)
        except (SyntaxError, ValueError) as exc:
            offset = getattr(exc, "offset", None) or 1
            raise ConfigParseError(f"cannot parse value {text!r}", line, column + offset - 1, source) from None
    return text


def parse_sections(text: str, source: str = "<config>") -> dict:
    """Split config text into ``{section: {key: _Entry}}``."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].rstrip()
        stripped = body.lstrip()
        if not stripped:
            continue
        indent = len(body) - len(stripped) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigParseError("unterminated section header", lineno, len(body) + 1, source)
            current = stripped[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigParseError(f"unknown section [{current}]", lineno, indent, source)
            if current in sections:
                raise ConfigParseError(f"duplicate section [{current}]", lineno, indent, source)
            sections[current] = {}
            continue
        if "=" not in stripped:
            raise ConfigParseError("expected 'key = value'", lineno, indent, source)
        if current is None:
            raise ConfigParseError("key outside of any section", lineno, indent, source)
        key, _, rest = stripped.partition("=")
        key = key.strip()
        if key not in _SCHEMA[current]:
            raise ConfigParseError(f"unknown key {key!r} in [{current}]", lineno, indent, source)
        if key in sections[current]:
            raise ConfigParseError(f"duplicate key {key!r}", lineno, indent, source)
        value_text = rest.strip()
        value_col = body.index("=") + 2 + (len(rest) - len(rest.lstrip()))
        if not value_text:
            raise ConfigParseError(f"missing value for {key!r}", lineno, value_col, source)
        sections[current][key] = _Entry(_parse_value(value_text, lineno, value_col, source), lineno, indent,
                                         value_col)
    return sections


class _Reader:
    def __init__(self, sections, source):
        self.sections = sections
        self.source = source

    def has(self, section, key):
        return key in self.sections.get(section, {})

    def error(self, section, key, message):
        entry = self.sections.get(section, {}).get(key)
        if entry is None:
            return ConfigParseError(message, 1, 1, self.source)
        return ConfigParseError(message, entry.line, entry.value_column, self.source)

    def get(self, section, key, kind, default=None, required=False):
        entry = self.sections.get(section, {}).get(key)
        if entry is None:
            if required:
                raise ConfigParseError(f"missing required key {key!r} in [{section}]", 1, 1, self.source)
            return default
        value = entry.value
        try:
            return kind(value)
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, f"bad value for {key!r}: {exc}") from None


def _number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    return float(v)


def _vector(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return [float(v)]
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a bracketed list, got {v!r}")
    return [_number(x) for x in v]


def _matrix(v):
    if not isinstance(v, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in v):
        raise ValueError(f"expected a list of rows, got {v!r}")
    rows = [_vector(r) for r in v]
    if len({len(r) for r in rows}) > 1:
        raise ValueError("rows have different lengths")
    return rows


def _flag(v):
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _choice(options):
    def check(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return check


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text into a :class:`RunConfig`.

    Raises:
        ConfigParseError: with the line and column of the problem.
    """
    r = _Reader(parse_sections(text, source), source)
    kind = r.get("model", "kind", _choice(("unicycle", "linear")), required=True)
    delays = r.get("model", "delays", _vector, required=True)
    try:
        if kind == "unicycle":
            if len(delays) != 2:
                raise r.error("model", "delays", "unicycle needs two delays")
            model = make_unicycle(*delays, allow_reversed=r.get("model", "allow_reversed", _flag, False))
        else:
            A = r.get("model", "A", _matrix, required=True)
            b = r.get("model", "b", _matrix, required=True)
            k = r.get("model", "k", _matrix, required=True)
            name = r.get("scenario", "name", str, "linear")
            model = make_linear(A, b, k, delays, name=name)
    except ConfigParseError:
        raise
    except ConfigurationError as exc:
        raise r.error("model", "delays", str(exc)) from None
    x0 = r.get("scenario", "x0", _vector, required=True)
    if len(x0) != model.n:
        raise r.error("scenario", "x0", f"x0 must have {model.n} entries")
    histories = r.get("scenario", "histories", _vector, [0.0] * model.m)
    if len(histories) != model.m:
        raise r.error("scenario", "histories", f"need one constant history per channel ({model.m})")
    scenario = Scenario(
        model=model,
        x0=x0,
        controller=r.get("scenario", "controller", _choice(CONTROLLERS), "predictor_feedback"),
        histories=histories,
        dt=r.get("scenario", "dt", _number, 1e-3),
        horizon=r.get("scenario", "horizon", _number, 40.0),
        record_predictors=r.get("scenario", "record_predictors", _flag, False),
        predictor=r.get("scenario", "predictor", _choice(PREDICTORS), "generic"),
        name=r.get("scenario", "name", str, "custom"),
    )
    try:
        scenario.validate()
    except ConfigurationError as exc:
        raise r.error("scenario", "dt", str(exc)) from None
    return RunConfig(
        name=scenario.name,
        scenario=scenario,
        description=r.get("scenario", "description", str, ""),
        verify=r.get("run", "verify", _flag, False),
        expect_divergence=r.get("run", "expect_divergence", _flag, False),
        source=source,
    )


def load_config(path) -> RunConfig:
    path = pathlib.Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


BUILTINS = {
    "unicycle-compensated": """
[scenario]
name = unicycle-compensated
description = unicycle, D = (0.5, 1), predictor feedback; converges and matches the delay-free loop after t = 1
controller = predictor_feedback
x0 = [0.5, 0.5, 0.5]
histories = [0, 0]
dt = 1e-3
horizon = 40
record_predictors = true

[model]
kind = unicycle
delays = [0.5, 1.0]
""",
    "unicycle-uncompensated": """
[scenario]
name = unicycle-uncompensated
description = unicycle, D = (0.5, 1), nominal law fed through the delays; unstable
controller = nominal_uncompensated
x0 = [0.5, 0.5, 0.5]
histories = [0, 0]
dt = 1e-3
horizon = 40

[model]
kind = unicycle
delays = [0.5, 1.0]
""",
    "unicycle-nominal-delayfree": """
[scenario]
name = unicycle-nominal-delayfree
description = unicycle under the time-varying law with no delays (reference loop)
controller = nominal_delay_free
x0 = [0.5, 0.5, 0.5]
dt = 1e-3
horizon = 40

[model]
kind = unicycle
delays = [0.5, 1.0]
""",
    "linear-demo": """
[scenario]
name = linear-demo
description = double integrator, two inputs, D = (0.25, 0.5), predictor feedback; decays like exp(-t)
controller = predictor_feedback
x0 = [1, 0]
histories = [0, 0]
dt = 1e-3
horizon = 40
record_predictors = true

[model]
kind = linear
A = [[0, 1], [0, 0]]
b = [[0, 1], [1, 0]]
k = [[-1, -1], [-1, 0]]
delays = [0.25, 0.5]

[run]
verify = true
""",
    "footnote-escape": """
[scenario]
name = footnote-escape
description = unicycle with the turning delay longer than the speed delay; the predictor escapes in finite time
controller = predictor_feedback
x0 = [-12, -1, 0]
histories = [0, 0]
dt = 1e-3
horizon = 1

[model]
kind = unicycle
delays = [1.0, 0.01]
allow_reversed = true
""",
}


def user_scenario_dir(explicit=None):
    if explicit:
        return pathlib.Path(explicit)
    env = os.environ.get(SCENARIO_DIR_ENV)
    return pathlib.Path(env) if env else None


def _user_files(directory):
    if directory is None or not directory.is_dir():
        return {}
    return {p.stem: p for p in sorted(directory.glob("*" + CONFIG_SUFFIX))}


def list_scenarios(user_dir=None) -> list[tuple[str, str, str]]:
    """``(name, description, origin)`` for builtins then user scenarios.

    User scenarios are the ``*.cfg`` files of ``user_dir`` (or of the
    directory named by ``LAGSTEP_SCENARIO_DIR``); a user file named like a
    builtin shadows it.
    """
    entries = {}
    for name, text in BUILTINS.items():
        entries[name] = (name, parse_config(text, source=name).description, "builtin")
    for name, path in _user_files(user_scenario_dir(user_dir)).items():
        try:
            desc = load_config(path).description
        except ConfigurationError as exc:
            desc = f"(invalid: {exc})"
        entries[name] = (name, desc, str(path))
    return list(entries.values())


def resolve(name: str, user_dir=None) -> RunConfig:
    """Builtin or user scenario by name."""
    user = _user_files(user_scenario_dir(user_dir))
    if name in user:
        return load_config(user[name])
    if name in BUILTINS:
        return parse_config(BUILTINS[name], source=name)
    known = sorted(set(BUILTINS) | set(user))
    raise ConfigurationError(f"unknown scenario {name!r}; known: {', '.join(known)}")
