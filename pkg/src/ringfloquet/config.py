"""Run configuration: a flat, sectioned ``key = value`` text format.

Grammar::

    file     := (blank | comment | header | entry)*
    header   := "[" name "]"            name in model, kam, sieve, evolution, zoo
    entry    := key "=" value           value: number, arithmetic, list, word
    comment  := "#" ...                 (also allowed after a value)

Numbers may be written as arithmetic in ``pi``, ``e`` and ``sqrt``
(``omega = pi**2/3``); lists are comma separated. Entries before the first
header belong to ``[model]``. Every key has a default, so an empty file is a
valid configuration.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, fields, replace

from .errors import ParseError, ValidationError

SECTIONS = ("model", "kam", "sieve", "evolution", "zoo")


@dataclass(frozen=True)
class ModelSection:
    L: float = math.pi
    omega: float = 1.0
    g: float = 0.05
    w_cos: tuple = ()
    w_sin: tuple = ()
    N_bands: int = 32
    N_time: int = 256
    tol_eig: float = 1e-10
    tol_unitary: float = 1e-10
    n_x: int = 1024
    N_f: int = 8
    guard: int = 4

    def build(self):
        from .cell import ModelConfig

        return ModelConfig(**{f.name: getattr(self, f.name) for f in fields(self)})


@dataclass(frozen=True)
class KamSection:
    gamma: float = None  # None: sqrt of the largest off-diagonal entry
    mu: float = 2.0
    sigma: float = 3.0
    max_steps: int = 400
    tol_offdiag: float = 1e-8
    method: str = "expm"

    def build(self):
        from .kam import KamSchedule

        return KamSchedule(self.gamma, self.mu, self.sigma, self.max_steps, self.tol_offdiag, self.method)


@dataclass(frozen=True)
class SieveSection:
    omega_lo: float = 0.7
    omega_hi: float = 1.4
    gamma: float = 1e-3
    sigma: float = 3.0
    mu: float = 2.0
    n_level: int = 1
    n_max: int = 40
    k_max: int = None
    levels: str = "surrogate"  # surrogate | means
    test_omega: float = None


@dataclass(frozen=True)
class EvolutionSection:
    n_periods: int = 10
    steps_per_period: int = None
    initial_band: int = 0
    record_every: int = 1
    tail_band: int = None  # tail threshold at <E_tail_band>; default N_bands - 5


@dataclass(frozen=True)
class ZooSection:
    alpha: float = 1.0
    c: float = 2.0
    g: float = 0.02
    tau_syn: float = 3.0
    seed: int = 0
    n_levels: int = 16
    n_periods: int = 1000
    alphas: tuple = (1.0,)
    omegas: tuple = ()  # empty: one sieve-passing frequency per alpha
    window_lo: float = 0.7
    window_hi: float = 1.4


SECTION_TYPES = {
    "model": ModelSection,
    "kam": KamSection,
    "sieve": SieveSection,
    "evolution": EvolutionSection,
    "zoo": ZooSection,
}

_CHOICES = {("kam", "method"): ("expm", "series", "both"), ("sieve", "levels"): ("surrogate", "means")}
_TUPLE_KEYS = {("model", "w_cos"), ("model", "w_sin"), ("zoo", "alphas"), ("zoo", "omegas")}
_INT_KEYS = {
    ("model", "N_bands"), ("model", "N_time"), ("model", "n_x"), ("model", "N_f"), ("model", "guard"),
    ("kam", "max_steps"), ("sieve", "n_level"), ("sieve", "n_max"), ("sieve", "k_max"),
    ("evolution", "n_periods"), ("evolution", "steps_per_period"), ("evolution", "initial_band"),
    ("evolution", "record_every"), ("evolution", "tail_band"),
    ("zoo", "seed"), ("zoo", "n_levels"), ("zoo", "n_periods"),
}
_OPTIONAL_KEYS = {("kam", "gamma"), ("sieve", "k_max"), ("sieve", "test_omega"),
                  ("evolution", "steps_per_period"), ("evolution", "tail_band")}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    kam: KamSection = field(default_factory=KamSection)
    sieve: SieveSection = field(default_factory=SieveSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    zoo: ZooSection = field(default_factory=ZooSection)

    def validate(self):
        self.model.build()  # ModelConfig checks its own invariants
        k = self.kam
        if k.gamma is not None and k.gamma <= 0:
            raise ValidationError("kam.gamma > 0 violated")
        if k.sigma <= 0 or k.mu < 0 or k.max_steps < 1 or k.tol_offdiag <= 0:
            raise ValidationError("kam: sigma > 0, mu >= 0, max_steps >= 1, tol_offdiag > 0 required")
        s = self.sieve
        if not 0 < s.omega_lo < s.omega_hi:
            raise ValidationError("sieve: 0 < omega_lo < omega_hi violated")
        if s.gamma < 0 or s.sigma <= 0 or s.n_level < 1 or s.n_max < 1:
            raise ValidationError("sieve: gamma >= 0, sigma > 0, n_level >= 1, n_max >= 1 required")
        e = self.evolution
        if e.n_periods < 0 or e.record_every < 1 or not 0 <= e.initial_band < self.model.N_bands:
            raise ValidationError("evolution: n_periods >= 0, record_every >= 1, 0 <= initial_band < N_bands")
        if e.steps_per_period is not None and e.steps_per_period < 8 * self.model.N_bands:
            raise ValidationError("evolution: steps_per_period >= 8 N_bands violated")
        z = self.zoo
        if z.c <= 0 or z.g < 0 or z.n_levels < 6 or z.n_periods < 1 or not 0 < z.window_lo < z.window_hi:
            raise ValidationError("zoo: c > 0, g >= 0, n_levels >= 6, n_periods >= 1, valid window required")
        return self

    def with_overrides(self, pairs):
        """Apply ``section.key=value`` (or unambiguous ``key=value``) overrides."""
        cfg = self
        for raw in pairs:
            if "=" not in raw:
                raise ParseError(f"override {raw!r} is not of the form key=value")
            key, value = (part.strip() for part in raw.split("=", 1))
            if "." in key:
                section, key = key.split(".", 1)
            else:
                owners = [s for s in SECTIONS if key in _field_names(s)]
                if len(owners) != 1:
                    raise ParseError(f"override key {key!r} is {'ambiguous' if owners else 'unknown'}; "
                                     "use section.key")
                section = owners[0]
            if section not in SECTIONS or key not in _field_names(section):
                raise ParseError(f"unknown override key {section}.{key}")
            sec = getattr(cfg, section)
            cfg = replace(cfg, **{section: replace(sec, **{key: _convert(section, key, value, None)})})
        return cfg.validate()


def _field_names(section):
    return {f.name for f in fields(SECTION_TYPES[section])}


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}


def _eval_number(text, line):
    """Arithmetic over numbers, pi, e and sqrt(); nothing else is evaluated."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError:
        raise ParseError(f"cannot read number {text!r}", line) from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id == "sqrt"
                and len(node.args) == 1 and not node.keywords):
            return math.sqrt(ev(node.args[0]))
        raise ParseError(f"unsupported expression {text!r}", line)

    try:
        return ev(tree)
    except (ArithmeticError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"cannot evaluate {text!r}: {exc}", line) from None


def _convert(section, key, text, line):
    text = text.strip()
    if (section, key) in _OPTIONAL_KEYS and text.lower() in ("none", "auto", ""):
        return None
    if (section, key) in _CHOICES:
        if text not in _CHOICES[(section, key)]:
            raise ValidationError(f"{section}.{key} must be one of {_CHOICES[(section, key)]}")
        return text
    if (section, key) in _TUPLE_KEYS:
        if not text:
            return ()
        return tuple(float(_eval_number(p.strip(), line)) for p in text.split(","))
    value = _eval_number(text, line)
    if (section, key) in _INT_KEYS:
        if float(value) != int(value):
            raise ValidationError(f"{section}.{key} must be an integer, got {text!r}")
        return int(value)
    return float(value)


def parse_config(text, overrides=()):
    """Parse configuration text into a validated RunConfig."""
    values = {s: {} for s in SECTIONS}
    section = "model"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _field_names(section):
            raise ParseError(f"unknown key {key!r} in [{section}]", lineno)
        if key in values[section]:
            raise ParseError(f"duplicate key {key!r} in [{section}]", lineno)
        values[section][key] = _convert(section, key, value, lineno)
    cfg = RunConfig(**{s: SECTION_TYPES[s](**values[s]) for s in SECTIONS})
    cfg = cfg.validate()
    return cfg.with_overrides(overrides) if overrides else cfg


def format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        raise TypeError("booleans are not part of the grammar")
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, str):
        return v
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def serialize_config(cfg):
    """Full text with every default materialised; parse(serialize(c)) == c."""
    out = []
    for s in SECTIONS:
        sec = getattr(cfg, s)
        out.append(f"[{s}]")
        for f in fields(sec):
            out.append(f"{f.name} = {format_value(getattr(sec, f.name))}")
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg):
    return {s: {f.name: (list(v) if isinstance(v := getattr(getattr(cfg, s), f.name), tuple) else v)
                for f in fields(getattr(cfg, s))} for s in SECTIONS}
