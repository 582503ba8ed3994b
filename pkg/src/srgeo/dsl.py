"""Manifold specification format: parsing, canonical emission and the builtin library.

A spec is line oriented::

    name = heisenberg1
    dim = 3
    chart_box = -3,-3,-3 : 3,3,3
    volume_density = 1
    metric = frame-orthonormal
    X1 = d1 - 0.5*x2*d3
    X2 = d2 + 0.5*x1*d3

Field expressions are polynomial: numbers, variables ``x<k>``, basis vectors
``d<k>``, ``+ - *``, parentheses and integer powers ``^``.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Sequence

from .frame_core import MetricExtension, frame_scaled_metric
from .poly import Exponent, Polynomial, PolyVectorField

METRIC_MODES = ("frame-orthonormal", "frame-scaled")


class SpecError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message, self.line, self.col = message, line, col
        where = f"line {line}, column {col}: " if line else ""
        super().__init__(where + message)


# -- expressions --------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*^()/]))")


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            c = col0 + pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise SpecError(f"unexpected character {text[pos:].lstrip()[0]!r}", line, c)
        kind = m.lastgroup
        out.append(_Tok(kind, m.group(kind), col0 + m.start(kind)))
        pos = m.end()
    out.append(_Tok("end", "", col0 + len(text)))
    return out


class _Value:
    """A polynomial scalar or a polynomial combination of basis vectors."""

    def __init__(self, dim: int, scalar: Polynomial | None = None,
                 vector: dict[int, Polynomial] | None = None):
        self.dim = dim
        self.scalar = scalar
        self.vector = vector

    @property
    def is_vector(self) -> bool:
        return self.vector is not None


class _Parser:
    def __init__(self, text: str, dim: int, line: int, col0: int):
        self.toks = _tokenize(text, line, col0)
        self.i = 0
        self.dim = dim
        self.line = line

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise SpecError(msg, self.line, tok.col)

    def parse(self) -> _Value:
        v = self.expr()
        if self.peek().kind != "end":
            self.fail(f"unexpected {self.peek().text!r}")
        return v

    def expr(self) -> _Value:
        v = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take()
            rhs = self.term()
            v = self.combine(v, rhs, 1.0 if op.text == "+" else -1.0, op)
        return v

    def combine(self, a: _Value, b: _Value, sign: float, tok: _Tok) -> _Value:
        if a.is_vector != b.is_vector:
            self.fail("cannot add a scalar to a vector field", tok)
        if not a.is_vector:
            return _Value(self.dim, a.scalar + b.scalar * sign)
        out = dict(a.vector)
        for k, p in b.vector.items():
            out[k] = out.get(k, Polynomial.zero(self.dim)) + p * sign
        return _Value(self.dim, vector=out)

    def term(self) -> _Value:
        v = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take()
            if op.text == "/":
                self.fail("division is not allowed: expressions must be polynomial", op)
            rhs = self.unary()
            v = self.multiply(v, rhs, op)
        return v

    def multiply(self, a: _Value, b: _Value, tok: _Tok) -> _Value:
        if a.is_vector and b.is_vector:
            self.fail("product of two basis vectors is not a vector field", tok)
        if a.is_vector or b.is_vector:
            vec, sc = (a, b) if a.is_vector else (b, a)
            return _Value(self.dim, vector={k: p * sc.scalar for k, p in vec.vector.items()})
        return _Value(self.dim, a.scalar * b.scalar)

    def unary(self) -> _Value:
        if self.peek().text == "-":
            tok = self.take()
            v = self.unary()
            return self.multiply(_Value(self.dim, Polynomial.constant(self.dim, -1.0)), v, tok)
        if self.peek().text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> _Value:
        v = self.atom()
        while self.peek().text == "^":
            op = self.take()
            t = self.take()
            if t.kind != "num" or not re.fullmatch(r"\d+", t.text):
                self.fail("exponent must be a nonnegative integer", t)
            if v.is_vector:
                self.fail("cannot raise a vector field to a power", op)
            v = _Value(self.dim, v.scalar ** int(t.text))
        return v

    def atom(self) -> _Value:
        t = self.take()
        if t.kind == "num":
            return _Value(self.dim, Polynomial.constant(self.dim, float(t.text)))
        if t.kind == "name":
            m = re.fullmatch(r"([xd])(\d+)", t.text)
            if not m:
                self.fail(f"unknown variable {t.text!r}", t)
            k = int(m.group(2))
            if not 1 <= k <= self.dim:
                self.fail(f"unknown variable {t.text!r} (dimension {self.dim})", t)
            if m.group(1) == "x":
                return _Value(self.dim, Polynomial.variable(self.dim, k - 1))
            return _Value(self.dim, vector={k - 1: Polynomial.constant(self.dim, 1.0)})
        if t.text == "(":
            v = self.expr()
            if self.take().text != ")":
                self.fail("expected ')'", self.toks[self.i - 1])
            return v
        self.fail("expected a number, variable, basis vector or '('" if t.kind != "end"
                  else "unexpected end of expression", t)


def parse_field(text: str, dim: int, line: int = 0, col: int = 1) -> PolyVectorField:
    v = _Parser(text, dim, line, col).parse()
    if not v.is_vector:
        raise SpecError("field expression has no basis vector d<k>", line, col)
    return PolyVectorField([v.vector.get(k, Polynomial.zero(dim)) for k in range(dim)])


def parse_scalar(text: str, dim: int, line: int = 0, col: int = 1) -> Polynomial:
    v = _Parser(text, dim, line, col).parse()
    if v.is_vector:
        raise SpecError("expected a scalar polynomial, found a vector field", line, col)
    return v.scalar


def _fmt_num(c: float) -> str:
    return repr(float(c)) if c != int(c) or abs(c) >= 1e15 else str(int(c))


def _fmt_mono(e: Exponent) -> str:
    parts = []
    for k, a in enumerate(e):
        if a == 1:
            parts.append(f"x{k + 1}")
        elif a > 1:
            parts.append(f"x{k + 1}^{a}")
    return "*".join(parts)


def format_polynomial(p: Polynomial, suffix: str = "") -> list[tuple[float, str]]:
    """Signed terms (coefficient, 'mono*suffix') in a canonical order."""
    out = []
    for e in sorted(p.terms, key=lambda e: (sum(e), tuple(-a for a in e))):
        c = p.terms[e]
        if c == 0.0:
            continue
        body = "*".join(s for s in (_fmt_mono(e), suffix) if s)
        out.append((c, body))
    return out


def _join(terms: list[tuple[float, str]]) -> str:
    if not terms:
        return "0"
    pieces = []
    for i, (c, body) in enumerate(terms):
        mag = abs(c)
        if body:
            txt = body if mag == 1.0 else f"{_fmt_num(mag)}*{body}"
        else:
            txt = _fmt_num(mag)
        if i == 0:
            pieces.append(("-" if c < 0 else "") + txt)
        else:
            pieces.append((" - " if c < 0 else " + ") + txt)
    return "".join(pieces)


def format_field(f: PolyVectorField) -> str:
    terms = []
    for k, p in enumerate(f.coeffs):
        terms += format_polynomial(p, f"d{k + 1}")
    return _join(terms)


def format_scalar(p: Polynomial) -> str:
    return _join(format_polynomial(p))


# -- manifold specs -----------------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldSpec:
    name: str
    dim: int
    horizontal: tuple[PolyVectorField, ...]
    chart_box: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    volume_density: Polynomial | None = None
    metric: str = "frame-orthonormal"
    metric_scales: tuple[float, ...] = ()
    r_max: float | None = None

    def __post_init__(self):
        if not self.horizontal:
            raise SpecError("at least one horizontal field")
        if self.volume_density is None:
            object.__setattr__(self, "volume_density", Polynomial.constant(self.dim, 1.0))
        elif self.volume_density.nvars != self.dim:
            raise SpecError("dimension mismatch between volume_density and dim")
        if any(f.dim != self.dim for f in self.horizontal):
            raise SpecError("dimension mismatch between fields and dim")
        if self.metric not in METRIC_MODES:
            raise SpecError(f"unknown metric mode {self.metric!r}")
        if self.metric == "frame-scaled" and len(self.metric_scales) != self.dim:
            raise SpecError(f"frame-scaled metric needs {self.dim} scales")
        if self.chart_box is not None:
            lo, hi = self.chart_box
            if len(lo) != self.dim or len(hi) != self.dim:
                raise SpecError("chart_box has the wrong dimension")
            if any(a >= b for a, b in zip(lo, hi)):
                raise SpecError("chart_box lower corner must lie below the upper corner")

    @property
    def density(self) -> Polynomial:
        return self.volume_density

    def metric_extension(self, frame_fields: Sequence[PolyVectorField] | None = None) -> MetricExtension:
        if self.metric == "frame-orthonormal":
            return MetricExtension()
        if frame_fields is None:
            raise ValueError("frame-scaled metric needs the privileged frame fields")
        return frame_scaled_metric(frame_fields, self.metric_scales)

    def emit(self) -> str:
        return emit_spec(self)

    def spec_hash(self) -> str:
        return hashlib.sha256(emit_spec(self).encode()).hexdigest()[:16]

    def as_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "horizontal": [format_field(f) for f in self.horizontal],
            "chart_box": None if self.chart_box is None else [list(self.chart_box[0]), list(self.chart_box[1])],
            "volume_density": format_scalar(self.density),
            "metric": self.metric if self.metric == "frame-orthonormal"
            else f"frame-scaled {','.join(_fmt_num(s) for s in self.metric_scales)}",
            "r_max": self.r_max,
        }


def _parse_floats(text: str, line: int, col: int) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise SpecError(f"expected comma-separated numbers, found {text!r}", line, col) from None


def _parse_box(text: str, line: int, col: int):
    if ":" not in text:
        raise SpecError("chart_box must read 'lo1,...,lon : hi1,...,hin'", line, col)
    lo, hi = text.split(":", 1)
    return _parse_floats(lo.strip(), line, col), _parse_floats(hi.strip(), line, col)


def _parse_metric(text: str, line: int, col: int):
    parts = text.split(None, 1)
    mode = parts[0] if parts else ""
    if mode == "frame-orthonormal" and len(parts) == 1:
        return mode, ()
    if mode == "frame-scaled" and len(parts) == 2:
        return mode, _parse_floats(parts[1].replace(" ", ""), line, col)
    raise SpecError(f"unknown metric mode {text!r}", line, col)


def parse_manifold_spec(text: str) -> ManifoldSpec:
    """Parse the line format; a document starting with '{' is read as the JSON mirror."""
    if text.lstrip().startswith("{"):
        return spec_from_json(json.loads(text))
    headers: dict[str, tuple[str, int, int]] = {}
    fields: dict[int, tuple[str, int, int]] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            raise SpecError("expected 'key = value'", ln, len(body) - len(body.lstrip()) + 1)
        key, val = body.split("=", 1)
        k = key.strip()
        vcol = len(key) + 2 + len(val) - len(val.lstrip())
        entry = (val.strip(), ln, vcol)
        m = re.fullmatch(r"X(\d+)", k)
        if m:
            idx = int(m.group(1))
            if idx in fields:
                raise SpecError(f"field X{idx} defined twice", ln, 1)
            fields[idx] = entry
        elif k in ("name", "dim", "chart_box", "volume_density", "metric", "r_max"):
            if k in headers:
                raise SpecError(f"header {k!r} given twice", ln, 1)
            headers[k] = entry
        else:
            raise SpecError(f"unknown key {k!r}", ln, 1)
    if "dim" not in headers:
        raise SpecError("missing header 'dim'")
    dtxt, dl, dc = headers["dim"]
    if not re.fullmatch(r"\d+", dtxt) or int(dtxt) < 1:
        raise SpecError(f"dim must be a positive integer, found {dtxt!r}", dl, dc)
    dim = int(dtxt)
    if not fields:
        raise SpecError("at least one horizontal field")
    order = sorted(fields)
    if order != list(range(1, len(order) + 1)):
        raise SpecError(f"fields must be numbered X1..X{len(order)} without gaps")
    horizontal = tuple(parse_field(*fields[i][:1], dim, fields[i][1], fields[i][2]) for i in order)
    box = None
    if "chart_box" in headers:
        box = _parse_box(*headers["chart_box"])
    density = None
    if "volume_density" in headers:
        density = parse_scalar(headers["volume_density"][0], dim, *headers["volume_density"][1:])
    metric, scales = "frame-orthonormal", ()
    if "metric" in headers:
        metric, scales = _parse_metric(*headers["metric"])
    r_max = None
    if "r_max" in headers:
        r_max = _parse_floats(*headers["r_max"])[0]
    name = headers.get("name", ("unnamed",))[0]
    return ManifoldSpec(name, dim, horizontal, box, density, metric, scales, r_max)


def spec_from_json(obj: dict) -> ManifoldSpec:
    try:
        dim = int(obj["dim"])
        exprs = obj["horizontal"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"JSON spec needs 'dim' and 'horizontal' ({exc})") from None
    if not exprs:
        raise SpecError("at least one horizontal field")
    horizontal = tuple(parse_field(e, dim, i + 1) for i, e in enumerate(exprs))
    box = obj.get("chart_box")
    box = None if box is None else (tuple(map(float, box[0])), tuple(map(float, box[1])))
    dens = obj.get("volume_density")
    density = None if dens is None else parse_scalar(str(dens), dim)
    metric, scales = _parse_metric(obj.get("metric", "frame-orthonormal"), 0, 0)
    r_max = obj.get("r_max")
    return ManifoldSpec(str(obj.get("name", "unnamed")), dim, horizontal, box, density, metric,
                        scales, None if r_max is None else float(r_max))


def emit_spec(spec: ManifoldSpec) -> str:
    lines = [f"name = {spec.name}", f"dim = {spec.dim}"]
    if spec.chart_box is not None:
        lo, hi = spec.chart_box
        lines.append("chart_box = " + ",".join(map(_fmt_num, lo)) + " : " + ",".join(map(_fmt_num, hi)))
    lines.append(f"volume_density = {format_scalar(spec.density)}")
    lines.append(f"metric = {spec.as_json()['metric']}")
    if spec.r_max is not None:
        lines.append(f"r_max = {_fmt_num(spec.r_max)}")
    for i, f in enumerate(spec.horizontal, start=1):
        lines.append(f"X{i} = {format_field(f)}")
    return "\n".join(lines) + "\n"


# -- builtins -------------------------------------------------------------------------------

_BUILTIN_TEXT = {
    "heisenberg1": """\
name = heisenberg1
dim = 3
chart_box = -3,-3,-3 : 3,3,3
X1 = d1 - 0.5*x2*d3
X2 = d2 + 0.5*x1*d3
""",
    "engel": """\
name = engel
dim = 4
chart_box = -3,-3,-3,-3 : 3,3,3,3
X1 = d1
X2 = d2 + x1*d3 + x3*d4
""",
    # [X1, X2] = (1 + 2 x1) d3 degenerates at x1 = -1/2, which the chart avoids
    "perturbed_heisenberg": """\
name = perturbed_heisenberg
dim = 3
chart_box = -0.45,-3,-3 : 3,3,3
X1 = d1 - 0.5*x2*d3
X2 = d2 + (0.5*x1 + x1^2)*d3
""",
}

BUILTIN_NAMES = ("euclidean(n)",) + tuple(_BUILTIN_TEXT)


def builtin(name: str) -> ManifoldSpec:
    m = re.fullmatch(r"euclidean\(?(\d+)\)?", name)
    if m:
        n = int(m.group(1))
        if n < 1:
            raise SpecError("euclidean dimension must be positive")
        lines = [f"name = euclidean{n}", f"dim = {n}",
                 "chart_box = " + ",".join(["-3"] * n) + " : " + ",".join(["3"] * n)]
        lines += [f"X{k} = d{k}" for k in range(1, n + 1)]
        return parse_manifold_spec("\n".join(lines) + "\n")
    if name not in _BUILTIN_TEXT:
        raise SpecError(f"unknown builtin manifold {name!r}; known: {', '.join(BUILTIN_NAMES)}")
    return parse_manifold_spec(_BUILTIN_TEXT[name])


def load_manifold(ref: str) -> ManifoldSpec:
    """A builtin name or a path to a spec file (line format or JSON)."""
    import os

    if os.path.exists(ref):
        with open(ref, encoding="utf-8") as fh:
            return parse_manifold_spec(fh.read())
    return builtin(ref)
