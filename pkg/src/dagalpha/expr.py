"""Alpha expression DSL: AST types, parser, canonical renderer, linter, distance.

Expressions use prefix call syntax, e.g. ``Div(Sub($open, $close), $open)``.
Features are written ``$name``, rolling windows are bare integers and
arithmetic constants are decimal floats.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Optional, Union

import numpy as np

FEATURES = ("open", "high", "low", "close", "vwap", "volume")

UNARY_OPS = ("Abs", "Sign", "Log", "SLog1p", "Inv", "Rank")
BINARY_OPS = ("Add", "Sub", "Mul", "Div", "Pow", "Greater", "Less", "GetGreater", "GetLess")
ROLLING1_OPS = (
    "Ref", "TsMean", "TsSum", "TsStd", "TsVar", "TsMin", "TsMax", "TsMed", "TsMad",
    "TsMinMaxDiff", "TsMaxDiff", "TsMinDiff", "TsIr", "TsSkew", "TsKurt", "TsRank",
    "TsDelta", "TsRatio", "TsPctChange", "TsWMA", "TsEMA",
)
ROLLING2_OPS = ("TsCov", "TsCorr")

# Spellings that appear in the operator table but differ from the prompt list.
OP_ALIASES = {"Slog1p": "SLog1p", "TsDiv": "TsRatio"}

OP_KIND = {
    **{op: "unary" for op in UNARY_OPS},
    **{op: "binary" for op in BINARY_OPS},
    **{op: "rolling1" for op in ROLLING1_OPS},
    **{op: "rolling2" for op in ROLLING2_OPS},
}

# Operators the generation prompts advertise (Inv is engine-only).
PROMPT_OPS = tuple(op for op in OP_KIND if op != "Inv")

DEFAULT_FLOAT_WHITELIST = frozenset({0.0001, 0.01, 0.0, 1.0, 2.0})
DEFAULT_MAX_LEN = 40


class ExprError(ValueError):
    pass


class ExprParseError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class Feature:
    name: str

    def __post_init__(self):
        if self.name not in FEATURES:
            raise ExprError(f"unknown feature {self.name!r}")


@dataclass(frozen=True)
class IntConst:
    value: int

    def __post_init__(self):
        if self.value < 1:
            raise ExprError(f"integer constant must be >= 1, got {self.value}")


@dataclass(frozen=True)
class FloatConst:
    value: float


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Rolling1:
    op: str
    child: "Expr"
    window: IntConst


@dataclass(frozen=True)
class Rolling2:
    op: str
    left: "Expr"
    right: "Expr"
    window: IntConst


Expr = Union[Feature, IntConst, FloatConst, Unary, Binary, Rolling1, Rolling2]
Const = (IntConst, FloatConst)


def children(e: Expr) -> tuple:
    """Operand subtrees of ``e`` (windows are not operands)."""
    if isinstance(e, Unary):
        return (e.child,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Rolling1):
        return (e.child,)
    if isinstance(e, Rolling2):
        return (e.left, e.right)
    return ()


def _format_float(v: float) -> str:
    return np.format_float_positional(v, unique=True, trim="0")


def render(e: Expr) -> str:
    if isinstance(e, Feature):
        return "$" + e.name
    if isinstance(e, IntConst):
        return str(e.value)
    if isinstance(e, FloatConst):
        return _format_float(e.value)
    if isinstance(e, Unary):
        return f"{e.op}({render(e.child)})"
    if isinstance(e, Binary):
        return f"{e.op}({render(e.left)}, {render(e.right)})"
    if isinstance(e, Rolling1):
        return f"{e.op}({render(e.child)}, {e.window.value})"
    if isinstance(e, Rolling2):
        return f"{e.op}({render(e.left)}, {render(e.right)}, {e.window.value})"
    raise TypeError(f"not an expression: {e!r}")


def tokens(e: Expr) -> tuple:
    """Pre-order node labels; one token per AST node, so len == node_count."""
    out: list[str] = []

    def walk(n):
        if isinstance(n, (Feature, IntConst, FloatConst)):
            out.append(render(n))
            return
        out.append(n.op)
        for c in children(n):
            walk(c)
        if isinstance(n, (Rolling1, Rolling2)):
            out.append(str(n.window.value))

    walk(e)
    return tuple(out)


def node_count(e: Expr) -> int:
    if isinstance(e, (Rolling1, Rolling2)):
        return 2 + sum(node_count(c) for c in children(e))
    return 1 + sum(node_count(c) for c in children(e))


def depth(e: Expr) -> int:
    cs = children(e)
    return 1 + max((depth(c) for c in cs), default=0)


def walk(e: Expr, path: tuple = ()) -> Iterator[tuple[tuple, Expr]]:
    """Yield ``(path, node)`` pairs in pre-order, windows included."""
    yield path, e
    cs = children(e)
    for i, c in enumerate(cs):
        yield from walk(c, path + (i,))
    if isinstance(e, (Rolling1, Rolling2)):
        yield path + (len(cs),), e.window


def replace_features(e: Expr, mapping: dict) -> Expr:
    if isinstance(e, Feature):
        return Feature(mapping.get(e.name, e.name))
    if isinstance(e, Unary):
        return Unary(e.op, replace_features(e.child, mapping))
    if isinstance(e, Binary):
        return Binary(e.op, replace_features(e.left, mapping), replace_features(e.right, mapping))
    if isinstance(e, Rolling1):
        return Rolling1(e.op, replace_features(e.child, mapping), e.window)
    if isinstance(e, Rolling2):
        return Rolling2(e.op, replace_features(e.left, mapping), replace_features(e.right, mapping), e.window)
    return e


def replace_windows(e: Expr, window: int) -> Expr:
    w = IntConst(window)
    if isinstance(e, Unary):
        return Unary(e.op, replace_windows(e.child, window))
    if isinstance(e, Binary):
        return Binary(e.op, replace_windows(e.left, window), replace_windows(e.right, window))
    if isinstance(e, Rolling1):
        return Rolling1(e.op, replace_windows(e.child, window), e.window if e.op == "Ref" else w)
    if isinstance(e, Rolling2):
        return Rolling2(e.op, replace_windows(e.left, window), replace_windows(e.right, window), w)
    return e


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<feature>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<float>-?\d+\.\d+)
  | (?P<int>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("eof", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind: str):
        tok = self.toks[self.i]
        if tok[0] != kind:
            shown = tok[1] or "end of input"
            raise ExprParseError(f"expected {kind}, found {shown!r}", tok[2])
        self.i += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise ExprParseError(f"trailing input {tok[1]!r}", tok[2])
        return e

    def expr(self) -> Expr:
        kind, text, off = self.peek()
        if kind == "feature":
            self.i += 1
            name = text[1:]
            if name not in FEATURES:
                raise ExprParseError(f"unknown feature {text!r}", off)
            return Feature(name)
        if kind == "float":
            self.i += 1
            return FloatConst(float(text))
        if kind == "int":
            self.i += 1
            value = int(text)
            if value < 1:
                raise ExprParseError(f"integer constant must be >= 1, got {value}", off)
            return IntConst(value)
        if kind == "ident":
            return self.call()
        raise ExprParseError(f"unexpected {text or 'end of input'!r}", off)

    def call(self) -> Expr:
        _, name, off = self.take("ident")
        op = OP_ALIASES.get(name, name)
        if op not in OP_KIND:
            raise ExprParseError(f"unknown operator {name!r}", off)
        self.take("lparen")
        args: list[tuple[Expr, str, int]] = []
        if self.peek()[0] != "rparen":
            while True:
                tok = self.peek()
                args.append((self.expr(), tok[0], tok[2]))
                if self.peek()[0] == "comma":
                    self.i += 1
                    continue
                break
        self.take("rparen")
        kind = OP_KIND[op]
        arity = {"unary": 1, "binary": 2, "rolling1": 2, "rolling2": 3}[kind]
        if len(args) != arity:
            raise ExprParseError(f"{op} takes {arity} arguments, got {len(args)}", off)
        exprs = [a[0] for a in args]
        if kind == "unary":
            return Unary(op, exprs[0])
        if kind == "binary":
            if op == "Pow" and not isinstance(exprs[1], Const):
                raise ExprParseError("Pow exponent must be a constant", args[1][2])
            return Binary(op, exprs[0], exprs[1])
        window, wkind, woff = args[-1]
        if wkind != "int":
            raise ExprParseError(f"{op} window must be an integer literal", woff)
        if kind == "rolling1":
            return Rolling1(op, exprs[0], window)
        return Rolling2(op, exprs[0], exprs[1], window)


@lru_cache(maxsize=65536)
def parse(text: str) -> Expr:
    return _Parser(text).parse()


def canonical(text: str) -> str:
    return render(parse(text))


# ---------------------------------------------------------------- linting

@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    path: tuple
    severity: str = "error"


@dataclass
class LintReport:
    violations: list = field(default_factory=list)

    @property
    def errors(self) -> list:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return bool(self.violations)


_PRICE = (1, 0)
_VOLUME = (0, 1)
_NODIM = (0, 0)

_DIMLESS_OUT = {"Rank", "TsRank", "TsCorr", "TsIr", "Sign", "TsPctChange", "TsRatio", "TsSkew", "TsKurt"}
_NEEDS_DIMLESS = {"Log", "SLog1p", "Pow"}
_SAME_DIM = {"Add", "Sub", "GetGreater", "GetLess", "Greater", "Less"}


def _dims(e: Expr, path: tuple, out: list):
    """Return a (price, volume) exponent pair, or None for a free constant."""
    if isinstance(e, Feature):
        return _VOLUME if e.name == "volume" else _PRICE
    if isinstance(e, Const):
        return None
    cs = [_dims(c, path + (i,), out) for i, c in enumerate(children(e))]

    def warn(code, msg):
        out.append(Violation(code, msg, path, "warning"))

    op = e.op
    if op in _NEEDS_DIMLESS:
        if cs[0] not in (None, _NODIM):
            warn("dim-arg", f"{op} applied to a dimensional argument {cs[0]}")
        return _NODIM
    if op in _SAME_DIM:
        a, b = cs
        if a is not None and b is not None and a != b:
            warn("dim-mismatch", f"{op} combines dimensions {a} and {b}")
        if op in ("Greater", "Less"):
            return _NODIM
        return a if a is not None else b
    if op in _DIMLESS_OUT:
        return _NODIM
    if op in ("Mul", "Div", "TsCov"):
        a, b = cs
        if a is None or b is None:
            return a if b is None else (b if op != "Div" else (-b[0], -b[1]))
        if op == "Div":
            return (a[0] - b[0], a[1] - b[1])
        return (a[0] + b[0], a[1] + b[1])
    if op == "Inv":
        return None if cs[0] is None else (-cs[0][0], -cs[0][1])
    if op == "TsVar":
        return None if cs[0] is None else (2 * cs[0][0], 2 * cs[0][1])
    return cs[0]


def lint(expr: Expr, max_len: int = DEFAULT_MAX_LEN,
         float_whitelist: Optional[frozenset] = DEFAULT_FLOAT_WHITELIST,
         check_dims: bool = True) -> LintReport:
    """Check an expression against the generation constraints.

    ``float_whitelist=None`` skips the constant rules (whitelist and
    integer-in-arithmetic), which only apply to generated candidates.
    """
    report = LintReport()
    n = node_count(expr)
    if n > max_len:
        report.violations.append(
            Violation("length", f"{n} nodes exceeds max length {max_len}", ()))

    def visit(e: Expr, path: tuple):
        if isinstance(e, (Rolling1, Rolling2)):
            wpath = path + (len(children(e)),)
            if not isinstance(e.window, IntConst) or isinstance(e.window.value, float):
                report.violations.append(
                    Violation("window-type", f"{e.op} window must be an integer", wpath))
            elif e.window.value < 1:
                report.violations.append(
                    Violation("window-range", f"{e.op} window must be >= 1", wpath))
        if float_whitelist is not None:
            if isinstance(e, FloatConst) and e.value not in float_whitelist:
                report.violations.append(Violation(
                    "float-whitelist", f"constant {render(e)} is not an allowed float", path))
            if isinstance(e, IntConst):
                report.violations.append(Violation(
                    "int-arith", f"integer {e.value} used in an arithmetic position", path))
        for i, c in enumerate(children(e)):
            visit(c, path + (i,))

    visit(expr, ())
    if check_dims:
        dim = _dims(expr, (), report.violations)
        if dim not in (None, _NODIM):
            report.violations.append(
                Violation("dim-root", f"expression has dimension {dim}", (), "warning"))
    return report


# ---------------------------------------------------------------- distance

def levenshtein(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@lru_cache(maxsize=262144)
def _token_distance(ta: tuple, tb: tuple) -> float:
    return levenshtein(ta, tb) / (len(ta) + len(tb))


def syntactic_distance(a: Expr, b: Expr) -> float:
    """Token edit distance normalised by the summed token counts, in [0, 1]."""
    ta, tb = tokens(a), tokens(b)
    if ta > tb:
        ta, tb = tb, ta
    return _token_distance(ta, tb)


# ---------------------------------------------------------------- random trees

def random_expr(rng: random.Random, max_depth: int = 6, *, ops=None,
                floats=(0.0001, 0.01, 0.0, 1.0, 2.0, -0.5, 0.001, 3.25),
                max_window: int = 10, leaf_prob: float = 0.3) -> Expr:
    """Draw a random well-formed tree of depth at most ``max_depth``."""
    ops = list(ops or OP_KIND)

    def leaf():
        if rng.random() < 0.8:
            return Feature(rng.choice(FEATURES))
        return FloatConst(rng.choice(floats))

    def grow(d: int) -> Expr:
        if d <= 1 or rng.random() < leaf_prob:
            return leaf()
        op = rng.choice(ops)
        kind = OP_KIND[op]
        if kind == "unary":
            return Unary(op, grow(d - 1))
        if kind == "binary":
            right = FloatConst(rng.choice((0.5, 1.0, 2.0, 3.0))) if op == "Pow" else grow(d - 1)
            return Binary(op, grow(d - 1), right)
        w = IntConst(rng.randint(1, max_window))
        if kind == "rolling1":
            return Rolling1(op, grow(d - 1), w)
        return Rolling2(op, grow(d - 1), grow(d - 1), w)

    return grow(max_depth)
