"""Sandboxed arithmetic expression DSL for endpoint rules.

Grammar:
    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := atom ("^" atom)?
    atom   := number | ident | "-" atom | ident "(" expr ("," expr)* ")" | "(" expr ")"

Identifiers are restricted to the endpoint-rule environment; functions to a
fixed whitelist. Evaluation never produces NaN or infinity: every failure
path raises a typed error instead.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

ENV_NAMES = frozenset(
    {
        "x", "y", "h", "v", "a", "T", "t", "dt",
        "ego_x", "ego_y", "ego_h", "ego_v",
        "lane_w", "cross_x", "cross_y",
    }
)

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "clamp": 3,
    "sqrt": 1,
    "sign": 1,
}


class DslError(ValueError):
    pass


class ParseError(DslError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(DslError):
    pass


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        start = m.end() - len((m.group("num") or m.group("ident") or m.group("op")))
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), start))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident"), start))
        else:
            tokens.append(("op", m.group("op"), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)
        return self.advance()

    def parse(self):
        ast = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return ast

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = Binary(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = Binary(val, node, self.factor())
            else:
                return node

    def factor(self):
        node = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            node = Binary("^", node, self.atom())
        return node

    def atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "op" and val == "-":
            return Neg(self.atom())
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if kind == "ident":
            nkind, nval, _ = self.peek()
            if nkind == "op" and nval == "(":
                self.advance()
                args = [self.expr()]
                while True:
                    akind, aval, aoff = self.peek()
                    if akind == "op" and aval == ",":
                        self.advance()
                        args.append(self.expr())
                    elif akind == "op" and aval == ")":
                        self.advance()
                        break
                    else:
                        raise ParseError("expected ',' or ')'", aoff)
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                if len(args) != FUNCTIONS[val]:
                    raise ParseError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", off
                    )
                return Call(val, tuple(args))
            if val not in ENV_NAMES:
                raise ParseError(f"unknown identifier {val!r}", off)
            return Ident(val)
        raise ParseError("expected expression", off)


def parse_rule(text: str):
    """Parse an expression into its AST."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printing

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def format_expr(ast) -> str:
    """Render an AST back to source; parse(format_expr(ast)) == ast."""
    return _fmt(ast, 0)


def _fmt(node, parent_prec: int) -> str:
    if isinstance(node, Const):
        v = node.value
        if v == int(v) and abs(v) < 1e15:
            text = str(int(v))
        else:
            text = repr(v)
        return text
    if isinstance(node, Ident):
        return node.name
    if isinstance(node, Neg):
        inner = _fmt(node.arg, 4)
        return f"-{inner}"
    if isinstance(node, Call):
        args = ", ".join(_fmt(a, 0) for a in node.args)
        return f"{node.fn}({args})"
    if isinstance(node, Binary):
        prec = _PRECEDENCE[node.op]
        # '-' and '/' are left-associative; '^' is non-associative.
        left = _fmt(node.left, prec if node.op != "^" else prec + 1)
        right = _fmt(node.right, prec + 1)
        text = f"{left} {node.op} {right}"
        if prec < parent_prec:
            return f"({text})"
        return text
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Evaluation


def eval_expr(ast, env: dict) -> float:
    """Evaluate an AST under an environment; guarded against NaN/inf."""
    result = _eval(ast, env)
    if not math.isfinite(result):
        raise EvalError(f"non-finite result {result!r}")
    return result


def _eval(node, env) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Ident):
        if node.name not in env:
            raise EvalError(f"unbound identifier {node.name!r}")
        return float(env[node.name])
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Binary):
        lhs = _eval(node.left, env)
        rhs = _eval(node.right, env)
        if node.op == "+":
            return lhs + rhs
        if node.op == "-":
            return lhs - rhs
        if node.op == "*":
            out = lhs * rhs
        elif node.op == "/":
            if abs(rhs) < 1e-12:
                raise EvalError(f"division by near-zero denominator {rhs!r}")
            out = lhs / rhs
        else:  # ^
            if lhs < 0 and rhs != int(rhs):
                raise EvalError(f"fractional power of negative base {lhs!r}")
            try:
                out = math.pow(lhs, rhs)
            except (OverflowError, ValueError) as exc:
                raise EvalError(f"power error: {exc}") from exc
        if not math.isfinite(out):
            raise EvalError(f"non-finite intermediate {out!r}")
        return out
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        if node.fn == "sqrt" and args[0] < 0:
            raise EvalError(f"sqrt of negative value {args[0]!r}")
        fn = {
            "sin": math.sin,
            "cos": math.cos,
            "tan": math.tan,
            "abs": abs,
            "min": min,
            "max": max,
            "clamp": lambda v, lo, hi: min(max(v, lo), hi),
            "sqrt": math.sqrt,
            "sign": lambda v: (v > 0) - (v < 0),
        }[node.fn]
        out = float(fn(*args))
        if not math.isfinite(out):
            raise EvalError(f"non-finite result of {node.fn}")
        return out
    raise TypeError(f"not an AST node: {node!r}")


def expr_identifiers(ast) -> set:
    """All identifiers referenced by an AST."""
    out = set()
    _walk_idents(ast, out)
    return out


def _walk_idents(node, out) -> None:
    if isinstance(node, Ident):
        out.add(node.name)
    elif isinstance(node, Neg):
        _walk_idents(node.arg, out)
    elif isinstance(node, Binary):
        _walk_idents(node.left, out)
        _walk_idents(node.right, out)
    elif isinstance(node, Call):
        for a in node.args:
            _walk_idents(a, out)
