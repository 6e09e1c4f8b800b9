"""Arithmetic expression parser for user-supplied surpluses and densities.

Grammar (EBNF, also documented in the README):

    expr   = term { ("+" | "-") term } ;
    term   = unary { ("*" | "/") unary } ;
    unary  = ("+" | "-") unary | power ;
    power  = atom [ "^" unary ] ;              (* right associative *)
    atom   = NUMBER | IDENT | FUNC "(" expr { "," expr } ")" | "(" expr ")" ;

Functions: ln, exp, sqrt (one argument); min, max (two arguments).
Identifiers must come from the declared variable set (plus the constants
pi and e). Errors carry a 1-based character position and the offending
token. Compiled expressions evaluate vectorized over numpy arrays.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import MatchkitError

_FUNCTIONS = {
    "ln": (1, np.log),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_TOKEN_RE = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z_0-9]*)|([()+\-*/^,]))")


class ParseError(MatchkitError):
    def __init__(self, message: str, position: int, token: str = ""):
        self.position = position          # 1-based character position
        self.token = token
        super().__init__(f"{message} at position {position}"
                         + (f" (near {token!r})" if token else ""))


@dataclass(frozen=True)
class _Token:
    kind: str       # "num" | "ident" | "op" | "end"
    text: str
    pos: int        # 1-based


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            stripped = text[i:].lstrip()
            if not stripped:
                break
            pos = len(text) - len(stripped) + 1
            raise ParseError("unexpected character", pos, stripped[0])
        if m.group(1) is not None:
            tokens.append(_Token("num", m.group(1), m.start(1) + 1))
        elif m.group(2) is not None:
            tokens.append(_Token("ident", m.group(2), m.start(2) + 1))
        else:
            tokens.append(_Token("op", m.group(3), m.start(3) + 1))
        i = m.end()
    tokens.append(_Token("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.idx = 0
        self.variables = set(variables)

    def peek(self) -> _Token:
        return self.tokens[self.idx]

    def advance(self) -> _Token:
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect_op(self, op: str):
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise ParseError(f"expected {op!r}", tok.pos, tok.text)
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError("unexpected trailing input", tok.pos, tok.text)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            inner = self.unary()
            return inner if tok.text == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        tok = self.advance()
        if tok.kind == "num":
            return ("num", float(tok.text))
        if tok.kind == "ident":
            name = tok.text
            if self.peek().kind == "op" and self.peek().text == "(":
                if name not in _FUNCTIONS:
                    raise ParseError(f"unknown function {name!r}", tok.pos, name)
                arity, _ = _FUNCTIONS[name]
                self.advance()
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect_op(")")
                if len(args) != arity:
                    raise ParseError(
                        f"{name} expects {arity} argument(s), got {len(args)}",
                        tok.pos, name)
                return ("call", name, tuple(args))
            if name in _CONSTANTS:
                return ("num", _CONSTANTS[name])
            if name not in self.variables:
                raise ParseError(f"unknown identifier {name!r}", tok.pos, name)
            return ("var", name)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ParseError("expected a value", tok.pos, tok.text)


def parse_ast(text: str, variables: Sequence[str]):
    return _Parser(text, variables).parse()


def _eval(node, env: dict) -> np.ndarray:
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return env[node[1]]
    if kind == "neg":
        return -_eval(node[1], env)
    if kind == "bin":
        op, a, b = node[1], node[2], node[3]
        va, vb = _eval(a, env), _eval(b, env)
        if op == "+":
            return va + vb
        if op == "-":
            return va - vb
        if op == "*":
            return va * vb
        if op == "/":
            return va / vb
        return np.power(va, vb)
    _, fn = _FUNCTIONS[node[1]]
    return fn(*[_eval(a, env) for a in node[2]])


def compile_expression(text: str, variables: Sequence[str]) -> Callable[..., np.ndarray]:
    """Compile to a function of keyword arrays, e.g. f(x1=..., x2=..., y=...)."""
    ast = parse_ast(text, variables)

    def fn(**env):
        return _eval(ast, env)

    fn.expression = text
    fn.variables = tuple(variables)
    return fn
