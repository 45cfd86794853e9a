"""Text front end for polynomial observables.

Grammar (``^`` and ``**`` both denote powers, right-associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom (("^" | "**") unary)?
    atom   := NUMBER | VARIABLE | "(" expr ")"

Numbers are read exactly (``0.1`` becomes ``1/10``). Division is only allowed
by constants and exponents must be non-negative integer constants. The output
of ``str(poly)`` parses back to the same polynomial.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from hybridphase.polynomial import PolynomialObservable

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|[-+*/^()])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"^([xpXP])([1-9][0-9]*)$")


class ExpressionError(ValueError):
    def __init__(self, message: str, position: int | None = None, text: str | None = None):
        self.position = position
        self.text = text
        where = f" at position {position}" if position is not None else ""
        super().__init__(message + where)


@dataclass(frozen=True)
class Token:
    kind: str  # num, var, op, end
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionError(f"unexpected character {text[pos]!r}", pos, text)
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(Token("end", "", len(text)))
    return out


def _infer_dims(tokens: list[Token], text: str) -> tuple[int, int]:
    n = N = 0
    for tok in tokens:
        if tok.kind != "var":
            continue
        m = _VAR_RE.match(tok.text)
        if m is None:
            raise ExpressionError(f"unknown variable {tok.text!r}", tok.pos, text)
        k = int(m.group(2))
        if m.group(1) in "xp":
            n = max(n, k)
        else:
            N = max(N, k)
    return n, N


class _Parser:
    def __init__(self, tokens: list[Token], text: str, n: int, N: int):
        self.tokens = tokens
        self.text = text
        self.n = n
        self.N = N
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ExpressionError(message, tok.pos, self.text)

    def take(self, *ops: str) -> Token | None:
        if self.tok.kind == "op" and self.tok.text in ops:
            t = self.tok
            self.i += 1
            return t
        return None

    def parse(self) -> PolynomialObservable:
        if self.tok.kind == "end":
            self.error("empty expression")
        out = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return out

    def expr(self):
        out = self.term()
        while (op := self.take("+", "-")) is not None:
            rhs = self.term()
            out = out + rhs if op.text == "+" else out - rhs
        return out

    def term(self):
        out = self.unary()
        while (op := self.take("*", "/")) is not None:
            rhs_tok = self.tok
            rhs = self.unary()
            if op.text == "*":
                out = out * rhs
            else:
                if rhs.degree() > 0:
                    self.error("division by a non-constant", rhs_tok)
                c = rhs.terms.get((0,) * rhs.dim, 0)
                if c == 0:
                    self.error("division by zero", rhs_tok)
                out = out * (1 / Fraction(c) if not isinstance(c, float) else 1 / c)
        return out

    def unary(self):
        if self.take("-"):
            return -self.unary()
        if self.take("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.take("^", "**") is not None:
            exp_tok = self.tok
            e = self.unary()
            c = e.terms.get((0,) * e.dim, 0)
            if e.degree() > 0 or c != int(c) or c < 0:
                self.error("exponent must be a non-negative integer constant", exp_tok)
            base = base ** int(c)
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return PolynomialObservable.constant(_exact(tok.text), self.n, self.N)
        if tok.kind == "var":
            self.i += 1
            try:
                return PolynomialObservable.variable(tok.text, self.n, self.N)
            except KeyError:
                self.error(f"unknown variable {tok.text!r}", tok)
        if self.take("("):
            inner = self.expr()
            if self.take(")") is None:
                self.error("expected ')'")
            return inner
        if tok.kind == "end":
            self.error("unexpected end of expression")
        self.error(f"unexpected {tok.text!r}")


def _exact(text: str):
    v = Fraction(text)
    return int(v) if v.denominator == 1 else v


def infer_dimensions(text: str) -> tuple[int, int]:
    """Largest classical and quantum indices used in ``text``."""
    return _infer_dims(tokenize(text), text)


def parse_observable(text: str, n: int | None = None, N: int | None = None) -> PolynomialObservable:
    """Parse ``text`` into a polynomial.

    When ``n`` or ``N`` is omitted, it is taken as the largest index used.
    Variables beyond a given ``n``/``N`` are reported as unknown.
    """
    tokens = tokenize(text)
    n_used, N_used = _infer_dims(tokens, text)
    n = n_used if n is None else n
    N = N_used if N is None else N
    return _Parser(tokens, text, n, N).parse()


def parse_observables(texts, n: int | None = None, N: int | None = None) -> list[PolynomialObservable]:
    """Parse several expressions into a common ``(n, N)``."""
    dims = [infer_dimensions(t) for t in texts]
    n = max((d[0] for d in dims), default=0) if n is None else n
    N = max((d[1] for d in dims), default=0) if N is None else N
    return [parse_observable(t, n, N) for t in texts]
