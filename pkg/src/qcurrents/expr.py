"""Closed-form maps from expression strings.

Grammar (whitespace ignored)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*      # '/' only by constants
    factor := ('+' | '-') factor | atom ('^' integer)?
    atom   := number | x<k> | y<k> | 'sin(' expr ')' | 'cos(' expr ')' | '(' expr ')'

Variables are ``x1..xm`` (domain) and, for fields on R^m x R^n, ``y1..yn``.
Decimal literals are read as exact rationals. Parsing and differentiation
are delegated to sympy; evaluation is vectorized numpy.
"""
from __future__ import annotations

import re
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    parse_expr,
    rationalize,
    standard_transformations,
)

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][-+]?\d+)?)|([xy]\d+)|(sin|cos)|([-+*/^()]))")


class ExpressionError(ValueError):
    pass


def _validate(text: str) -> None:
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected input at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()


def parse(text: str, nx: int, ny: int = 0) -> sp.Expr:
    """Parse one scalar expression in x1..x{nx}, y1..y{ny}."""
    if not isinstance(text, str):
        return sp.nsimplify(text, rational=True)
    _validate(text)
    names = {f"x{k + 1}": sp.Symbol(f"x{k + 1}", real=True) for k in range(nx)}
    names |= {f"y{k + 1}": sp.Symbol(f"y{k + 1}", real=True) for k in range(ny)}
    names |= {"sin": sp.sin, "cos": sp.cos}
    used = set(re.findall(r"[xy]\d+", text))
    unknown = used - set(names)
    if unknown:
        raise ExpressionError(f"unknown variables {sorted(unknown)} (allowed x1..x{nx}, y1..y{ny})")
    try:
        e = parse_expr(
            text.replace("^", "**"),
            local_dict=names,
            transformations=standard_transformations + (rationalize,),
        )
    except Exception as exc:  # sympy raises a zoo of types
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
    for p in e.atoms(sp.Pow):
        if p.exp.is_negative and p.base.free_symbols:
            raise ExpressionError(f"division by a non-constant in {text!r}")
    return e


def _lambdify_array(exprs, syms):
    """Vectorized evaluator for an arbitrary-shape array of scalar exprs."""
    arr = np.array(exprs, dtype=object)
    shape = arr.shape
    flat = [sp.sympify(e) for e in arr.ravel()]
    funcs = [sp.lambdify(syms, e, modules="numpy") for e in flat]

    def call(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        cols = [X[..., k] for k in range(X.shape[-1])]
        bshape = X.shape[:-1]
        out = np.empty(bshape + (len(funcs),))
        for i, f in enumerate(funcs):
            out[..., i] = np.broadcast_to(f(*cols), bshape)
        return out.reshape(bshape + shape)

    return call


class _PolyFraction:
    """Exact evaluation of a polynomial with rational coefficients."""

    def __init__(self, e: sp.Expr, syms):
        poly = sp.Poly(e, *syms)
        self.terms = [(mon, Fraction(int(c.p), int(c.q))) for mon, c in poly.terms()]

    def __call__(self, x: Sequence[Fraction]) -> Fraction:
        total = Fraction(0)
        for mon, c in self.terms:
            t = c
            for xi, k in zip(x, mon):
                if k:
                    t *= xi ** k
            total += t
        return total


class VectorExpr:
    """A closed-form map R^d -> R^k with derivatives up to order three."""

    def __init__(self, components: Sequence, nx: int, ny: int = 0):
        self.nx, self.ny = nx, ny
        self.syms = [sp.Symbol(f"x{k + 1}", real=True) for k in range(nx)]
        self.syms += [sp.Symbol(f"y{k + 1}", real=True) for k in range(ny)]
        self.texts = [c if isinstance(c, str) else str(c) for c in components]
        self.exprs = [parse(c, nx, ny) if isinstance(c, str) else sp.sympify(c) for c in components]

    @property
    def dim_in(self) -> int:
        return self.nx + self.ny

    @property
    def dim_out(self) -> int:
        return len(self.exprs)

    @cached_property
    def _jac_exprs(self):
        return [[sp.diff(e, s) for s in self.syms] for e in self.exprs]

    @cached_property
    def _hess_exprs(self):
        return [[[sp.diff(d, s) for s in self.syms] for d in row] for row in self._jac_exprs]

    @cached_property
    def _d3_exprs(self):
        return [[[[sp.diff(h, s) for s in self.syms] for h in r2] for r2 in r1] for r1 in self._hess_exprs]

    @cached_property
    def value(self):
        return _lambdify_array(self.exprs, self.syms)

    @cached_property
    def jac(self):
        return _lambdify_array(self._jac_exprs, self.syms)

    @cached_property
    def hess(self):
        return _lambdify_array(self._hess_exprs, self.syms)

    @cached_property
    def d3(self):
        return _lambdify_array(self._d3_exprs, self.syms)

    @cached_property
    def is_polynomial(self) -> bool:
        return all(e.is_polynomial(*self.syms) for e in self.exprs)

    @cached_property
    def is_affine(self) -> bool:
        return self.is_polynomial and all(
            sp.Poly(e, *self.syms).total_degree() <= 1 for e in self.exprs
        )

    @cached_property
    def _exact(self):
        if not self.is_polynomial:
            raise ExpressionError("exact evaluation needs polynomial components")
        return [_PolyFraction(e, self.syms) for e in self.exprs]

    @cached_property
    def _exact_jac(self):
        if not self.is_polynomial:
            raise ExpressionError("exact evaluation needs polynomial components")
        return [[_PolyFraction(d, self.syms) for d in row] for row in self._jac_exprs]

    def exact_value(self, x: Sequence[Fraction]) -> tuple[Fraction, ...]:
        return tuple(f(x) for f in self._exact)

    def exact_jac(self, x: Sequence[Fraction]) -> tuple[tuple[Fraction, ...], ...]:
        return tuple(tuple(f(x) for f in row) for row in self._exact_jac)

    def to_json(self) -> list[str]:
        return list(self.texts)

    def __repr__(self) -> str:
        return f"VectorExpr({self.texts!r})"


def scalar(text: str, nx: int, ny: int = 0) -> VectorExpr:
    return VectorExpr([text], nx, ny)
