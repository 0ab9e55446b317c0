"""Separable trigonometric polynomials on the torus (R/2piZ)^n.

A polynomial is a sum of terms ``amp * prod_j trig_j(k_j q^j)`` where each
``trig_j`` is ``sin`` or ``cos`` and ``k_j >= 0``.  Derivatives stay in the
same class, so metric families and initial data get exact derivatives.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

# (kind, wavenumber) per axis; ("cos", 0) is the constant factor 1
Factor = tuple[str, int]
ONE: Factor = ("cos", 0)


@dataclass(frozen=True)
class Term:
    amp: float
    factors: tuple[Factor, ...]

    def is_zero(self) -> bool:
        return self.amp == 0.0 or any(kind == "sin" and k == 0 for kind, k in self.factors)


@dataclass(frozen=True)
class TrigPoly:
    dim: int
    terms: tuple[Term, ...] = ()

    @classmethod
    def constant(cls, dim: int, value: float) -> "TrigPoly":
        return cls(dim, (Term(float(value), (ONE,) * dim),)) if value else cls(dim)

    @classmethod
    def parse(cls, text: str, dim: int) -> "TrigPoly":
        return parse_trig(text, dim)

    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        return TrigPoly(self.dim, self.terms + other.terms).simplified()

    def scaled(self, s: float) -> "TrigPoly":
        return TrigPoly(self.dim, tuple(Term(s * t.amp, t.factors) for t in self.terms))

    def simplified(self) -> "TrigPoly":
        acc: dict[tuple[Factor, ...], float] = {}
        for t in self.terms:
            if t.is_zero():
                continue
            key = tuple(ONE if k == 0 else (kind, k) for kind, k in t.factors)
            acc[key] = acc.get(key, 0.0) + t.amp
        return TrigPoly(self.dim, tuple(Term(a, f) for f, a in acc.items() if a != 0.0))

    def is_zero(self) -> bool:
        return all(t.is_zero() for t in self.terms)

    def derivative(self, axis: int) -> "TrigPoly":
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        out = []
        for t in self.terms:
            kind, k = t.factors[axis]
            if k == 0:
                continue
            f = list(t.factors)
            if kind == "sin":
                f[axis] = ("cos", k)
                out.append(Term(t.amp * k, tuple(f)))
            else:
                f[axis] = ("sin", k)
                out.append(Term(-t.amp * k, tuple(f)))
        return TrigPoly(self.dim, tuple(out))

    def __call__(self, *coords) -> np.ndarray | float:
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {len(coords)}")
        shape = np.broadcast(*coords).shape if coords else ()
        total = np.zeros(shape)
        for t in self.terms:
            val = t.amp
            for (kind, k), q in zip(t.factors, coords):
                if k == 0:
                    if kind == "sin":
                        val = 0.0
                    continue
                val = val * (np.sin(k * q) if kind == "sin" else np.cos(k * q))
            total = total + val
        return total

    def max_wavenumber(self) -> int:
        return max((k for t in self.terms for _, k in t.factors), default=0)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for t in self.terms:
            facs = [f"{kind}({'' if k == 1 else f'{k}*'}q{j + 1})"
                    for j, (kind, k) in enumerate(t.factors) if k != 0]
            parts.append("*".join([repr(t.amp)] + facs))
        return " + ".join(parts).replace("+ -", "- ")


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<fn>sin|cos)\s*\(\s*(?:(?P<k>\d+)\s*\*?\s*)?q(?P<ax>\d)\s*\)"
    r"|(?P<op>[-+*]))"
)


def parse_trig(text: str, dim: int) -> TrigPoly:
    """Parse e.g. ``"0.05*sin(q1)*sin(q2) - 0.1 cos(2q1) + 1"``.

    Axes are 1-based in the text (``q1`` is the first coordinate).
    """
    text = text.strip()
    if not text:
        return TrigPoly(dim)
    pos = 0
    terms: list[Term] = []
    sign = 1.0
    amp: float | None = None
    factors = [ONE] * dim
    started = False

    def flush():
        nonlocal amp, factors, sign, started
        if started:
            terms.append(Term(sign * (1.0 if amp is None else amp), tuple(factors)))
        amp, factors, sign, started = None, [ONE] * dim, 1.0, False

    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ValueError(f"cannot parse trig polynomial near {text[pos:]!r}")
        pos = m.end()
        if m.group("op") in ("+", "-"):
            if started:
                flush()
            if m.group("op") == "-":
                sign = -sign
        elif m.group("op") == "*":
            continue
        elif m.group("num") is not None:
            amp = float(m.group("num")) * (1.0 if amp is None else amp)
            started = True
        else:
            ax = int(m.group("ax")) - 1
            if not 0 <= ax < dim:
                raise ValueError(f"q{ax + 1} not available in dimension {dim}")
            if factors[ax] != ONE:
                raise ValueError(f"repeated factor on q{ax + 1} (products on one axis are not separable)")
            factors[ax] = (m.group("fn"), int(m.group("k") or 1))
            started = True
    flush()
    return TrigPoly(dim, tuple(terms)).simplified()


def random_trig(rng: np.random.Generator, dim: int, max_k: int, amplitude: float,
                decay: float = 1.0) -> TrigPoly:
    """Band-limited random polynomial; mode amplitudes fall off like ``|k|^-decay``."""
    terms = []
    for ks in np.ndindex(*(max_k + 1,) * dim):
        if not any(ks):
            continue
        for kinds in _kind_choices(ks):
            scale = amplitude / (1.0 + float(np.linalg.norm(ks))) ** decay
            terms.append(Term(float(rng.normal()) * scale,
                              tuple((kind, int(k)) for kind, k in zip(kinds, ks))))
    return TrigPoly(dim, tuple(terms)).simplified()


def _kind_choices(ks: Iterable[int]):
    return itertools.product(*[("cos",) if k == 0 else ("sin", "cos") for k in ks])
