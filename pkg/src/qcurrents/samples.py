"""Seeded generators of PA Q-maps and analytic sheets used by tests, demos
and the command line."""
from __future__ import annotations

import json
from fractions import Fraction
from importlib import resources

import numpy as np

from .mesh import cube_boundary_mesh, grid_mesh
from .qfield import AnalyticSheetBundle, Domain, PAQMap


def random_rational(rng: np.random.Generator, den: int = 16, bound: int = 16) -> Fraction:
    return Fraction(int(rng.integers(-bound, bound + 1)), den)


def random_pa_map(rng: np.random.Generator, m: int = 2, n: int = 1, Q: int = 2, k: int = 2,
                  lo=-1, hi=1, den: int = 16, coincide: float = 0.2, shuffle: bool = True) -> PAQMap:
    """Random compatible PA map on a Kuhn grid with k cells per axis.

    Vertex values are drawn per global sheet; with probability ``coincide``
    a vertex repeats one sheet's value on another. ``shuffle`` permutes the
    sheet order independently on every simplex (compatibility only sees
    multisets).
    """
    mesh = grid_mesh([lo] * m, [hi] * m, k)
    values = []
    for _ in mesh.vertices:
        vals = [tuple(random_rational(rng, den) for _ in range(n)) for _ in range(Q)]
        if Q > 1 and rng.random() < coincide:
            a, b = rng.choice(Q, size=2, replace=False)
            vals[int(b)] = vals[int(a)]
        values.append(vals)
    F = PAQMap.from_vertex_values(mesh, values)
    if not shuffle:
        return F
    sheets = []
    for s in range(len(mesh.simplices)):
        perm = rng.permutation(Q)
        sheets.append([F.sheets[s][int(j)] for j in perm])
    return PAQMap(mesh, sheets)


def random_boundary_map(rng: np.random.Generator, Q: int = 2, n: int = 1, k: int = 2,
                        den: int = 8, bound: int = 8) -> PAQMap:
    """Random PA Q-map on the triangulated boundary of [-1, 1]^2 (global
    sheet labels, so it is compatible)."""
    mesh = cube_boundary_mesh(2, k)
    values = [[tuple(random_rational(rng, den, bound) for _ in range(n)) for _ in range(Q)]
              for _ in mesh.vertices]
    return PAQMap.from_vertex_values(mesh, values)


def random_polynomial(rng: np.random.Generator, m: int, degree: int = 3, scale: float = 1.0) -> str:
    """Random polynomial in x1..xm with coefficients in [-scale, scale],
    printed with exact short decimals so parsing is reproducible."""
    import itertools
    terms = []
    for powers in itertools.product(range(degree + 1), repeat=m):
        if 0 < sum(powers) <= degree:
            c = round(float(rng.uniform(-scale, scale)), 3)
            mono = "*".join(f"x{i + 1}**{p}" for i, p in enumerate(powers) if p)
            terms.append(f"({c})*{mono}")
    return " + ".join(terms)


def random_bundle(rng: np.random.Generator, m: int = 2, n: int = 1, Q: int = 2,
                  domain: Domain | None = None, degree: int = 3, scale: float = 1.0) -> AnalyticSheetBundle:
    domain = domain or Domain.ball([0.0] * m, 1.0)
    sheets = [[random_polynomial(rng, m, degree, scale) for _ in range(n)] for _ in range(Q)]
    return AnalyticSheetBundle.from_strings(sheets, domain)


def sample_map() -> PAQMap:
    """The bundled Q = 2 map over the unit square."""
    data = json.loads(resources.files("qcurrents").joinpath("data/sample_map.json").read_text())
    return PAQMap.from_json(data)
