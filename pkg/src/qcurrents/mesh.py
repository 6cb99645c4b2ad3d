"""Oriented simplicial meshes with exact rational vertices."""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from . import exact
from .exact import Vec, frac


class MeshError(ValueError):
    pass


def oriented_faces(simplex: Sequence[int]) -> list[tuple[tuple[int, ...], int]]:
    """Faces of an ordered simplex with their induced signs (-1)^i."""
    return [
        (tuple(v for j, v in enumerate(simplex) if j != i), -1 if i % 2 else 1)
        for i in range(len(simplex))
    ]


def canonical(cell: Sequence, sign: int = 1) -> tuple[tuple, int]:
    """Sort a cell's vertices; return (sorted cell, sign times parity)."""
    return tuple(sorted(cell)), sign * exact.permutation_parity(list(cell))


@dataclass(frozen=True)
class SimplicialMesh:
    """m-simplices (vertex index tuples, order = orientation) in R^d, d >= m."""

    vertices: tuple[Vec, ...]
    simplices: tuple[tuple[int, ...], ...]

    def __init__(self, vertices, simplices, check: bool = True):
        object.__setattr__(self, "vertices", tuple(exact.vec(v) for v in vertices))
        object.__setattr__(self, "simplices", tuple(tuple(int(i) for i in s) for s in simplices))
        if check:
            self.validate()

    @property
    def m(self) -> int:
        return len(self.simplices[0]) - 1

    @property
    def d(self) -> int:
        return len(self.vertices[0])

    def coords(self, s: int) -> list[Vec]:
        return [self.vertices[i] for i in self.simplices[s]]

    def edge_vectors(self, s: int) -> list[Vec]:
        c = self.coords(s)
        return [exact.sub(p, c[0]) for p in c[1:]]

    def volume_sq(self, s: int) -> Fraction:
        """(m! vol)^2 as an exact rational."""
        return exact.gram_det(self.edge_vectors(s))

    def volume(self, s: int) -> float:
        import math
        return math.sqrt(float(self.volume_sq(s))) / math.factorial(self.m)

    def orientation_sign(self, s: int) -> int:
        """Sign of det of edge vectors, defined when d == m."""
        if self.d != self.m:
            raise MeshError("orientation sign needs a full-dimensional mesh")
        dt = exact.det(self.edge_vectors(s))
        return (dt > 0) - (dt < 0)

    @cached_property
    def face_incidence(self) -> dict[tuple[int, ...], list[tuple[int, int]]]:
        """sorted face -> [(simplex index, induced sign after sorting)]"""
        inc: dict[tuple[int, ...], list[tuple[int, int]]] = defaultdict(list)
        for si, simp in enumerate(self.simplices):
            for face, sgn in oriented_faces(simp):
                key, ksgn = canonical(face, sgn)
                inc[key].append((si, ksgn))
        return dict(inc)

    @cached_property
    def boundary_faces(self) -> tuple[tuple[tuple[int, ...], int, int], ...]:
        """Boundary faces as (vertex tuple, sign, simplex index).

        For m >= 2 the vertex order already carries the induced orientation
        and the sign is +1; for m = 1 faces are points and the sign is the
        orientation.
        """
        out = []
        for si, simp in enumerate(self.simplices):
            for face, sgn in oriented_faces(simp):
                key, _ = canonical(face)
                if len(self.face_incidence[key]) == 1:
                    f = list(face)
                    if sgn < 0 and len(f) > 1:
                        f[0], f[1] = f[1], f[0]
                        sgn = 1
                    out.append((tuple(f), sgn, si))
        return tuple(out)

    @cached_property
    def neighbors(self) -> dict[int, list[tuple[int, tuple[int, ...]]]]:
        nb: dict[int, list] = defaultdict(list)
        for key, inc in self.face_incidence.items():
            if len(inc) == 2:
                (a, _), (b, _) = inc
                nb[a].append((b, key))
                nb[b].append((a, key))
        return dict(nb)

    def validate(self) -> None:
        if not self.simplices:
            raise MeshError("empty mesh")
        m = self.m
        if self.d < m:
            raise MeshError(f"ambient dimension {self.d} below simplex dimension {m}")
        for si in range(len(self.simplices)):
            if len(self.simplices[si]) != m + 1:
                raise MeshError(f"simplex {si} has {len(self.simplices[si])} vertices, expected {m + 1}")
            if self.volume_sq(si) == 0:
                raise MeshError(f"simplex {si} is degenerate")
        for key, inc in self.face_incidence.items():
            if len(inc) > 2:
                raise MeshError(f"face {key} shared by {len(inc)} simplices")
            if len(inc) == 2 and inc[0][1] + inc[1][1] != 0:
                raise MeshError(f"face {key} is not oppositely oriented by its two simplices")

    def boundary_mesh(self) -> "SimplicialMesh":
        """The (m-1)-dimensional boundary with induced orientation (vertex
        indices renumbered)."""
        if self.m < 2:
            raise MeshError("boundary mesh of a 1-dimensional mesh is a signed point set")
        faces = [f for f, _, _ in self.boundary_faces]
        used = sorted({i for f in faces for i in f})
        index = {v: k for k, v in enumerate(used)}
        return SimplicialMesh([self.vertices[i] for i in used],
                              [[index[i] for i in f] for f in faces])

    def as_float(self) -> np.ndarray:
        return np.array([[float(c) for c in v] for v in self.vertices])

    def barycentric(self, s: int, x: Sequence[Fraction]) -> Vec | None:
        """Exact barycentric coordinates of x (full-dimensional meshes)."""
        c = self.coords(s)
        E = self.edge_vectors(s)
        rows = [[E[j][i] for j in range(self.m)] for i in range(self.d)]
        lam = exact.solve(rows, exact.sub(x, c[0])) if self.d == self.m else None
        if lam is None:
            return None
        return (1 - sum(lam, Fraction(0)),) + lam

    def locate(self, x: Sequence[Fraction]) -> list[int]:
        """Indices of the closed simplices containing x (full-dimensional)."""
        x = exact.vec(x)
        out = []
        for s in range(len(self.simplices)):
            lam = self.barycentric(s, x)
            if lam is not None and all(l >= 0 for l in lam):
                out.append(s)
        return out

    def to_json(self) -> dict:
        return {
            "vertices": [[exact.fstr(c) for c in v] for v in self.vertices],
            "simplices": [list(s) for s in self.simplices],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SimplicialMesh":
        return cls(data["vertices"], data["simplices"])


def _kuhn_simplices(m: int) -> list[tuple[int, ...]]:
    """Kuhn triangulation of the unit m-cube; vertices encoded as bit masks."""
    out = []
    for perm in itertools.permutations(range(m)):
        v, path = 0, [0]
        for k in perm:
            v |= 1 << k
            path.append(v)
        out.append(tuple(path))
    return out


def grid_mesh(lo: Sequence, hi: Sequence, k: int | Sequence[int]) -> SimplicialMesh:
    """Kuhn triangulation of the box prod [lo_i, hi_i] with k cells per axis,
    every simplex positively oriented."""
    lo, hi = exact.vec(lo), exact.vec(hi)
    m = len(lo)
    ks = [k] * m if isinstance(k, int) else list(k)
    index: dict[tuple[int, ...], int] = {}
    verts: list[Vec] = []

    def vid(g: tuple[int, ...]) -> int:
        if g not in index:
            index[g] = len(verts)
            verts.append(tuple(lo[i] + (hi[i] - lo[i]) * Fraction(g[i], ks[i]) for i in range(m)))
        return index[g]

    simplices = []
    pattern = _kuhn_simplices(m)
    for cell in itertools.product(*[range(kk) for kk in ks]):
        for pat in pattern:
            s = [vid(tuple(cell[i] + ((b >> i) & 1) for i in range(m))) for b in pat]
            simplices.append(s)
    mesh = SimplicialMesh(verts, simplices, check=False)
    fixed = []
    for si, s in enumerate(simplices):
        if mesh.orientation_sign(si) < 0:
            s = [s[1], s[0]] + s[2:]
        fixed.append(s)
    return SimplicialMesh(verts, fixed)


def interval_mesh(a, b, k: int) -> SimplicialMesh:
    return grid_mesh([a], [b], k)


def square_mesh(k: int, lo=(0, 0), hi=(1, 1)) -> SimplicialMesh:
    return grid_mesh(lo, hi, k)


def cube_boundary_mesh(m: int, k: int, center: Sequence = None, r=1) -> SimplicialMesh:
    """Triangulated boundary of center + r[-1, 1]^m with outward orientation."""
    center = exact.vec(center if center is not None else [0] * m)
    r = frac(r)
    full = grid_mesh([c - r for c in center], [c + r for c in center], k)
    return full.boundary_mesh()


def fan_mesh(ring: Sequence[Sequence], center: Sequence = (0, 0)) -> SimplicialMesh:
    """Triangles (center, ring[i], ring[i+1]) around a closed polygon given
    counter-clockwise."""
    verts = [exact.vec(center)] + [exact.vec(p) for p in ring]
    k = len(ring)
    return SimplicialMesh(verts, [[0, 1 + i, 1 + (i + 1) % k] for i in range(k)])
