"""Reparametrizing Q-valued graphs over a curved base or a tilted plane.

A point p = Phi(x) of the base M is matched with the points of Gr(f) on its
normal fiber p + (T_p M)^perp. For M the graph of phi the fiber is
parametrized by w in R^n as (x - Dphi(x)^T w, phi(x) + w), so a sheet that
is affine on a simplex meets it where an n x n linear system is solved:
exactly over the rationals when everything is rational.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import exact
from .currents import SimplicialCurrent, _clip, _area2, currents_equal, graph_current
from .manifold import BaseManifold, ProjectionError
from .mesh import SimplicialMesh
from .qcore import QPoint, g_dist
from .qfield import AnalyticSheetBundle, PAQMap, lipschitz_constant

#: barycentric slack for the float prefilter of PA fibers
PREFILTER_TOL = 1e-9
#: analytic hits closer than this merge
MERGE_TOL = 1e-8
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
DEFAULT_C0 = 0.05


class FiberError(ValueError):
    """A fiber does not carry total multiplicity Q."""

    def __init__(self, message, fiber=None):
        super().__init__(message)
        self.fiber = fiber


class TiltError(ValueError):
    pass


@dataclass(frozen=True)
class Hit:
    point: tuple  # (x, y) on Gr(f), in R^{m+n}
    multiplicity: int
    sources: tuple  # (simplex, sheet) pairs in PA mode, sheet indices in analytic mode


@dataclass(frozen=True)
class FiberIntersection:
    base_chart: tuple
    base_point: tuple  # Phi(x)
    hits: tuple[Hit, ...]
    exact: bool

    @property
    def total(self) -> int:
        return sum(h.multiplicity for h in self.hits)

    def offsets(self) -> QPoint:
        """N(Phi(x)): hit - Phi(x), each repeated with its multiplicity."""
        pts = []
        for h in self.hits:
            off = tuple(a - b for a, b in zip(h.point, self.base_point))
            pts.extend([off] * h.multiplicity)
        return QPoint(pts)

    def max_fiber_residual(self, M: BaseManifold) -> float:
        """Largest tangential component of hit - p (zero on the fiber)."""
        D = M.dchart(np.array([float(c) for c in self.base_chart]))
        p = np.array([float(c) for c in self.base_point])
        return max((float(np.max(np.abs(D.T @ (np.array([float(c) for c in h.point]) - p))))
                    for h in self.hits), default=0.0)


def _rational(x) -> bool:
    return all(isinstance(c, (int, Fraction)) and not isinstance(c, bool) for c in x)


def _base_data(M: BaseManifold, x, want_exact: bool):
    """(Phi(x), Dphi(x)) exactly or in floats."""
    if want_exact:
        x = exact.vec(x)
        y = M.phi.exact_value(x)
        return x, x + tuple(y), M.phi.exact_jac(x)
    xf = np.asarray([float(c) for c in x])
    return xf, np.concatenate([xf, M.phi.value(xf)]), M.phi.jac(xf)


class PAFiberSolver:
    """Per-simplex affine data of a PA Q-map over a full-dimensional mesh,
    used to intersect normal fibers with its graph."""

    def __init__(self, f: PAQMap):
        if f.mesh.d != f.m:
            raise ValueError("fiber intersection needs a full-dimensional domain mesh")
        self.f = f
        mesh = f.mesh
        self.S, self.Q, self.m, self.n = len(mesh.simplices), f.Q, f.m, f.n
        self.G = {}  # (s, j) -> exact rows of Df_j on s
        self.b = {}
        Gf = np.zeros((self.S, self.Q, self.n, self.m))
        bf = np.zeros((self.S, self.Q, self.n))
        for s in range(self.S):
            v0 = mesh.coords(s)[0]
            for j in range(self.Q):
                G = f.exact_gradient(s, j)
                y0 = f.sheets[s][j][0]
                b = tuple(y0[c] - exact.dot(G[c], v0) for c in range(self.n))
                self.G[s, j], self.b[s, j] = G, b
                Gf[s, j] = [[float(c) for c in row] for row in G]
                bf[s, j] = [float(c) for c in b]
        self.Gf, self.bf = Gf, bf
        V = np.array([[[float(c) for c in v] for v in mesh.coords(s)] for s in range(self.S)])
        self.v0 = V[:, 0]
        self.Binv = np.linalg.inv(np.swapaxes(V[:, 1:] - V[:, :1], 1, 2))  # (S, m, m)

    def _bary_float(self, x: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of x in every simplex (S, m+1)."""
        lam = np.einsum("sij,sj->si", self.Binv, x[None] - self.v0)
        return np.concatenate([1 - lam.sum(axis=1, keepdims=True), lam], axis=1)

    def locate_float(self, x: np.ndarray, tol: float = PREFILTER_TOL) -> int:
        lam = self._bary_float(np.asarray(x, dtype=float))
        ok = np.nonzero(np.all(lam >= -tol, axis=1))[0]
        if len(ok) == 0:
            raise ValueError(f"point {np.asarray(x).tolist()} outside the mesh")
        return int(ok[0])

    def value_float(self, x) -> np.ndarray:
        """f(x) as a (Q, n) float array."""
        x = np.asarray(x, dtype=float)
        s = self.locate_float(x)
        return np.einsum("jnm,m->jn", self.Gf[s], x) + self.bf[s]

    def value_exact(self, x) -> QPoint:
        x = exact.vec(x)
        for s in range(self.S):
            lam = self.f.mesh.barycentric(s, x)
            if lam is not None and all(l >= 0 for l in lam):
                return QPoint([self.f.sheet_at(s, j, lam) for j in range(self.Q)])
        raise ValueError(f"point {x} outside the mesh")

    def intersect(self, M: BaseManifold, xp, exact_mode: bool | None = None) -> FiberIntersection:
        if exact_mode is None:
            exact_mode = _rational(xp) and M.phi.is_polynomial
        xf = np.array([float(c) for c in xp])
        pf = np.concatenate([xf, M.phi.value(xf)])
        Df = M.phi.jac(xf)  # (n, m)
        m, n = self.m, self.n
        # (I + G Dphi^T) w = G p_x + b - p_y for every (s, j)
        A = np.eye(n) + np.einsum("sjnm,km->sjnk", self.Gf, Df)
        rhs = np.einsum("sjnm,m->sjn", self.Gf, xf) + self.bf - pf[m:]
        w = np.linalg.solve(A, rhs[..., None])[..., 0]
        x = xf - np.einsum("km,sjk->sjm", Df, w)
        lam = np.einsum("sij,sqj->sqi", self.Binv, x - self.v0[:, None])
        lam = np.concatenate([1 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
        cand = np.argwhere(np.all(lam >= -PREFILTER_TOL, axis=-1))
        if exact_mode:
            return self._exact_hits(M, xp, cand)
        return self._float_hits(xp, pf, x, w, cand)

    def _exact_hits(self, M, xp, cand) -> FiberIntersection:
        xq, p, D = _base_data(M, xp, True)
        m, n = self.m, self.n
        mesh = self.f.mesh
        found: dict[tuple, int] = {}
        sources: dict[tuple, list] = {}
        for s, j in (tuple(int(a) for a in c) for c in cand):
            G, b = self.G[s, j], self.b[s, j]
            A = [[(1 if r == c else 0) + sum(G[r][k] * D[c][k] for k in range(m)) for c in range(n)]
                 for r in range(n)]
            rhs = [exact.dot(G[r], xq) + b[r] - p[m + r] for r in range(n)]
            w = exact.solve(A, rhs)
            if w is None:
                continue
            x = tuple(xq[k] - sum(D[c][k] * w[c] for c in range(n)) for k in range(m))
            lam = mesh.barycentric(s, x)
            if lam is None or any(l < 0 for l in lam):
                continue
            pt = x + tuple(p[m + c] + w[c] for c in range(n))
            sources.setdefault(pt, []).append((s, j))
            if pt not in found:
                vals = [self.f.sheet_at(s, jj, lam) for jj in range(self.Q)]
                found[pt] = sum(1 for v in vals if v == pt[m:])
        hits = tuple(Hit(pt, k, tuple(sources[pt])) for pt, k in sorted(found.items()))
        return FiberIntersection(xq, p, hits, True)

    def _float_hits(self, xp, pf, x, w, cand) -> FiberIntersection:
        m = self.m
        pts: list[list] = []  # [point, multiplicity, sources]
        for s, j in (tuple(int(a) for a in c) for c in cand):
            pt = np.concatenate([x[s, j], pf[m:] + w[s, j]])
            for rec in pts:
                if np.linalg.norm(rec[0] - pt) <= MERGE_TOL * max(1.0, np.linalg.norm(pt)):
                    rec[2].append((s, j))
                    break
            else:
                vals = np.einsum("jnm,m->jn", self.Gf[s], x[s, j]) + self.bf[s]
                k = int(np.sum(np.linalg.norm(vals - pt[m:], axis=1) <= MERGE_TOL * max(1.0, np.linalg.norm(pt))))
                pts.append([pt, k, [(s, j)]])
        hits = tuple(Hit(tuple(float(c) for c in pt), k, tuple(src)) for pt, k, src in pts)
        return FiberIntersection(tuple(float(c) for c in xp), tuple(float(c) for c in pf), hits, False)


def analytic_fiber(M: BaseManifold, f: AnalyticSheetBundle, xp) -> FiberIntersection:
    """Newton per sheet on f_i(p_x - Dphi^T w) = p_y + w from the chart seed."""
    xf = np.array([float(c) for c in xp])
    p = np.concatenate([xf, M.phi.value(xf)])
    D = M.phi.jac(xf)
    m, n = M.m, M.n
    pts: list[list] = []
    for i, sheet in enumerate(f.sheets):
        w = sheet.value(xf) - p[m:]
        for _ in range(NEWTON_MAXIT):
            x = xf - D.T @ w
            r = sheet.value(x) - p[m:] - w
            Jr = -sheet.jac(x) @ D.T - np.eye(n)
            step = np.linalg.solve(Jr, -r)
            w = w + step
            if np.linalg.norm(step) < NEWTON_TOL:
                break
        else:
            raise FiberError(f"Newton did not converge on sheet {i} at x={xf.tolist()}")
        x = xf - D.T @ w
        if not f.domain.contains(x):
            raise FiberError(f"sheet {i} meets the fiber outside the domain of f at x={x.tolist()}")
        pt = np.concatenate([x, p[m:] + w])
        for rec in pts:
            if np.linalg.norm(rec[0] - pt) <= MERGE_TOL:
                rec[1] += 1
                rec[2].append(i)
                break
        else:
            pts.append([pt, 1, [i]])
    hits = tuple(Hit(tuple(float(c) for c in pt), k, tuple(src)) for pt, k, src in pts)
    return FiberIntersection(tuple(xf.tolist()), tuple(p.tolist()), hits, False)


_SOLVERS: dict[int, PAFiberSolver] = {}


def _solver(f: PAQMap) -> PAFiberSolver:
    key = id(f)
    if key not in _SOLVERS or _SOLVERS[key].f is not f:
        _SOLVERS[key] = PAFiberSolver(f)
    return _SOLVERS[key]


def fiber_intersect(M: BaseManifold, f: PAQMap | AnalyticSheetBundle, xp,
                    exact_mode: bool | None = None) -> FiberIntersection:
    """Points of Gr(f) on the normal fiber of M at Phi(xp), with
    multiplicities read off f; raises FiberError unless they total Q."""
    if isinstance(f, PAQMap):
        fib = _solver(f).intersect(M, xp, exact_mode)
    else:
        fib = analytic_fiber(M, f, xp)
    if fib.total != f.Q:
        raise FiberError(
            f"fiber at x={[float(c) for c in xp]} carries multiplicity {fib.total}, expected {f.Q} "
            f"(hits: {[tuple(float(c) for c in h.point) for h in fib.hits]})", fib)
    return fib


# -- estimate ledger ----------------------------------------------------------------

@dataclass
class EstimateEntry:
    name: str
    holds: bool
    value: float  # worst ratio (explicit constants) or fitted constant
    worst_point: list
    explicit_constant: bool

    def to_json(self) -> dict:
        return {"name": self.name, "holds": self.holds, "value": self.value,
                "worst_point": self.worst_point, "explicit_constant": self.explicit_constant}


@dataclass
class ReparamResult:
    samples: np.ndarray  # chart points
    N: list  # QPoint offsets per sample
    ledger: list
    hypothesis_ok: bool
    hypothesis: dict
    max_normal_residual: float
    skipped_projection: int = 0

    def entry(self, name: str) -> EstimateEntry:
        return next(e for e in self.ledger if e.name == name)

    def to_json(self) -> dict:
        return {
            "hypothesis_ok": self.hypothesis_ok,
            "hypothesis": self.hypothesis,
            "max_normal_residual": self.max_normal_residual,
            "skipped_projection": self.skipped_projection,
            "ledger": [e.to_json() for e in self.ledger],
        }


def sample_points(domain, grid: int = 33, n_random: int = 1000, seed: int = 0) -> np.ndarray:
    """Uniform grid plus uniform random points of the domain."""
    G = domain.sample(grid)
    rng = np.random.default_rng(seed)
    if domain.kind == "box":
        R = rng.uniform(domain.lo, domain.hi, size=(n_random, domain.m))
    else:
        c = np.array(domain.center)
        R = np.empty((0, domain.m))
        while len(R) < n_random:
            Z = rng.uniform(-1, 1, size=(2 * n_random, domain.m))
            Z = Z[np.linalg.norm(Z, axis=1) <= 1]
            R = np.concatenate([R, c + domain.radius * Z])
        R = R[:n_random]
    return np.concatenate([G, R])


def _f_values(f, x) -> np.ndarray:
    if isinstance(f, PAQMap):
        return _solver(f).value_float(x)
    return f.value(np.asarray(x, dtype=float))


def _lip_f(f) -> float:
    if isinstance(f, PAQMap):
        return lipschitz_constant(f)
    X = f.domain.sample(33)
    J = f.jac(X)  # (K, Q, n, m)
    return float(max(np.linalg.norm(J[k].reshape(-1, J.shape[-1]), 2) for k in range(len(X))))


def _sup_f(f) -> float:
    if isinstance(f, PAQMap):
        return max(math.sqrt(sum(float(c) ** 2 for v in sh for c in v[k]))
                   for s in f.sheets for sh in [s] for k in range(len(s[0])))
    X = f.domain.sample(33)
    return float(np.max(np.sqrt(np.sum(f.value(X) ** 2, axis=(1, 2)))))


def _domain_radius(f) -> float:
    if isinstance(f, PAQMap):
        V = f.mesh.as_float()
        c = (V.max(axis=0) + V.min(axis=0)) / 2
        return float(np.max(np.linalg.norm(V - c, axis=1)))
    d = f.domain
    if d.kind == "ball":
        return d.radius
    return float(np.linalg.norm(np.array(d.hi) - np.array(d.lo)) / 2)


def _qp(arr: np.ndarray) -> QPoint:
    return QPoint([tuple(float(c) for c in row) for row in arr])


def reparametrize(M: BaseManifold, f: PAQMap | AnalyticSheetBundle, grid: int = 33,
                  n_random: int = 1000, seed: int = 0, c0: float = DEFAULT_C0,
                  exact_mode: bool = False, projection_checks: int | None = None) -> ReparamResult:
    """Assemble N over sampled base points and check the four estimates.

    ``exact_mode`` runs every fiber over the rationals (sample points are
    converted exactly from their float values).
    """
    X = sample_points(M.domain, grid, n_random, seed)
    Q = f.Q
    lipf = _lip_f(f)
    r = _domain_radius(f)
    nm = M.norms
    hyp = {
        "phi_C2_plus_lip_f": max(nm["C0"], nm["D1"], nm["D2"]) + lipf,
        "phi_C0_plus_f_C0": nm["C0"] + _sup_f(f),
        "c0": c0,
        "r": r,
    }
    hyp_ok = hyp["phi_C2_plus_lip_f"] <= c0 and hyp["phi_C0_plus_f_C0"] <= c0 * r

    N_list, Nv, normal_res = [], [], 0.0
    for x in X:
        xp = tuple(Fraction(float(c)) for c in x) if exact_mode else tuple(x)
        fib = fiber_intersect(M, f, xp, exact_mode=exact_mode if isinstance(f, PAQMap) else None)
        off = fib.offsets()
        N_list.append(off)
        Nv.append(off.as_array())
        normal_res = max(normal_res, fib.max_fiber_residual(M))
    Nv = np.array(Nv)  # (K, Q, m+n)
    Phi = M.chart(X)
    Dphi = M.phi.jac(X)
    absN = np.sqrt(np.sum(Nv ** 2, axis=(1, 2)))
    fv = np.array([_f_values(f, x) for x in X])  # (K, Q, n)
    phiv = M.phi.value(X)
    etaf = fv.mean(axis=1)
    G_f_phi = np.sqrt(np.sum((fv - phiv[:, None]) ** 2, axis=(1, 2)))
    ledger = []

    # two-sided comparison with the explicit factor 2 sqrt(Q)
    k2 = 2 * math.sqrt(Q)
    slack = 1e-12
    lower = absN / k2 - G_f_phi
    upper = G_f_phi - k2 * absN
    viol = np.maximum(lower, upper)
    i = int(np.argmax(viol))
    ratio = np.where(absN > 0, G_f_phi / np.where(absN > 0, absN, 1), 1.0)
    ledger.append(EstimateEntry("two_sided_offset", bool(np.all(viol <= slack)),
                                float(max(np.max(ratio), np.max(1 / np.where(ratio > 0, ratio, np.inf)))),
                                X[i].tolist(), True))

    # mean estimate: fitted constant
    etaN = np.linalg.norm(Nv.mean(axis=1), axis=1)
    rhs = np.linalg.norm(etaf - phiv, axis=1) + lipf * np.linalg.norm(Dphi.reshape(len(X), -1), axis=1) * absN
    ledger.append(_fitted("mean_offset", etaN, rhs, X))

    # Lipschitz quotients of N against ||D^2 phi|| ||N||_C0 + ||D phi|| + Lip(f)
    ng = len(M.domain.sample(grid))
    quot, where = _lip_quotients(Phi[:ng], Nv[:ng])
    rhs_lip = nm["D2"] * float(np.max(absN)) + nm["D1"] + lipf
    C = quot / rhs_lip if rhs_lip > 0 else (0.0 if quot == 0 else math.inf)
    ledger.append(EstimateEntry("lipschitz_offset", C <= 100, float(C), where.tolist() if where is not None else [],
                                False))

    # projection of (p, eta o f(p)) and the offset at the foot point
    idx = range(len(X)) if projection_checks is None else range(min(projection_checks, len(X)))
    worst, worst_pt, skipped, ok = 0.0, [], 0, True
    for k in idx:
        z = np.concatenate([X[k], etaf[k]])
        try:
            pr = M.nearest_point_projection(z)
        except ProjectionError:
            skipped += 1
            continue
        if not M.domain.contains(pr.foot_chart):
            skipped += 1
            continue
        try:
            fib = fiber_intersect(M, f, tuple(pr.foot_chart), exact_mode=False if isinstance(f, PAQMap) else None)
        except FiberError:
            skipped += 1
            continue
        lhs = g_dist(fib.offsets(), QPoint.repeated(tuple(pr.q), Q))
        rhs10 = k2 * math.sqrt(float(np.sum((fv[k] - etaf[k]) ** 2)))
        if lhs > rhs10 + 1e-10:
            ok = False
        rq = lhs / rhs10 if rhs10 > 0 else (0.0 if lhs <= 1e-10 else math.inf)
        if rq >= worst:
            worst, worst_pt = rq, X[k].tolist()
    ledger.append(EstimateEntry("projected_offset", ok, float(worst), worst_pt, True))
    return ReparamResult(X, N_list, ledger, hyp_ok, hyp, normal_res, skipped)


def _fitted(name, lhs, rhs, X, cap: float = 100.0) -> EstimateEntry:
    small = 1e-13
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > small, lhs / rhs, np.where(lhs > small, np.inf, 0.0))
    i = int(np.argmax(ratio))
    return EstimateEntry(name, bool(ratio[i] <= cap), float(ratio[i]), X[i].tolist(), False)


def _lip_quotients(P: np.ndarray, Nv: np.ndarray, k: int = 8):
    """Max G(N(p), N(p'))/|p - p'| over the k nearest neighbours of each point."""
    tree = cKDTree(P)
    _, nb = tree.query(P, k=min(k + 1, len(P)))
    best, where = 0.0, None
    for i, row in enumerate(nb):
        for j in row[1:]:
            d = float(np.linalg.norm(P[i] - P[j]))
            if d == 0:
                continue
            q = g_dist(_qp(Nv[i]), _qp(Nv[j])) / d
            if q > best:
                best, where = q, P[i]
    return best, where


# -- tilted planes -------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    """Coordinates z = T x + V w with T (N x m) spanning a plane and V
    (N x n) spanning its orthogonal complement, rational entries."""

    T: tuple  # rows of T
    V: tuple

    def __post_init__(self):
        T, V = self.T, self.V
        for a in range(self.m):
            for b in range(self.n):
                if sum(T[k][a] * V[k][b] for k in range(self.N)) != 0:
                    raise ValueError("frame columns must be orthogonal")

    @classmethod
    def standard(cls, m: int, n: int) -> "Frame":
        N = m + n
        T = tuple(tuple(Fraction(int(k == a)) for a in range(m)) for k in range(N))
        V = tuple(tuple(Fraction(int(k == m + b)) for b in range(n)) for k in range(N))
        return cls(T, V)

    @classmethod
    def tilted(cls, L) -> "Frame":
        """Plane = graph of x -> L x; complement spanned by (-L^T w, w)."""
        L = [exact.vec(row) for row in L]
        n, m = len(L), len(L[0])
        T = tuple(tuple(Fraction(int(k == a)) for a in range(m)) for k in range(m)) + tuple(L)
        V = tuple(tuple(-L[b][k] for b in range(n)) for k in range(m)) + \
            tuple(tuple(Fraction(int(k == b)) for b in range(n)) for k in range(n))
        return cls(T, V)

    @property
    def N(self) -> int:
        return len(self.T)

    @property
    def m(self) -> int:
        return len(self.T[0])

    @property
    def n(self) -> int:
        return len(self.V[0])

    def point(self, x, w) -> tuple:
        return tuple(sum((self.T[k][a] * x[a] for a in range(self.m)), Fraction(0)) +
                     sum((self.V[k][b] * w[b] for b in range(self.n)), Fraction(0)) for k in range(self.N))

    def _proj(self, cols, z):
        k = len(cols[0])
        G = [[sum(cols[r][a] * cols[r][b] for r in range(self.N)) for b in range(k)] for a in range(k)]
        rhs = [sum(cols[r][a] * z[r] for r in range(self.N)) for a in range(k)]
        return exact.solve(G, rhs)

    def coords(self, z) -> tuple[tuple, tuple]:
        z = exact.vec(z)
        return self._proj(self.T, z), self._proj(self.V, z)

    def projector(self) -> np.ndarray:
        T = np.array([[float(c) for c in row] for row in self.T])
        return T @ np.linalg.pinv(T)

    def orthonormal_maps(self):
        """(R_T^{-1}, V) with T = Q_T R_T, so x = R_T^{-1} u for orthonormal u."""
        T = np.array([[float(c) for c in row] for row in self.T])
        _, R = np.linalg.qr(T)
        return np.linalg.inv(R), np.array([[float(c) for c in row] for row in self.V])


def plane_distance(a: Frame, b: Frame) -> float:
    """Operator norm of the difference of the orthogonal projections."""
    return float(np.linalg.norm(a.projector() - b.projector(), 2))


def framed_lipschitz(F: PAQMap, frame: Frame) -> float:
    """Lip of the ambient offsets V w over the plane, in orthonormal units."""
    Rinv, V = frame.orthonormal_maps()
    best = 0.0
    for s in range(len(F.mesh.simplices)):
        rows = [V @ F.gradient(s, j) @ Rinv for j in range(F.Q)]
        best = max(best, float(np.linalg.norm(np.vstack(rows), 2)))
    return best


def framed_sup(F: PAQMap, frame: Frame) -> float:
    V = np.array([[float(c) for c in row] for row in frame.V])
    best = 0.0
    for s, sheets in enumerate(F.sheets):
        for k in range(F.m + 1):
            val = sum(float(np.sum((V @ np.array([float(c) for c in sh[k]])) ** 2)) for sh in sheets)
            best = max(best, math.sqrt(val))
    return best


@dataclass(frozen=True)
class Piece:
    """A convex cell in plane coordinates carrying Q' affine sheets
    w = A x + a (exact)."""

    poly: tuple  # vertices, counter-clockwise for m = 2, increasing for m = 1
    maps: tuple  # ((A rows, a), ...)

    def value(self, j: int, x) -> tuple:
        A, a = self.maps[j]
        return tuple(exact.dot(row, x) + a_r for row, a_r in zip(A, a))

    def contains(self, x) -> bool:
        """Strict interior test."""
        if len(x) == 1:
            return self.poly[0][0] < x[0] < self.poly[-1][0]
        k = len(self.poly)
        for i in range(k):
            p, q = self.poly[i], self.poly[(i + 1) % k]
            if (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]) <= 0:
                return False
        return True


@dataclass
class TiltResult:
    g: PAQMap
    frame: Frame
    cells: list  # Piece per arrangement cell, sheets of g on it
    chain_equal: bool | None
    plane_distance: float
    sup_g: float
    lip_g: float
    sup_f: float
    lip_f: float
    radius: float
    C_sup: float
    C_lip: float

    def to_json(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("g", "frame", "cells")}
        d["simplices"] = len(self.g.mesh.simplices)
        d["cells"] = len(self.cells)
        return d


def _affine_fit(pts, vals):
    """Affine map through m+1 independent points: rows A, offset a."""
    n = len(vals[0])
    E = [exact.sub(p, pts[0]) for p in pts[1:]]
    A = []
    for r in range(n):
        A.append(exact.solve([list(e) for e in E], [v[r] - vals[0][r] for v in vals[1:]]))
    a = tuple(vals[0][r] - exact.dot(A[r], pts[0]) for r in range(n))
    return tuple(A), a


def _independent(pts, m):
    """m+1 affinely independent points among pts."""
    import itertools
    for combo in itertools.combinations(pts, m + 1):
        if _orientation(combo) != 0:
            return list(combo)
    raise TiltError("degenerate cell")


def _orientation(pts) -> int:
    m = len(pts) - 1
    E = [exact.sub(p, pts[0]) for p in pts[1:]]
    d = exact.det([[e[i] for e in E] for i in range(m)])
    return (d > 0) - (d < 0)


def _transport(poly, maps, frame_from: Frame, frame_to: Frame) -> list[Piece]:
    """Re-express each sheet of a cell in the new frame: one Piece per sheet.
    Raises TiltError when the change of plane reverses orientation."""
    m = len(poly[0])
    ref = [poly.index(p) for p in _independent(list(poly), m)]
    out = []
    for A, a in maps:
        new = [frame_to.coords(frame_from.point(p, tuple(exact.dot(row, p) + c for row, c in zip(A, a))))
               for p in poly]
        pts = [q[0] for q in new]
        if _orientation([poly[i] for i in ref]) * _orientation([pts[i] for i in ref]) <= 0:
            raise TiltError("the projection onto the new plane folds a sheet (tilt too large)")
        fit = _affine_fit([pts[i] for i in ref], [new[i][1] for i in ref])
        if m == 2 and _area2(pts) < 0:
            pts = pts[::-1]
        if m == 1 and pts[0][0] > pts[-1][0]:
            pts = pts[::-1]
        out.append(Piece(tuple(pts), (fit,)))
    return out


def _pieces(F, frame_from: Frame, frame_to: Frame) -> list[Piece]:
    """Single-sheet pieces in frame_to coordinates from a PAQMap (one per
    simplex and sheet) or from the cells of an earlier TiltResult."""
    if isinstance(F, TiltResult):
        return [q for cell in F.cells for q in _transport(cell.poly, cell.maps, frame_from, frame_to)]
    out = []
    for s in range(len(F.mesh.simplices)):
        X = F.mesh.coords(s)
        maps = tuple(_affine_fit(X, F.sheets[s][j]) for j in range(F.Q))
        out.extend(_transport(tuple(X), maps, frame_from, frame_to))
    return out


def _line_key(a, b, c):
    s = next(t for t in (a, b) if t != 0)
    return (a / s, b / s, c / s)


def _arrangement(lines, lo, hi):
    """Convex cells cut out of the box [lo, hi] by full lines (conforming:
    every cut vertex appears in both neighbours)."""
    box = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    cells = [box]
    for a, b, c in lines:
        nxt = []
        for poly in cells:
            vals = [a * p[0] + b * p[1] - c for p in poly]
            if all(v >= 0 for v in vals) or all(v <= 0 for v in vals):
                nxt.append(poly)
                continue
            for side in (True, False):
                part = _clip(poly, a, b, c, side)
                if part:
                    nxt.append(part)
        cells = nxt
    return cells


def _cells(pieces: list[Piece], Q: int, lo, hi) -> list[Piece]:
    """Common refinement of the pieces over the box, each cell carrying the
    Q sheets that cover it."""
    m = len(lo)
    if m == 1:
        cuts = {lo[0], hi[0]}
        for pc in pieces:
            cuts.update(p[0] for p in pc.poly if lo[0] < p[0] < hi[0])
        cuts = sorted(cuts)
        polys = [((a,), (b,)) for a, b in zip(cuts, cuts[1:])]
    elif m == 2:
        keys = set()
        for pc in pieces:
            P = pc.poly
            for p, q in zip(P, P[1:] + P[:1]):
                a, b = q[1] - p[1], p[0] - q[0]
                keys.add(_line_key(a, b, a * p[0] + b * p[1]))
        polys = [tuple(c) for c in _arrangement(sorted(keys), lo, hi)]
    else:
        raise NotImplementedError("tilted reparametrization is provided for m = 1, 2")
    lo_f = np.array([[min(float(p[i]) for p in pc.poly) for i in range(m)] for pc in pieces])
    hi_f = np.array([[max(float(p[i]) for p in pc.poly) for i in range(m)] for pc in pieces])
    out = []
    for poly in polys:
        k = len(poly)
        c = tuple(sum((p[i] for p in poly), Fraction(0)) / k for i in range(m))
        cf = np.array([float(t) for t in c])
        near = np.nonzero(np.all((lo_f <= cf + 1e-12) & (cf - 1e-12 <= hi_f), axis=1))[0]
        maps = [pieces[i].maps[0] for i in near if pieces[i].contains(c)]
        if len(maps) != Q:
            raise TiltError(f"cell at {[float(t) for t in c]} covered {len(maps)} times, expected {Q}")
        out.append(Piece(poly, tuple(maps)))
    return out


def _mesh_from_cells(cells: list[Piece], m: int) -> PAQMap:
    """Conforming triangulation: intervals as they are, polygons fanned
    from their centroid (so every vertex on a cell boundary is kept)."""
    verts: dict[tuple, int] = {}

    def vid(p):
        if p not in verts:
            verts[p] = len(verts)
        return verts[p]

    simplices, sheets = [], []
    for cell in cells:
        Q = len(cell.maps)
        if m == 1:
            tris = [list(cell.poly)]
        else:
            P = cell.poly
            k = len(P)
            c = (sum((p[0] for p in P), Fraction(0)) / k, sum((p[1] for p in P), Fraction(0)) / k)
            tris = [[c, P[i], P[(i + 1) % k]] for i in range(k)]
        for tri in tris:
            simplices.append([vid(p) for p in tri])
            sheets.append([[cell.value(j, p) for p in tri] for j in range(Q)])
    return PAQMap(SimplicialMesh(list(verts), simplices), sheets)


def restricted_graph(F: PAQMap, frame_from: Frame, frame_to: Frame, lo, hi) -> SimplicialCurrent:
    """G_F restricted to the cylinder over the box [lo, hi] of the new
    plane, clipped in the source coordinates and lifted to R^{m+n}."""
    m, N = F.m, frame_from.N
    items = []
    for s in range(len(F.mesh.simplices)):
        X = F.mesh.coords(s)
        if m == 2 and F.mesh.orientation_sign(s) < 0:
            X = [X[0], X[2], X[1]]
            sh = [[v[0], v[2], v[1]] for v in F.sheets[s]]
        else:
            sh = F.sheets[s]
        for j in range(F.Q):
            vals = sh[j]
            A_f, a_f = _affine_fit(X, vals)
            imgs = [frame_to.coords(frame_from.point(x, v))[0] for x, v in zip(X, vals)]
            # x' = A x + a0 on this simplex
            A, a0 = _affine_fit(X, imgs)

            def lift(x):
                return frame_from.point(x, tuple(exact.dot(r, x) + c for r, c in zip(A_f, a_f)))
            if m == 1:
                a, b = sorted([X[0][0], X[1][0]])
                l1, l2 = sorted([(lo[0] - a0[0]) / A[0][0], (hi[0] - a0[0]) / A[0][0]])
                a, b = max(a, l1), min(b, l2)
                if a < b:
                    items.append(((lift((a,)), lift((b,))), 1))
                continue
            poly = [tuple(p) for p in X]
            for r in range(m):
                poly = _clip(poly, A[r][0], A[r][1], lo[r] - a0[r], True) if poly else poly
                poly = _clip(poly, A[r][0], A[r][1], hi[r] - a0[r], False) if poly else poly
            if not poly:
                continue
            k = len(poly)
            c = (sum((p[0] for p in poly), Fraction(0)) / k, sum((p[1] for p in poly), Fraction(0)) / k)
            for i in range(k):
                items.append(((lift(c), lift(poly[i]), lift(poly[(i + 1) % k])), 1))
    return SimplicialCurrent.from_cells(m, N, items)


def lifted_graph(g: PAQMap, frame: Frame) -> SimplicialCurrent:
    m = g.m
    return graph_current(g).map_vertices(lambda v: frame.point(v[:m], v[m:]), frame.N)


def tilted_reparam(f: PAQMap | TiltResult, frame_to: Frame, lo: Sequence, hi: Sequence,
                   frame_from: Frame | None = None, check_chain: bool = True) -> TiltResult:
    """Rewrite the graph of f as the graph of g over the box [lo, hi] of
    frame_to's plane; exact in rational arithmetic. ``f`` may be an earlier
    TiltResult, whose frame and cells are then used."""
    if isinstance(f, TiltResult):
        frame_from, fmap = f.frame, f.g
    else:
        fmap = f
        frame_from = frame_from or Frame.standard(f.m, f.n)
    lo, hi = exact.vec(lo), exact.vec(hi)
    cells = _cells(_pieces(f, frame_from, frame_to), fmap.Q, lo, hi)
    g = _mesh_from_cells(cells, fmap.m)
    eq = currents_equal(lifted_graph(g, frame_to), restricted_graph(fmap, frame_from, frame_to, lo, hi)) \
        if check_chain else None
    dist = plane_distance(frame_from, frame_to)
    sg, lg = framed_sup(g, frame_to), framed_lipschitz(g, frame_to)
    sf, lf = framed_sup(fmap, frame_from), framed_lipschitz(fmap, frame_from)
    r = _domain_radius(fmap)

    def fit(num, den):
        return 0.0 if num <= 1e-14 else (num / den if den > 0 else math.inf)

    return TiltResult(g, frame_to, cells, eq, dist, sg, lg, sf, lf, r,
                      fit(sg, r * dist + sf), fit(lg, dist + lf))


def round_trip(f: PAQMap, frame_to: Frame, box1, box2, check_chain: bool = False) -> tuple[TiltResult, TiltResult, bool]:
    """Tilt over box1 of the new plane and back over box2; report whether
    the result agrees with f at every vertex of the final mesh."""
    frame0 = Frame.standard(f.m, f.n)
    there = tilted_reparam(f, frame_to, *box1, check_chain=check_chain)
    back = tilted_reparam(there, frame0, *box2, check_chain=check_chain)
    h = back.g
    ok = all(h(v) == f(v) for v in h.mesh.vertices)
    return there, back, ok
