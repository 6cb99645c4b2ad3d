"""Mass, excess and first-variation expansions with quadrature oracles.

Every functional is evaluated in the chart x in Omega of the base manifold.
For a normal Q-field the sheets are F_i(x) = Phi(x) + N_i(x) with
N_i(x) = sum_k c_ik(x) nu_k(x); J_i = d/dx F_i is the (m+n) x m Jacobian,
and the area element of sheet i is sqrt(det(J_i^T J_i)).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .expr import VectorExpr
from .manifold import BaseManifold
from .qfield import AnalyticSheetBundle, Domain, NormalScalingField, TangentLiftField, VerticalField

#: default Gauss-Legendre nodes per axis
DEFAULT_ORDER = 32
#: finite-difference steps for the variation oracle
FD_STEPS = (1e-2, 5e-3, 2.5e-3)


# -- small batched linear algebra ------------------------------------------------

def _gram(J: np.ndarray) -> np.ndarray:
    return np.einsum("...ki,...kj->...ij", J, J)


def area_element(J: np.ndarray) -> np.ndarray:
    """sqrt(det(J^T J)) for J of shape (..., N, m)."""
    return np.sqrt(np.maximum(np.linalg.det(_gram(J)), 0.0))


def plucker(J: np.ndarray) -> np.ndarray:
    """Plucker coordinates (all m x m minors) of the m-vector J e_1 ^ ... ^ J e_m."""
    import itertools
    N, m = J.shape[-2:]
    rows = list(itertools.combinations(range(N), m))
    return np.stack([np.linalg.det(J[..., list(I), :]) for I in rows], axis=-1)


def unit_mvector(J: np.ndarray) -> np.ndarray:
    P = plucker(J)
    return P / np.linalg.norm(P, axis=-1, keepdims=True)


def tangential_divergence(J: np.ndarray, W: np.ndarray) -> np.ndarray:
    """div of a field X along the plane spanned by J's columns, given
    W = d/dx [X o F] (so D_{J u} X = W u)."""
    G = _gram(J)
    return np.einsum("...ij,...kj,...ki->...", np.linalg.inv(G), J, W)


# -- reports ----------------------------------------------------------------

@dataclass
class ExpansionReport:
    """One evaluation of an expansion: oracle vs main terms."""

    name: str
    eps: float
    main_terms: dict
    oracle: float
    residual: float
    bound_rhs: float
    fitted_C: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        return d


def make_report(name, eps, main_terms, oracle, bound_rhs, extra=None) -> ExpansionReport:
    residual = oracle - sum(main_terms.values())
    C = abs(residual) / bound_rhs if bound_rhs > 0 else (0.0 if residual == 0 else math.inf)
    return ExpansionReport(name, float(eps), {k: float(v) for k, v in main_terms.items()},
                           float(oracle), float(residual), float(bound_rhs), float(C), extra or {})


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float


def fit_slope(eps: Sequence[float], values: Sequence[float]) -> SlopeFit:
    """Least-squares fit of log|value| against log eps."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    A = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = a * x + b
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return SlopeFit(float(a), float(b), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0)


@dataclass(frozen=True)
class ConstantFit:
    values: tuple
    max: float
    spread: float  # max / min over the grid

    @property
    def stable(self) -> bool:
        return self.spread < 2.0


def fit_constant(reports: Sequence[ExpansionReport]) -> ConstantFit:
    Cs = [r.fitted_C for r in reports]
    pos = [c for c in Cs if c > 0]
    spread = max(pos) / min(pos) if pos else 1.0
    return ConstantFit(tuple(Cs), max(Cs), spread)


# -- normal Q-fields over the base manifold ---------------------------------------

@dataclass(frozen=True)
class NormalQField:
    """N_i = scale * sum_k c_ik(x) nu_k(x), i = 1..Q, over a base manifold."""

    base: BaseManifold
    coeffs: tuple  # Q VectorExpr with n components in x1..xm
    scale: float = 1.0

    @classmethod
    def from_strings(cls, base: BaseManifold, sheets: Sequence[Sequence[str]], scale: float = 1.0) -> "NormalQField":
        return cls(base, tuple(VectorExpr(list(s), base.m) for s in sheets), scale)

    @property
    def Q(self) -> int:
        return len(self.coeffs)

    def scaled(self, eps: float) -> "NormalQField":
        return replace(self, scale=self.scale * eps)

    def quadrature(self, order: int = DEFAULT_ORDER):
        return self.base.domain.quadrature(order)

    def fields(self, X: np.ndarray) -> dict:
        """All pointwise data at chart points X (K, m)."""
        M = self.base
        Phi = M.chart(X)
        DPhi = M.dchart(X)
        nu = M.normal_frame(X)  # (K, n, N)
        if M.is_flat:
            dnu = np.zeros(nu.shape + (M.m,))
        else:
            dnu = M.normal_frame_derivative(X)  # (K, n, N, m)
        c = self.scale * np.stack([f.value(X) for f in self.coeffs], axis=1)  # (K, Q, n)
        dc = self.scale * np.stack([f.jac(X) for f in self.coeffs], axis=1)  # (K, Q, n, m)
        N = np.einsum("kqa,kan->kqn", c, nu)
        DN = np.einsum("kqai,kan->kqni", dc, nu) + np.einsum("kqa,kani->kqni", c, dnu)
        g = _gram(DPhi)
        ginv = np.linalg.inv(g)
        return {"X": X, "Phi": Phi, "DPhi": DPhi, "N": N, "DN": DN, "g": g, "ginv": ginv,
                "sqrtg": np.sqrt(np.linalg.det(g))}

    def normality_defect(self, k: int = 17) -> float:
        """max |<N_i, tangent>| over a sample grid (zero by construction)."""
        X = self.base.domain.sample(k)
        d = self.fields(X)
        T = self.base.tangent_frame(X)
        return float(np.max(np.abs(np.einsum("kqn,kan->kqa", d["N"], T)))) if len(X) else 0.0

    def inside_tube(self, k: int = 17) -> bool:
        X = self.base.domain.sample(k)
        d = self.fields(X)
        return bool(np.max(np.linalg.norm(d["N"], axis=-1)) < self.base.c0)

    def lipschitz_estimate(self, k: int = 33) -> float:
        """Sampled sup of |DN| (tangential derivative, all sheets)."""
        X = self.base.domain.sample(k)
        d = self.fields(X)
        return float(np.sqrt(np.max(_dn_sq(d).sum(axis=1))))


def _dn_sq(d: dict) -> np.ndarray:
    """|DN_i|^2 (K, Q): squared norm of the tangential derivative."""
    return np.einsum("kqni,kqnj,kij->kq", d["DN"], d["DN"], d["ginv"])


def _geometry(NF: NormalQField, X: np.ndarray) -> dict:
    M = NF.base
    if M.is_flat:
        K = len(X)
        return {"H": np.zeros((K, M.N)), "normA": np.zeros(K)}
    return {"H": M.mean_curvature(X), "normA": M.second_form_norm(X)}


def exact_mass(NF: NormalQField, order: int = DEFAULT_ORDER) -> float:
    """sum_i integral over Omega of sqrt(det(J_i^T J_i)) (the mass of T_F
    when no cancellation occurs)."""
    X, w = NF.quadrature(order)
    d = NF.fields(X)
    J = d["DPhi"][:, None] + d["DN"]
    return float(np.sum(w[:, None] * area_element(J)))


def _pointwise_terms(NF: NormalQField, d: dict, geo: dict) -> dict:
    Q = NF.Q
    dn2 = _dn_sq(d)  # (K, Q)
    etaN = d["N"].mean(axis=1)
    HN = np.einsum("kn,kn->k", geo["H"], etaN)
    absN2 = np.sum(d["N"] ** 2, axis=(1, 2))
    absDN2 = dn2.sum(axis=1)
    return {"dn2": dn2, "absDN2": absDN2, "absN2": absN2, "HN": HN, "Q": Q, "etaN": etaN}


def mass_expansion(NF: NormalQField, order: int = DEFAULT_ORDER) -> ExpansionReport:
    """M(T_F) against Q H^m(M) - Q int <H, eta o N> + 1/2 int |DN|^2."""
    X, w = NF.quadrature(order)
    d = NF.fields(X)
    geo = _geometry(NF, X)
    t = _pointwise_terms(NF, d, geo)
    sg = d["sqrtg"] * w
    J = d["DPhi"][:, None] + d["DN"]
    oracle = float(np.sum(w[:, None] * area_element(J)))
    Q = NF.Q
    main = {
        "Q_area": Q * float(np.sum(sg)),
        "mean_curvature": -Q * float(np.sum(sg * t["HN"])),
        "dirichlet": 0.5 * float(np.sum(sg * t["absDN2"])),
    }
    A = geo["normA"]
    absN = np.sqrt(np.sum(d["N"] ** 2, axis=2))  # (K, Q)
    rhs = np.sum(A[:, None] ** 2 * absN ** 2 + A[:, None] * absN * t["dn2"] + t["dn2"] ** 2, axis=1)
    return make_report("mass_expansion", NF.scale, main, oracle, float(np.sum(sg * rhs)),
                       {"hypothesis_smallness": NF.base.small})


def weighted_mass(NF: NormalQField, h: Callable[[np.ndarray], np.ndarray] | None = None,
                  g: Callable[[np.ndarray], np.ndarray] | None = None,
                  order: int = DEFAULT_ORDER) -> tuple[ExpansionReport | None, ExpansionReport | None]:
    """Weighted mass identities.

    ``h`` is a function on R^{m+n}: compares the integral of h against
    ||T_F|| with sum_i of the integral of h o F_i over M. ``g`` is a
    function on the chart (so h = g o projection): compares against
    integral over M of (Q (1 - <H, eta o N>) + 1/2 |DN|^2) g.
    """
    X, w = NF.quadrature(order)
    d = NF.fields(X)
    geo = _geometry(NF, X)
    t = _pointwise_terms(NF, d, geo)
    sg = d["sqrtg"] * w
    J = d["DPhi"][:, None] + d["DN"]
    jac = area_element(J)  # (K, Q)
    A = geo["normA"]
    absN = np.sqrt(np.sum(d["N"] ** 2, axis=2))
    out_h = out_g = None
    if h is not None:
        F = d["Phi"][:, None] + d["N"]
        hv = h(F.reshape(-1, F.shape[-1])).reshape(F.shape[:2])
        lhs = float(np.sum(w[:, None] * hv * jac))
        base = float(np.sum(sg[:, None] * hv))
        hsup = float(np.max(np.abs(hv)))
        rhs = np.sum(A[:, None] * np.abs(hv) * absN, axis=1) + hsup * (t["absDN2"] + A * t["absN2"])
        out_h = make_report("weighted_mass_h", NF.scale, {"sum_h_o_F": base}, lhs, float(np.sum(sg * rhs)))
    if g is not None:
        gv = g(X)
        lhs = float(np.sum(w * gv * jac.sum(axis=1)))
        Q = NF.Q
        main = {
            "Q_g": Q * float(np.sum(sg * gv)),
            "mean_curvature": -Q * float(np.sum(sg * t["HN"] * gv)),
            "dirichlet": 0.5 * float(np.sum(sg * t["absDN2"] * gv)),
        }
        rhs = (A ** 2 * t["absN2"] + t["absDN2"] ** 2) * np.abs(gv)
        out_g = make_report("weighted_mass_g", NF.scale, main, lhs, float(np.sum(sg * rhs)))
    return out_h, out_g


def curvilinear_excess(NF: NormalQField, order: int = DEFAULT_ORDER) -> ExpansionReport:
    """int |T_F-orientation - M-orientation o p|^2 d||T_F|| against int |DN|^2."""
    X, w = NF.quadrature(order)
    d = NF.fields(X)
    geo = _geometry(NF, X)
    t = _pointwise_terms(NF, d, geo)
    sg = d["sqrtg"] * w
    J = d["DPhi"][:, None] + d["DN"]
    tau = unit_mvector(J)  # (K, Q, P)
    mu = unit_mvector(d["DPhi"])[:, None]  # (K, 1, P)
    lhs = float(np.sum(w[:, None] * np.sum((tau - mu) ** 2, axis=-1) * area_element(J)))
    main = {"dirichlet": float(np.sum(sg * t["absDN2"]))}
    rhs = geo["normA"] ** 2 * t["absN2"] + t["absDN2"] ** 2
    return make_report("curvilinear_excess", NF.scale, main, lhs, float(np.sum(sg * rhs)))


# -- graphs over flat domains ---------------------------------------------------

def graph_field(f: AnalyticSheetBundle) -> NormalQField:
    """N_i = (0, f_i) over the flat base Omega x {0}."""
    base = BaseManifold.flat(f.m, f.n, f.domain)
    return NormalQField(base, f.sheets, 1.0)


def graph_mass_expansion(f: AnalyticSheetBundle, eps: float = 1.0, order: int = DEFAULT_ORDER) -> ExpansionReport:
    rep = mass_expansion(graph_field(f).scaled(eps), order)
    rep.name = "graph_mass_expansion"
    return rep


def cylindrical_excess(f: AnalyticSheetBundle, s: float, eps: float = 1.0,
                       order: int = DEFAULT_ORDER) -> ExpansionReport:
    """Excess of G_f in the cylinder over B_s against the tilted plane of
    the mean gradient A = average of D(eta o f) over B_s."""
    center = np.array(f.domain.center if f.domain.kind == "ball" else
                      [(a + b) / 2 for a, b in zip(f.domain.lo, f.domain.hi)])
    X, w = Domain.ball(center, s).quadrature(order)
    if not np.all(f.domain.contains(X)):
        raise ValueError("B_s must lie inside the domain of f")
    Df = eps * f.jac(X)  # (K, Q, n, m)
    Q, n, m = Df.shape[1:]
    vol = float(np.sum(w))
    A = np.einsum("k,kqnm->nm", w, Df) / (Q * vol)
    eye = np.broadcast_to(np.eye(m), Df.shape[:2] + (m, m))
    J = np.concatenate([eye, Df], axis=-2)  # (K, Q, m+n, m)
    tau_i = unit_mvector(J)
    tau = unit_mvector(np.concatenate([np.eye(m), A], axis=0))
    lhs = float(np.sum(w[:, None] * np.sum((tau_i - tau) ** 2, axis=-1) * area_element(J)))
    rhs_main = float(np.sum(w[:, None] * np.sum((Df - A) ** 2, axis=(-2, -1))))
    absDf2 = np.sum(Df ** 2, axis=(1, 2, 3))
    bound = float(np.sum(w * absDf2 ** 2))
    return make_report("cylindrical_excess", eps, {"G_Df_QA_sq": rhs_main}, lhs, bound,
                       {"A": A.tolist(), "s": s})


# -- first variations -------------------------------------------------------------

@dataclass(frozen=True)
class FDResult:
    value: float
    error_estimate: float
    raw: tuple  # central differences at each step


def fd_derivative(mass_of: Callable[[float], float], steps: Sequence[float] = FD_STEPS) -> FDResult:
    """Central differences with two levels of Richardson extrapolation
    (steps must halve)."""
    D = [(mass_of(h) - mass_of(-h)) / (2 * h) for h in steps]
    R1 = [(4 * D[k + 1] - D[k]) / 3 for k in range(len(D) - 1)]
    if len(R1) >= 2:
        R2 = (16 * R1[1] - R1[0]) / 15
        err = abs(R2 - R1[1])
    else:
        R2 = R1[0]
        err = abs(R1[0] - D[-1])
    return FDResult(float(R2), float(err), tuple(D))


@dataclass(frozen=True)
class VariationCheck:
    fd: float
    divergence: float
    fd_error: float
    scale: float  # max(|delta|, int |div X| d||T||), the reference for relative agreement

    @property
    def relative_gap(self) -> float:
        return abs(self.fd - self.divergence) / self.scale if self.scale > 0 else abs(self.fd - self.divergence)

    def agrees(self, tol: float = 1e-6) -> bool:
        return self.relative_gap <= tol


class _Deformation:
    """Sheet Jacobians J_i(eps) of the deformed family, plus d/dx [X o F_i]."""

    def jacobians(self, eps: float) -> tuple[np.ndarray, np.ndarray]:  # (J, weights)
        raise NotImplementedError

    def field_derivative(self) -> np.ndarray:
        raise NotImplementedError

    def mass(self, eps: float) -> float:
        J, w = self.jacobians(eps)
        return float(np.sum(w[:, None] * area_element(J)))

    def divergence_integral(self) -> tuple[float, float]:
        J, w = self.jacobians(0.0)
        div = tangential_divergence(J, self.field_derivative())
        ae = area_element(J)
        return float(np.sum(w[:, None] * div * ae)), float(np.sum(w[:, None] * np.abs(div) * ae))

    def check(self, steps: Sequence[float] = FD_STEPS) -> VariationCheck:
        fd = fd_derivative(self.mass, steps)
        div, absdiv = self.divergence_integral()
        return VariationCheck(fd.value, div, fd.error_estimate, max(abs(div), absdiv))


class AmbientDeformation(_Deformation):
    """Phi_eps(z) = z + eps X(z) for a polynomial field X on R^{m+n}
    (a VectorExpr in x1..xm, y1..yn with m+n components)."""

    def __init__(self, NF: NormalQField, field: VectorExpr, order: int = DEFAULT_ORDER):
        self.X, self.w = NF.quadrature(order)
        d = NF.fields(self.X)
        self.J0 = d["DPhi"][:, None] + d["DN"]
        F = d["Phi"][:, None] + d["N"]
        self.W = np.einsum("kqab,kqbi->kqai", field.jac(F), self.J0)

    def jacobians(self, eps):
        return self.J0 + eps * self.W, self.w

    def field_derivative(self):
        return self.W


def fd_variation(deformation, steps: Sequence[float] = FD_STEPS, target=None,
                 order: int = DEFAULT_ORDER) -> VariationCheck:
    """First variation by finite differences of the deformed masses, next
    to the divergence formula on the same quadrature. ``deformation`` is a
    deformation or a field spec acting on ``target``."""
    if not isinstance(deformation, _Deformation):
        deformation = make_deformation(deformation, target, order)
    return deformation.check(steps)


class GraphDeformation(_Deformation):
    """Phi_eps(x, y) = (x, y + eps zeta(x, y)) acting on G_f."""

    def __init__(self, f: AnalyticSheetBundle, zeta: VectorExpr, order: int = DEFAULT_ORDER, scale: float = 1.0):
        self.f, self.zeta, self.scale = f, zeta, scale
        self.X, self.w = f.domain.quadrature(order)
        self.F = scale * f.value(self.X)  # (K, Q, n)
        self.Df = scale * f.jac(self.X)  # (K, Q, n, m)
        m = f.m
        XY = np.concatenate([np.broadcast_to(self.X[:, None], self.F.shape[:2] + (m,)), self.F], axis=-1)
        Dz = zeta.jac(XY)  # (K, Q, n, m+n)
        self.Dxz, self.Dyz = Dz[..., :m], Dz[..., m:]
        self.total = self.Dxz + np.einsum("kqab,kqbm->kqam", self.Dyz, self.Df)

    def _J(self, Dg):
        K, Q, n, m = Dg.shape
        eye = np.broadcast_to(np.eye(m), (K, Q, m, m))
        return np.concatenate([eye, Dg], axis=-2)

    def jacobians(self, eps):
        return self._J(self.Df + eps * self.total), self.w

    def field_derivative(self):
        K, Q, n, m = self.Df.shape
        return np.concatenate([np.zeros((K, Q, m, m)), self.total], axis=-2)


class OuterDeformation(_Deformation):
    """Phi_eps(p) = p + eps X(p), X(p) = w(p(p)) (p - p(p)): sheets become
    Phi + (1 + eps w) N_i."""

    def __init__(self, NF: NormalQField, wfun: VectorExpr, order: int = DEFAULT_ORDER):
        self.NF = NF
        self.X, self.w = NF.quadrature(order)
        self.d = NF.fields(self.X)
        self.wv = wfun.value(self.X)[:, 0]
        self.dw = wfun.jac(self.X)[:, 0, :]  # (K, m)
        self.NxDw = np.einsum("kqn,ki->kqni", self.d["N"], self.dw)

    def jacobians(self, eps):
        d = self.d
        J = d["DPhi"][:, None] + (1 + eps * self.wv)[:, None, None, None] * d["DN"] + eps * self.NxDw
        return J, self.w

    def field_derivative(self):
        return self.wv[:, None, None, None] * self.d["DN"] + self.NxDw


class InnerDeformation(_Deformation):
    """Phi_eps(p) = Psi_eps(p(p)) + (p - p(p)) with Psi_eps(Phi(x)) =
    Phi(x + eps y(x)), whose generator is Y = DPhi y."""

    def __init__(self, NF: NormalQField, y: VectorExpr, order: int = DEFAULT_ORDER):
        self.NF = NF
        self.X, self.w = NF.quadrature(order)
        self.d = NF.fields(self.X)
        self.y = y.value(self.X)  # (K, m)
        self.Dy = y.jac(self.X)  # (K, m, m)
        self.base = NF.base

    def jacobians(self, eps):
        m = self.base.m
        Xs = self.X + eps * self.y
        DPhi = self.base.dchart(Xs) @ (np.eye(m) + eps * self.Dy)
        return DPhi[:, None] + self.d["DN"], self.w

    def field_derivative(self):
        W = self.tangent_field_derivative()
        return np.broadcast_to(W[:, None], self.d["DN"].shape).copy()

    def tangent_field_derivative(self) -> np.ndarray:
        """d/dx [DPhi y] (K, N, m)."""
        D2 = self.base.d2chart(self.X)
        return np.einsum("knij,kj->kni", D2, self.y) + np.einsum("knj,kji->kni", self.d["DPhi"], self.Dy)


def make_deformation(spec, target, order: int = DEFAULT_ORDER) -> _Deformation:
    """The isotopy generated by a field spec: vertical fields act on the
    graph of an AnalyticSheetBundle, normal-scaling and tangent-lift fields
    on a NormalQField."""
    if isinstance(spec, VerticalField) and isinstance(target, AnalyticSheetBundle):
        return GraphDeformation(target, spec.zeta, order)
    if isinstance(spec, NormalScalingField) and isinstance(target, NormalQField):
        return OuterDeformation(target, spec.phi, order)
    if isinstance(spec, TangentLiftField) and isinstance(target, NormalQField):
        return InnerDeformation(target, spec.y, order)
    raise TypeError(f"no deformation for {type(spec).__name__} acting on {type(target).__name__}")


def graph_variation(f: AnalyticSheetBundle, zeta: VectorExpr, eps: float = 1.0,
                    order: int = DEFAULT_ORDER) -> tuple[ExpansionReport, VariationCheck]:
    """First variation of G_{eps f} along chi = (0, zeta) against
    int sum_i (D_x zeta + D_y zeta . Df_i) : Df_i."""
    dfm = GraphDeformation(f, zeta, order, eps)
    chk = dfm.check()
    main = float(np.sum(dfm.w[:, None] * np.sum(dfm.total * dfm.Df, axis=(-2, -1))))
    absDf = np.sqrt(np.sum(dfm.Df ** 2, axis=(1, 2, 3)))
    absDz = np.max(np.sqrt(np.sum(dfm.Dxz ** 2, axis=(-2, -1)) + np.sum(dfm.Dyz ** 2, axis=(-2, -1))), axis=1)
    rhs = float(np.sum(dfm.w * absDz * absDf ** 3))
    rep = make_report("graph_variation", eps, {"main": main}, chk.fd, rhs,
                      {"divergence_formula": chk.divergence, "relative_gap": chk.relative_gap})
    return rep, chk


def outer_variation(NF: NormalQField, wfun: VectorExpr, order: int = DEFAULT_ORDER) -> tuple[ExpansionReport, VariationCheck]:
    """Outer variation with X(p) = w(p(p)) (p - p(p)); ``wfun`` is the test
    function in chart coordinates."""
    dfm = OuterDeformation(NF, wfun, order)
    chk = dfm.check()
    d = dfm.d
    X = dfm.X
    geo = _geometry(NF, X)
    t = _pointwise_terms(NF, d, geo)
    sg = d["sqrtg"] * dfm.w
    # (N_i (x) Dw) : DN_i with Dw the gradient on M and DN_i the derivative on M
    cross = np.einsum("kqn,kqni,kij,kj->k", d["N"], d["DN"], d["ginv"], dfm.dw)
    main = float(np.sum(sg * (dfm.wv * t["absDN2"] + cross)))
    err1 = -NF.Q * float(np.sum(sg * dfm.wv * t["HN"]))
    A = geo["normA"]
    absN = np.sqrt(t["absN2"])
    absDN = np.sqrt(t["absDN2"])
    gradw = np.sqrt(np.einsum("ki,kij,kj->k", dfm.dw, d["ginv"], dfm.dw))
    aw = np.abs(dfm.wv)
    rhs = (aw * A ** 2 * absN ** 2
           + aw * (absDN ** 2 * absN * A + absDN ** 4)
           + gradw * (absDN ** 3 * absN + absDN * absN ** 2 * A))
    rep = make_report("outer_variation", NF.scale, {"main": main, "Err1": err1}, chk.fd,
                      float(np.sum(sg * rhs)),
                      {"divergence_formula": chk.divergence, "relative_gap": chk.relative_gap})
    return rep, chk


def inner_variation(NF: NormalQField, y: VectorExpr, order: int = DEFAULT_ORDER,
                    dh: float = 1e-5) -> tuple[ExpansionReport, VariationCheck]:
    """Inner variation along X = Y o p with Y = DPhi y."""
    dfm = InnerDeformation(NF, y, order)
    chk = dfm.check()
    d = dfm.d
    X = dfm.X
    M = NF.base
    geo = _geometry(NF, X)
    t = _pointwise_terms(NF, d, geo)
    sg = d["sqrtg"] * dfm.w
    W = dfm.tangent_field_derivative()  # (K, N, m): column j = D_{d_j Phi} Y
    ginv = d["ginv"]
    divY = np.einsum("kij,knj,kni->k", ginv, d["DPhi"], W)
    U = np.einsum("kij,knj,knl->kil", ginv, d["DPhi"], W)  # chart coefficients of nabla Y
    # sum_i DN_i : (DN_i . D_M Y) = tr(U^T L^T L g^{-1}) per sheet
    LtL = np.einsum("kqni,kqnj->kqij", d["DN"], d["DN"])
    cross = np.einsum("kab,kqac,kcb->k", U, LtL, ginv)
    main = float(np.sum(sg * (0.5 * t["absDN2"] * divY - cross)))
    if M.is_flat:
        DYH = np.zeros_like(geo["H"])
    else:
        DYH = (M.mean_curvature(X + dh * dfm.y) - M.mean_curvature(X - dh * dfm.y)) / (2 * dh)
    err1 = -NF.Q * float(np.sum(sg * (t["HN"] * divY + np.einsum("kn,kn->k", DYH, t["etaN"]))))
    A = geo["normA"]
    absN = np.sqrt(t["absN2"])
    absDN = np.sqrt(t["absDN2"])
    Yv = np.einsum("kni,ki->kn", d["DPhi"], dfm.y)
    absY = np.linalg.norm(Yv, axis=1)
    absDY = np.sqrt(np.einsum("kni,knj,kij->k", W, W, ginv))
    rhs = (A ** 2 * (absDY * absN ** 2 + absY * absN * absDN)
           + absY * A * absDN ** 2 * (absN + absDN)
           + absDY * (A * absN ** 2 * absDN + absDN ** 4))
    rep = make_report("inner_variation", NF.scale, {"main": main, "Err1": err1}, chk.fd,
                      float(np.sum(sg * rhs)),
                      {"divergence_formula": chk.divergence, "relative_gap": chk.relative_gap})
    return rep, chk


@dataclass
class Sweep:
    reports: list
    slope: SlopeFit | None
    constant: ConstantFit

    def to_json(self) -> dict:
        return {
            "reports": [r.to_json() for r in self.reports],
            "slope": asdict(self.slope) if self.slope else None,
            "fitted_C": {"values": list(self.constant.values), "max": self.constant.max,
                         "spread": self.constant.spread},
        }


def sweep(fn: Callable[[float], ExpansionReport], eps_grid: Sequence[float]) -> Sweep:
    """Evaluate fn over the grid; fit log|residual| against log eps."""
    reports = [fn(e) for e in eps_grid]
    res = [r.residual for r in reports]
    slope = fit_slope(eps_grid, res) if len(reports) >= 2 and all(r != 0 for r in res) else None
    return Sweep(reports, slope, fit_constant(reports))


def quadrature_drift(fn: Callable[[int], ExpansionReport], order: int = DEFAULT_ORDER) -> float:
    """Largest change of oracle or main terms when the node count doubles."""
    a, b = fn(order), fn(2 * order)
    diffs = [abs(a.oracle - b.oracle)] + [abs(a.main_terms[k] - b.main_terms[k]) for k in a.main_terms]
    return max(diffs)
