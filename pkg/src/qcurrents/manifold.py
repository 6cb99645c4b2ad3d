"""The base manifold M = {(x, phi(x)) : x in Omega} and its geometry.

Points of R^{m+n} are ordered (x, y). All evaluations are vectorized over a
leading batch of chart points ``X`` of shape (..., m).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .expr import VectorExpr
from .qfield import Domain

#: central difference step for derivatives of the normal frame
FRAME_FD_STEP = 1e-5


class FrameError(ValueError):
    pass


class ProjectionError(ValueError):
    pass


def _gram_schmidt(V: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Orthonormalize the rows of V (..., k, N) in order."""
    out = np.empty_like(V, dtype=float)
    for a in range(V.shape[-2]):
        w = V[..., a, :].astype(float).copy()
        for b in range(a):
            w -= np.sum(w * out[..., b, :], axis=-1, keepdims=True) * out[..., b, :]
        nrm = np.linalg.norm(w, axis=-1, keepdims=True)
        if np.any(nrm < tol):
            raise FrameError(f"Gram-Schmidt breakdown at vector {a}: pivot {float(np.min(nrm)):.3e}")
        out[..., a, :] = w / nrm
    return out


@dataclass(frozen=True)
class TangentNormalFrame:
    tangent: np.ndarray  # (m, m+n) rows e_1..e_m
    normal: np.ndarray  # (n, m+n) rows nu_1..nu_n


@dataclass(frozen=True)
class CurvatureData:
    A: np.ndarray  # (m, m, m+n): A(e_a, e_b) in the orthonormal tangent frame
    H: np.ndarray  # (m+n,)
    norm_A: float
    norm_H: float

    def form(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """A(X, Y) for tangent coefficient vectors X, Y in the frame."""
        return np.einsum("a,b,abk->k", X, Y, self.A)


@dataclass(frozen=True)
class ProjectionResult:
    foot_chart: np.ndarray  # x with p = Phi(x)
    p: np.ndarray
    q: np.ndarray  # z - p, normal to T_p M
    distance: float
    iterations: int
    ambiguous: bool
    inside_tube: bool


class BaseManifold:
    """Graph of phi: Omega subset R^m -> R^n."""

    def __init__(self, phi: VectorExpr, domain: Domain, cbar: float = 0.1,
                 c0_cap: float = 0.5, norm_grid: int = 65):
        if phi.nx != domain.m:
            raise ValueError("phi must be a function of x1..xm with m the domain dimension")
        self.phi = phi
        self.domain = domain
        self.cbar = cbar
        self.c0_cap = c0_cap
        self.norm_grid = norm_grid

    @classmethod
    def from_strings(cls, phi: list[str], domain: Domain, **kw) -> "BaseManifold":
        return cls(VectorExpr(phi, domain.m), domain, **kw)

    @classmethod
    def flat(cls, m: int, n: int, domain: Domain, **kw) -> "BaseManifold":
        return cls(VectorExpr(["0"] * n, m), domain, **kw)

    @property
    def m(self) -> int:
        return self.phi.nx

    @property
    def n(self) -> int:
        return self.phi.dim_out

    @property
    def N(self) -> int:
        return self.m + self.n

    @cached_property
    def is_flat(self) -> bool:
        """phi affine: A vanishes identically."""
        return self.phi.is_affine

    # -- chart ---------------------------------------------------------------
    def chart(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.concatenate([X, self.phi.value(X)], axis=-1)

    def dchart(self, X) -> np.ndarray:
        """(..., m+n, m)"""
        X = np.asarray(X, dtype=float)
        eye = np.broadcast_to(np.eye(self.m), X.shape[:-1] + (self.m, self.m))
        return np.concatenate([eye, self.phi.jac(X)], axis=-2)

    def d2chart(self, X) -> np.ndarray:
        """(..., m+n, m, m)"""
        X = np.asarray(X, dtype=float)
        z = np.zeros(X.shape[:-1] + (self.m, self.m, self.m))
        return np.concatenate([z, self.phi.hess(X)], axis=-3)

    # -- frames ----------------------------------------------------------------
    def tangent_frame(self, X) -> np.ndarray:
        """(..., m, m+n) orthonormalized chart derivatives."""
        D = np.swapaxes(self.dchart(X), -1, -2)
        return _gram_schmidt(D)

    def normal_frame(self, X) -> np.ndarray:
        """(..., n, m+n): Gram-Schmidt of the normal projections of the
        vertical basis vectors e_{m+1}, ..., e_{m+n}."""
        X = np.asarray(X, dtype=float)
        T = self.tangent_frame(X)
        V = np.zeros(X.shape[:-1] + (self.n, self.N))
        for j in range(self.n):
            V[..., j, self.m + j] = 1.0
        V = V - np.einsum("...jk,...ak,...al->...jl", V, T, T)
        return _gram_schmidt(V)

    def frames(self, x) -> TangentNormalFrame:
        x = np.asarray(x, dtype=float)
        return TangentNormalFrame(self.tangent_frame(x), self.normal_frame(x))

    def normal_projector(self, X) -> np.ndarray:
        """(..., m+n, m+n) orthogonal projection onto the normal space."""
        T = self.tangent_frame(X)
        return np.eye(self.N) - np.einsum("...ak,...al->...kl", T, T)

    def normal_frame_derivative(self, X, h: float = FRAME_FD_STEP) -> np.ndarray:
        """(..., n, m+n, m): d nu_j / d x_i by central differences."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[:-1] + (self.n, self.N, self.m))
        for i in range(self.m):
            e = np.zeros(self.m)
            e[i] = h
            out[..., i] = (self.normal_frame(X + e) - self.normal_frame(X - e)) / (2 * h)
        return out

    # -- curvature ---------------------------------------------------------------
    def chart_second_form(self, X) -> np.ndarray:
        """(..., m, m, m+n): A(d_i Phi, d_j Phi) = normal part of d_i d_j Phi."""
        P = self.normal_projector(X)
        D2 = self.d2chart(X)
        return np.einsum("...kl,...lij->...ijk", P, D2)

    def metric(self, X) -> np.ndarray:
        D = self.dchart(X)
        return np.einsum("...ki,...kj->...ij", D, D)

    def mean_curvature(self, X) -> np.ndarray:
        """(..., m+n): H = g^{ij} A(d_i Phi, d_j Phi)."""
        A = self.chart_second_form(X)
        ginv = np.linalg.inv(self.metric(X))
        return np.einsum("...ij,...ijk->...k", ginv, A)

    def second_form_norm(self, X) -> np.ndarray:
        """|A| = (sum over orthonormal a, b of |A(e_a, e_b)|^2)^(1/2)."""
        A = self.chart_second_form(X)
        ginv = np.linalg.inv(self.metric(X))
        val = np.einsum("...ia,...jb,...ijk,...abk->...", ginv, ginv, A, A)
        return np.sqrt(np.maximum(val, 0.0))

    def curvature(self, x) -> CurvatureData:
        x = np.asarray(x, dtype=float)
        Ach = self.chart_second_form(x)
        D = self.dchart(x)
        T = self.tangent_frame(x)
        # e_a = D c_a: coefficients c = pinv(D) e_a
        C = np.linalg.pinv(D) @ T.T  # (m, m): column a holds c_a
        A = np.einsum("ia,jb,ijk->abk", C, C, Ach)
        H = np.einsum("aak->k", A)
        return CurvatureData(A, H, float(np.sqrt(np.sum(A * A))), float(np.linalg.norm(H)))

    # -- norms, thickness ------------------------------------------------------
    @cached_property
    def _grid(self) -> np.ndarray:
        return self.domain.sample(self.norm_grid)

    @cached_property
    def norms(self) -> dict:
        """Sup norms of phi and its derivatives on a sampling grid."""
        G = self._grid
        def sup(a):
            return float(np.max(np.sqrt(np.sum(a.reshape(len(G), -1) ** 2, axis=1))))
        return {
            "C0": sup(self.phi.value(G)),
            "D1": sup(self.phi.jac(G)),
            "D2": sup(self.phi.hess(G)),
            "D3": sup(self.phi.d3(G)),
        }

    @property
    def c3_norm(self) -> float:
        nm = self.norms
        return max(nm["C0"], nm["D1"], nm["D2"], nm["D3"])

    @property
    def small(self) -> bool:
        """Whether the sampled C^3 norm is within the smallness threshold."""
        return self.c3_norm <= self.cbar

    @property
    def c0(self) -> float:
        """Tubular thickness: min(0.5 / sup|D^2 phi|, cap)."""
        d2 = self.norms["D2"]
        return self.c0_cap if d2 == 0 else min(0.5 / d2, self.c0_cap)

    def frame_derivative_bound(self, k: int = 17) -> float:
        """max over a grid of |D nu_j| (Frobenius), finite differences."""
        G = self.domain.sample(k)
        dn = self.normal_frame_derivative(G)
        return float(np.max(np.sqrt(np.sum(dn ** 2, axis=(-2, -1)))))

    # -- nearest point projection -------------------------------------------------
    def _newton(self, z: np.ndarray, x: np.ndarray, tol: float, maxit: int):
        for it in range(1, maxit + 1):
            r = z - self.chart(x)
            D = self.dchart(x)
            D2 = self.d2chart(x)
            g = D.T @ r
            Hm = -D.T @ D + np.einsum("k,kij->ij", r, D2)
            step = np.linalg.solve(Hm, -g)
            x = x + step
            if np.linalg.norm(step) < tol:
                return x, it, True
        return x, maxit, False

    def nearest_point_projection(self, z, tol: float = 1e-14, maxit: int = 50,
                                 seed_radius: float | None = None) -> ProjectionResult:
        """Foot point of z on M by Newton on the first-order conditions
        <z - Phi(x), d_i Phi(x)> = 0, from the chart point below z and eight
        perturbed seeds."""
        z = np.asarray(z, dtype=float)
        x0 = z[: self.m].copy()
        rad = seed_radius if seed_radius is not None else 0.1 * self.c0
        dirs = [np.zeros(self.m)]
        for k in range(8):
            d = np.zeros(self.m)
            ang = 2 * np.pi * k / 8
            d[0] = np.cos(ang)
            if self.m > 1:
                d[1] = np.sin(ang)
            elif k % 2:
                d[0] = -d[0]
            dirs.append(rad * d)
        results = []
        for d in dirs:
            try:
                x, it, ok = self._newton(z, x0 + d, tol, maxit)
            except np.linalg.LinAlgError:
                continue
            if ok:
                results.append((float(np.linalg.norm(z - self.chart(x))), x, it))
        if not results:
            raise ProjectionError(f"Newton did not converge for z={z.tolist()}; outside the regular neighbourhood?")
        results.sort(key=lambda t: t[0])
        dist, x, it = results[0]
        ambiguous = any(np.linalg.norm(xx - x) > 1e-8 for _, xx, _ in results)
        p = self.chart(x)
        q = z - p
        T = self.tangent_frame(x)
        if np.max(np.abs(T @ q)) > 1e-10 * max(1.0, np.linalg.norm(q)):
            raise ProjectionError("offset not normal to the tangent plane")
        return ProjectionResult(x, p, q, dist, it, ambiguous, dist < self.c0)

    def to_json(self) -> dict:
        return {"phi": self.phi.to_json(), "domain": self.domain.__dict__, "cbar": self.cbar}
