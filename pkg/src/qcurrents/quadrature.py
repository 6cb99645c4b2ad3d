"""Quadrature rules: tensor Gauss-Legendre on boxes, collapsed Gauss-Jacobi
on simplices, polar rules on discs."""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def _legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    return (x + 1) / 2, w / 2


def gauss_box(lo: Sequence[float], hi: Sequence[float], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule with n nodes per axis on prod [lo_k, hi_k]."""
    t, w = _legendre01(n)
    axes = [lo_k + (hi_k - lo_k) * t for lo_k, hi_k in zip(lo, hi)]
    wts = [(hi_k - lo_k) * w for lo_k, hi_k in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    ww = np.ones(1)
    for wk in wts:
        ww = np.multiply.outer(ww, wk).ravel()
    return pts, ww


@lru_cache(maxsize=None)
def reference_simplex_rule(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical-product rule on {l >= 0, sum l <= 1} in R^m, exact to degree 2n-1.

    Returns barycentric-free coordinates (K, m) and weights summing to 1/m!.
    """
    if m == 0:
        return np.zeros((1, 0)), np.ones(1)
    ts, ws = [], []
    for k in range(m):
        alpha = m - 1 - k
        x, w = roots_jacobi(n, alpha, 0)
        ts.append((x + 1) / 2)
        ws.append(w / 2 ** (alpha + 1))
    grids = np.stack(np.meshgrid(*ts, indexing="ij"), axis=-1).reshape(-1, m)
    wgrid = np.ones(1)
    for wk in ws:
        wgrid = np.multiply.outer(wgrid, wk).ravel()
    pts = np.empty_like(grids)
    rest = np.ones(len(grids))
    for k in range(m):
        pts[:, k] = rest * grids[:, k]
        rest = rest * (1 - grids[:, k])
    return pts, wgrid


def simplex_rule(vertices: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights on the m-simplex with the given (m+1, N) vertices,
    weights scaled by the intrinsic m-volume."""
    v = np.asarray(vertices, dtype=float)
    m = len(v) - 1
    lam, w = reference_simplex_rule(m, n)
    E = (v[1:] - v[0]).T  # (N, m)
    pts = v[0] + lam @ E.T
    g = E.T @ E
    jac = math.sqrt(max(np.linalg.det(g), 0.0)) if m else 1.0
    return pts, w * jac


def disc_rule(center: Sequence[float], radius: float, nr: int, ntheta: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar rule on a disc: Gauss-Legendre in r (with the r Jacobian),
    trapezoid in theta (spectrally accurate for smooth periodic integrands)."""
    r, wr = _legendre01(nr)
    r, wr = radius * r, radius * wr
    th = 2 * np.pi * np.arange(ntheta) / ntheta
    wt = np.full(ntheta, 2 * np.pi / ntheta)
    R, T = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([center[0] + R * np.cos(T), center[1] + R * np.sin(T)], axis=-1).reshape(-1, 2)
    w = np.multiply.outer(wr * r, wt).ravel()
    return pts, w


def ball_rule(center: Sequence[float], radius: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on B_radius(center) in R^1 or R^2."""
    m = len(center)
    if m == 1:
        return gauss_box([center[0] - radius], [center[0] + radius], n)
    if m == 2:
        return disc_rule(center, radius, n, 2 * n)
    raise NotImplementedError("ball quadrature is provided for m = 1, 2")


def ball_volume(m: int, radius: float) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1) * radius ** m
