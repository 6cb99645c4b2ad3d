"""One test per acceptance criterion, at the stated sizes and tolerances."""
import json
import math
from fractions import Fraction as Fr
from pathlib import Path

import numpy as np

from qcurrents import cli
from qcurrents import currents as cur
from qcurrents import reparam as rp
from qcurrents import variational as var
from qcurrents.expr import VectorExpr
from qcurrents.manifold import BaseManifold
from qcurrents.mesh import interval_mesh, square_mesh
from qcurrents.qcore import QPoint, g_brute_force_sq, g_dist, g_matching
from qcurrents.qfield import AnalyticSheetBundle, Domain, PAQMap
from qcurrents.samples import random_boundary_map, random_bundle, random_pa_map

CONFIGS = Path(__file__).resolve().parent.parent / "demos" / "configs"
DYADIC = [2.0 ** -k for k in range(1, 7)]
# generic families are fitted where eps |Df| is small: local slopes reach the
# asymptotic order only below eps ~ 2^-3 for O(1) random coefficients
ASYMPTOTIC = [2.0 ** -k for k in range(4, 10)]
UNIT_SQUARE = Domain.box([0, 0], [1, 1])


def _flat(m=2, n=1, domain=UNIT_SQUARE):
    return BaseManifold.flat(m, n, domain)


def test_boundary_commutation(verdict):
    rng = np.random.default_rng(20240501)
    mismatched, biggest = 0, 0
    for _ in range(200):
        Q = int(rng.integers(1, 4))
        n = int(rng.integers(1, 3))
        k = int(rng.integers(1, 17))
        F = random_pa_map(rng, 2, n, Q, k)
        biggest = max(biggest, len(F.mesh.simplices))
        assert len(F.mesh.simplices) <= 512
        rep = cur.verify_boundary_commutation(F)
        mismatched += len(rep.mismatched) + (not rep.exact)
    verdict(mismatched == 0, f"200 maps (largest mesh {biggest} triangles), {mismatched} mismatched cells")


def test_cone_extension(verdict):
    rng = np.random.default_rng(7)
    ratios, exact = [], True
    for _ in range(50):
        u = random_boundary_map(rng, Q=int(rng.integers(1, 4)), n=int(rng.integers(1, 3)), k=int(rng.integers(1, 4)))
        ext = cur.cone_extend(u, (0, 0))
        exact &= ext.boundary_exact and ext.cone_exact
        if ext.lip_u > 0:
            ratios.append(ext.lip_G / ext.lip_u)
    c = max(ratios)
    verdict(exact and c <= 10, f"50 boundary data, boundary and cone identities exact={exact}, fitted c={c:.3f}")


def test_area_formula(verdict):
    rng = np.random.default_rng(11)
    worst, checked = 0.0, 0
    for _ in range(30):
        F = random_pa_map(rng, 2, 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        for G in (F, cur.graph_map(F)):
            if cur.no_cancellation(G).holds:
                M, A = cur.area_formula_check(G, equality=True)
                worst = max(worst, abs(M - A) / max(1.0, A))
                checked += 1
    # two sheets of the unit interval with opposite orientation onto the same image
    cancel = PAQMap.from_vertex_values(interval_mesh(0, 1, 1), [[(Fr(0),), (Fr(1),)], [(Fr(1),), (Fr(0),)]])
    strict = (not cur.no_cancellation(cancel).holds
              and cur.mass(cur.push_forward(cancel)) < cur.area_formula_mass(cancel) - 1e-12)
    cb = 0.0
    for _ in range(1000):
        n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        D = rng.normal(size=(n, m))
        cb = max(cb, abs(cur.graph_jacobian(D) - cur.cauchy_binet_jacobian(D)))
    D35 = np.array([[1.0, 2.0], [3.0, 4.0]])
    cb35 = max(abs(cur.graph_jacobian(D35) - math.sqrt(35)), abs(cur.cauchy_binet_jacobian(D35) - math.sqrt(35)))
    ok = checked >= 30 and worst <= 1e-10 and strict and cb <= 1e-10 and cb35 <= 1e-10
    verdict(ok, f"{checked} no-cancellation maps, max |M - A| = {worst:.1e}; cancelling pair strict={strict}; "
                f"Cauchy-Binet max gap {cb:.1e}, sqrt(35) gap {cb35:.1e}")


def test_graph_mass_expansion(verdict):
    f = AnalyticSheetBundle.from_strings([["x1"]], UNIT_SQUARE)
    worst_closed, worst_quartic = 0.0, 0.0
    for e in DYADIC:
        r = var.graph_mass_expansion(f, e).residual
        worst_closed = max(worst_closed, abs(r - (math.sqrt(1 + e * e) - 1 - e * e / 2)))
        worst_quartic = max(worst_quartic, abs(r + e ** 4 / 8) / (e ** 6 / 16))
    rng = np.random.default_rng(3)
    fits = []
    for _ in range(3):
        g = random_bundle(rng, 2, int(rng.integers(1, 3)), int(rng.integers(1, 4)), UNIT_SQUARE)
        sw = var.sweep(lambda e: var.graph_mass_expansion(g, e), ASYMPTOTIC)
        fits.append(sw.slope)
    ok = worst_closed <= 1e-9 and worst_quartic <= 1 and all(s.slope >= 3.8 and s.r2 >= 0.99 for s in fits)
    verdict(ok, f"closed form gap {worst_closed:.1e}, |r + e^4/8| / (e^6/16) <= {worst_quartic:.3f}; random slopes "
                + ", ".join(f"{s.slope:.3f} (R2 {s.r2:.5f})" for s in fits))


PARABOLA = BaseManifold.from_strings(["x1**2/2"], Domain.box([-0.5], [0.5]))
PARABOLOID = BaseManifold.from_strings(["(x1**2 + x2**2)/2"], Domain.box([-0.5, -0.5], [0.5, 0.5]))
NU_FAMILIES = [[["1"]], [["1"], ["-1"]], [["1 + x1**2"], ["-x1"]], [["x1"], ["2 - x1"], ["x1**2"]]]
EPS_CURVED = [0.2, 0.1, 0.05, 0.025]


def test_curved_mass_expansion(verdict):
    fits = []
    for sheets in NU_FAMILIES:
        NF = var.NormalQField.from_strings(PARABOLA, sheets)
        fits.append(var.sweep(lambda e: var.mass_expansion(NF.scaled(e)), EPS_CURVED).constant)
    NF = var.NormalQField.from_strings(PARABOLOID, [["1 + x1*x2"], ["x2 - x1"]])
    fits.append(var.sweep(lambda e: var.mass_expansion(NF.scaled(e)), EPS_CURVED).constant)
    ok = all(c.max <= 100 and c.spread <= 2 for c in fits)
    verdict(ok, "fitted C (max, spread): " + ", ".join(f"({c.max:.3f}, {c.spread:.3f})" for c in fits))


def test_curvilinear_excess(verdict):
    flat = var.NormalQField.from_strings(_flat(), [["x1"], ["-x1"]])
    s = var.sweep(lambda e: var.curvilinear_excess(flat.scaled(e)), DYADIC[:5]).slope
    rnd = var.NormalQField.from_strings(_flat(), [["x1*x2 + x2**2"], ["x1 - x2**3"]])
    s2 = var.sweep(lambda e: var.curvilinear_excess(rnd.scaled(e)), ASYMPTOTIC).slope
    fits = []
    for sheets in NU_FAMILIES[1:]:
        NF = var.NormalQField.from_strings(PARABOLA, sheets)
        fits.append(var.sweep(lambda e: var.curvilinear_excess(NF.scaled(e)), EPS_CURVED).constant)
    ok = s.slope >= 3.8 and s2.slope >= 3.8 and all(c.max <= 100 and c.spread <= 2 for c in fits)
    verdict(ok, f"flat slopes {s.slope:.3f}, {s2.slope:.3f}; curved C (max, spread): "
                + ", ".join(f"({c.max:.3f}, {c.spread:.3f})" for c in fits))


def test_cylindrical_excess(verdict):
    ball = Domain.ball([0, 0], 1)
    fams = [AnalyticSheetBundle.from_strings([["x1"], ["-x1"]], ball)]
    rng = np.random.default_rng(5)
    fams += [random_bundle(rng, 2, int(rng.integers(1, 3)), int(rng.integers(2, 4)), ball) for _ in range(5)]
    slopes = [var.sweep(lambda e: var.cylindrical_excess(f, 1.0, e), ASYMPTOTIC).slope for f in fams]
    verdict(all(s.slope >= 3.8 for s in slopes), "slopes " + ", ".join(f"{s.slope:.3f}" for s in slopes))


def test_first_variations(verdict):
    gaps, lines, ok = [], [], True

    def run(label, fn, grid):
        sw = var.sweep(lambda e: fn(e), grid)
        gaps.extend(r.extra["relative_gap"] for r in sw.reports)
        return sw

    box = UNIT_SQUARE
    graph_cases = [
        (AnalyticSheetBundle.from_strings([["x1 + x2**2/2"], ["x1*x2 - x2"]], box), ["x1*x2 + y1**2"]),
        (AnalyticSheetBundle.from_strings([["x1**2 - x2"], ["x2"], ["x1*x2"]], box), ["x2 + x1*y1"]),
        (AnalyticSheetBundle.from_strings([["x1", "x2**2"]], box), ["x1*x2 + y2", "y1*y2"]),
    ]
    for f, zeta in graph_cases:
        z = VectorExpr(zeta, 2, f.n)
        sw = run("graph", lambda e: var.graph_variation(f, z, e)[0], ASYMPTOTIC)
        ok &= sw.slope.slope >= 2.8
        lines.append(f"graph {sw.slope.slope:.3f}")

    bubble = "x1*(1 - x1)*x2*(1 - x2)"
    flat = var.NormalQField.from_strings(_flat(), [["x1*x2"], ["x1**2 - x2"]])
    w = VectorExpr(["1 + x1*x2"], 2)
    y = VectorExpr([bubble, f"x1*{bubble}"], 2)
    sw = run("outer", lambda e: var.outer_variation(flat.scaled(e), w)[0], DYADIC[1:5])
    ok &= sw.slope.slope >= 3.8
    lines.append(f"flat outer {sw.slope.slope:.3f}")
    sw = run("inner", lambda e: var.inner_variation(flat.scaled(e), y)[0], DYADIC[1:5])
    ok &= sw.slope.slope >= 3.8
    lines.append(f"flat inner {sw.slope.slope:.3f}")

    curved = var.NormalQField.from_strings(PARABOLOID, [["1 + x1*x2"], ["x2 - x1"]])
    wc = VectorExpr(["1 + x1 - x2**2"], 2)
    bump = "(1/4 - x1**2)*(1/4 - x2**2)"
    yc = VectorExpr([bump, f"(x1 + x2)*{bump}"], 2)
    for label, fn in (("curved outer", lambda e: var.outer_variation(curved.scaled(e), wc)[0]),
                      ("curved inner", lambda e: var.inner_variation(curved.scaled(e), yc)[0])):
        sw = run(label, fn, EPS_CURVED)
        ok &= sw.constant.max <= 100
        lines.append(f"{label} C {sw.constant.max:.3f}")
    worst = max(gaps)
    ok &= worst <= 1e-6
    verdict(ok, f"max FD/divergence relative gap {worst:.1e} over {len(gaps)} instances; " + ", ".join(lines))


def test_reparametrization(verdict):
    rng = np.random.default_rng(9)
    # small enough that phi's C^2 norm plus Lip(F) stays below c0
    M = BaseManifold.from_strings(["(x1**2 + x2**2)/200 - x1*x2/400"], Domain.ball([0, 0], 0.5))
    F = random_pa_map(rng, 2, 1, 3, 4, den=8192, coincide=0.5)
    solver_ok, higher = True, 0
    P = rng.uniform(-0.6, 0.6, size=(10_000, 2))
    for p in P:
        hits = rp.fiber_intersect(M, F, p)
        solver_ok &= hits.total == F.Q
        higher += any(h.multiplicity > 1 for h in hits.hits)
    for p in P[:200]:
        q = [Fr(int(round(c * 1024)), 1024) for c in p]
        solver_ok &= rp.fiber_intersect(M, F, q, exact_mode=True).total == F.Q

    f2 = PAQMap.from_affine(square_mesh(2, (-1, -1), (1, 1)),
                            [([[Fr(1, 50), 0]], [Fr(1, 100)]), ([[0, Fr(-1, 40)]], [Fr(-1, 100)])])
    tilt = rp.tilted_reparam(f2, rp.Frame.tilted([[Fr(1, 30), Fr(1, 60)]]), (Fr(-1, 2),) * 2, (Fr(1, 2),) * 2)

    res = rp.reparametrize(M, F)
    explicit = {e.name: e for e in res.ledger if e.explicit_constant}

    f1 = PAQMap.from_affine(interval_mesh(-1, 1, 4), [([[Fr(1, 20)]], [Fr(1, 50)]), ([[Fr(-1, 30)]], [0])])
    _, _, rt1 = rp.round_trip(f1, rp.Frame.tilted([[Fr(1, 10)]]), ((Fr(-3, 4),), (Fr(3, 4),)),
                              ((Fr(-1, 2),), (Fr(1, 2),)), check_chain=True)
    _, _, rt2 = rp.round_trip(f2, rp.Frame.tilted([[Fr(1, 30), Fr(1, 60)]]), ((Fr(-3, 4),) * 2, (Fr(3, 4),) * 2),
                              ((Fr(-1, 2),) * 2, (Fr(1, 2),) * 2))
    ok = (solver_ok and tilt.chain_equal and res.hypothesis_ok
          and all(e.holds for e in explicit.values()) and len(explicit) == 2 and rt1 and rt2)
    verdict(ok, f"10^4 fibers conserve Q={F.Q} ({higher} with a repeated hit): {solver_ok}; tilted chain equality "
                f"{tilt.chain_equal}; two-sided ratio {explicit['two_sided_offset'].value:.4f}, projected ratio "
                f"{explicit['projected_offset'].value:.4f} (both against 2 sqrt Q); round trips {rt1}, {rt2}")


def test_metric_layer(verdict):
    rng = np.random.default_rng(13)
    agree, axioms = True, True

    def rq(Q, n):
        return QPoint([[Fr(int(rng.integers(-8, 9)), 4) for _ in range(n)] for _ in range(Q)])

    for _ in range(1000):
        Q, n = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        S, T, U = rq(Q, n), rq(Q, n), rq(Q, n)
        agree &= g_matching(S, T).cost == g_brute_force_sq(S, T)
        dST, dTU, dSU = g_dist(S, T), g_dist(T, U), g_dist(S, U)
        axioms &= g_dist(S, S) == 0 and dST == g_dist(T, S) and dSU <= dST + dTU + 1e-12
        axioms &= (dST == 0) == (S == T)
    verdict(agree and axioms, f"1000 exact pairs with Q <= 6: Hungarian equals brute force {agree}; axioms {axioms}")


def test_determinism(verdict, tmp_path):
    runs = [
        ["expand", "--config", "flat_mass.json"],
        ["expand", "--experiment", "curved_mass.json"],
        ["excess", "--config", "curvilinear_excess.json"],
        ["excess", "--config", "cylindrical_excess.json"],
        ["vary", "--config", "graph_variation.json"],
        ["vary", "--config", "outer_variation.json"],
        ["vary", "--config", "inner_variation.json"],
        ["verify-commutation", "--config", "commutation.json", "--seed", "17"],
        ["reparam", "--config", "reparam.json", "--seed", "4"],
    ]
    identical, codes = True, []
    for i, argv in enumerate(runs):
        argv = [a if not a.endswith(".json") else str(CONFIGS / a) for a in argv]
        blobs = []
        for rep in range(2):
            out = tmp_path / f"{i}_{rep}.json"
            codes.append(cli.main(argv + ["--out", str(out)]))
            blobs.append((out.read_bytes(), out.with_suffix(".csv").read_bytes()))
        identical &= blobs[0] == blobs[1]
        json.loads(blobs[0][0])
    pf = []
    for rep in range(2):
        out = tmp_path / f"pf_{rep}.json"
        codes.append(cli.main(["push-forward", "--map", "sample", "--graph", "--out", str(out)]))
        pf.append(out.read_bytes())
    identical &= pf[0] == pf[1]
    ok = identical and all(c == 0 for c in codes)
    verdict(ok, f"{len(runs) + 1} experiments rerun twice: byte-identical {identical}, exit codes {sorted(set(codes))}")
