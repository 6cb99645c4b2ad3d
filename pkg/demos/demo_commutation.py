"""Boundary and push-forward on piecewise-affine Q-valued maps.

Builds the graph current of a small two-valued map, takes its boundary
twice, checks that the boundary of the graph equals the graph of the
boundary restriction, and shows a map whose two sheets cancel.

    python3 demos/demo_commutation.py
"""
from fractions import Fraction as Fr

import numpy as np

from qcurrents import currents as cur
from qcurrents.mesh import interval_mesh
from qcurrents.qfield import PAQMap, lipschitz_constant
from qcurrents.samples import random_pa_map, sample_map


def main():
    F = sample_map()
    print(f"sample map: Q={F.Q}, m={F.m}, n={F.n}, {len(F.mesh.simplices)} triangles, "
          f"Lip={lipschitz_constant(F):.4f}")

    G = cur.graph_current(F)
    B = cur.boundary(G)
    print(f"graph current: {len(G.cells)} cells, mass {cur.mass(G):.6f}")
    print(f"its boundary: {len(B.cells)} segments; boundary of that is empty: {not cur.boundary(B)}")

    rep = cur.verify_boundary_commutation(F)
    print(f"boundary of the graph equals the graph over the boundary: {rep.exact}")

    rng = np.random.default_rng(11)
    hits = sum(cur.verify_boundary_commutation(random_pa_map(rng, 2, 2, 3, 4)).exact for _ in range(10))
    print(f"random maps (Q=3, n=2): {hits}/10 commute exactly")

    # two sheets crossing in opposite directions: the push-forward cancels
    X = PAQMap.from_vertex_values(interval_mesh(0, 1, 1), [[(Fr(0),), (Fr(1),)], [(Fr(1),), (Fr(0),)]])
    print(f"crossing pair: mass of push-forward {cur.mass(cur.push_forward(X))}, "
          f"area formula {cur.area_formula_mass(X):.1f}")


if __name__ == "__main__":
    main()
