"""(Phi_{S/m})^m against the time-S Hamiltonian flow.

For the conjugated family F0^N is itself a time-1 flow, so the distances sit at round-off.
A symplectic-Euler step of a variable metric is not a flow, and shows the O(1/m) rate.
"""

import numpy as np

from twistkam.conjugacy import MetricField, metric_field
from twistkam.genfun import FamilySpec, make_family
from twistkam.rescaling import LiftedMap, flow_convergence, graph_frame_power
from twistkam.twistmap import TwistMap
from twistkam.variational import build_invariant_graph


def euler_map(B: MetricField) -> LiftedMap:
    def step(x, p):
        p1 = p - 0.5 * np.einsum("ni,nijk,nj->nk", p, B.gradient(x), p)
        return x + np.einsum("nij,nj->ni", B(x), p1), p1

    return LiftedMap(step, B.d, np.zeros(B.d), name="euler")


def show(title, fc):
    print(title)
    print(f"{'m':>4} {'C0 distance':>12} {'C1 distance':>12} {'ratio':>7}")
    for i, m in enumerate(fc.m):
        ratio = f"{fc.ratios[i - 1]:7.2f}" if i else ""
        print(f"{m:>4} {fc.value_distance[i]:12.3e} {fc.jacobian_distance[i]:12.3e} {ratio}")


def main():
    ms = [8, 16, 32, 64]
    x, p = np.array([[0.1], [0.6]]), np.array([[0.4], [-0.3]])

    S = make_family(FamilySpec("conjugated_integrable", amplitude=0.3))
    F = TwistMap(S)
    graph = build_invariant_graph(S, 3, 1, grid_size=65)
    B, _ = metric_field(F, graph)
    show("conjugated family, F0^N", flow_convergence(graph_frame_power(F, graph), B, 1.0, ms, x, p))

    Bv = MetricField.from_function(lambda y: (1 + 0.3 * np.cos(2 * np.pi * y[:, 0]))[:, None, None], 1, 4)
    show("symplectic Euler step of B = 1 + 0.3 cos(2 pi x)", flow_convergence(euler_map(Bv), Bv, 1.0, ms, x, p))


if __name__ == "__main__":
    main()
