"""Spatial refinement table for the angle gradient identity and the flow right-hand side.

Prints sup residuals at N = 32, 64, 128 and the successive ratios (16 for a
fourth-order stencil).
"""

import argparse

import numpy as np

from glmcf.angle import GraphState, angle_bundle, angle_gradient_residual, assemble_chi
from glmcf.geometry import MetricSpec, PeriodicGrid, build_metric


def residuals(family: str, f: str, Ns):
    out = []
    for N in Ns:
        spec = MetricSpec("flat") if family == "flat" else MetricSpec.from_strings("conformal", 2, f)
        m = build_metric(spec, PeriodicGrid(2, N))
        q1, q2 = m.grid.coords()
        s = GraphState.initial([0.3, 0.0], np.zeros(m.grid.shape), 0.05 * np.sin(q1) * np.sin(q2))
        b = angle_bundle(s, m)
        out.append(angle_gradient_residual(b.theta, assemble_chi(s, m), m, b.eta_inv))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--f", default="0.1*sin(q1)", help="conformal factor")
    p.add_argument("--N", type=int, nargs="+", default=[32, 64, 128])
    args = p.parse_args(argv)
    for family in ("flat", "conformal"):
        res = residuals(family, args.f, args.N)
        print(f"{family}:")
        for i, (N, r) in enumerate(zip(args.N, res)):
            ratio = f"{res[i - 1] / r:8.2f}" if i else "        "
            print(f"  N={N:4d}  residual={r:.3e}  ratio={ratio}")


if __name__ == "__main__":
    main()
