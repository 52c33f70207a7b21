"""Print G(0, x) and the truncated G_N along the positive x axis for a trapped lattice."""

import argparse

import numpy as np

from phi4lab.kernels import green
from phi4lab.lattice import PotentialSpec, assemble_hamiltonian, build_grid, eval_potential, spectral_decompose


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--L", type=float, default=2.5)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--theta", type=float, default=12.0)
    p.add_argument("--kappa", type=float, default=4.0)
    p.add_argument("--N", type=float, default=64.0)
    args = p.parse_args()

    grid = build_grid(args.L, args.n)
    spec = PotentialSpec("power", theta=args.theta, kappa=args.kappa)
    sd = spectral_decompose(assemble_hamiltonian(grid, eval_potential(spec, grid), args.kappa))
    G, GN = green(sd), green(sd, args.N)

    pts = grid.points
    centre = int(np.argmin(np.sum(pts ** 2, axis=1)))
    axis = np.flatnonzero((np.abs(pts[:, 1] - pts[centre, 1]) < 1e-12) & (pts[:, 0] >= pts[centre, 0]))
    print(f"lowest eigenvalues: {np.round(sd.eigenvalues[:5], 4)}")
    print(f"{'r':>8} {'G':>12} {'G_N':>12}")
    for i in axis:
        r = np.hypot(*(pts[i] - pts[centre]))
        print(f"{r:8.4f} {G.entries[centre, i]:12.5g} {GN.entries[centre, i]:12.5g}")


if __name__ == "__main__":
    main()
