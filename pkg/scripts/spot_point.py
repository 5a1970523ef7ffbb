"""Optimise one circuit and print its figures of merit.

    python3 scripts/spot_point.py oat --layers 1 --gamma 0.01
    python3 scripts/spot_point.py ising --alpha 3 --layers 3 --gamma 0.01
"""
import argparse
import time

import numpy as np

from qmetro.lindblad import IntegratorConfig, NoiseSpec
from qmetro.metrology import diagnostics
from qmetro.optimize import optimize_pipeline
from qmetro.spin import SpinSystem
from qmetro.vqc import CircuitSpec, cumulative, run_circuit


def main():
    p = argparse.ArgumentParser()
    p.add_argument("kind", choices=("oat", "tat", "ising"))
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate-scale", type=float, default=0.25)
    p.add_argument("--coupling-norm", default="unit-mean", choices=("unit-mean", "kac"))
    a = p.parse_args()

    solver = "perm" if a.alpha == 0 else "dense"
    integ = IntegratorConfig(method="expm") if solver == "perm" else IntegratorConfig()
    spec = CircuitSpec(SpinSystem(a.N, a.alpha), a.kind, a.layers, NoiseSpec.uniform(a.gamma),
                       solver, integ, coupling_norm=a.coupling_norm, rate_scale=a.rate_scale)
    t0 = time.perf_counter()
    res = optimize_pipeline(spec, a.restarts, a.seed)
    rep = diagnostics(run_circuit(spec, res.x_opt))
    ces, _ = cumulative(res.x_opt)
    print(f"{a.kind} N={a.N} alpha={a.alpha} n={a.layers} gamma={a.gamma} ({solver}, "
          f"{time.perf_counter() - t0:.0f}s)")
    print(f"  F_Q/N^2      {rep.qfi / a.N**2:.4f}")
    print(f"  F_C/N^2      {rep.cfi / a.N**2:.4f}")
    print(f"  GHZ fidelity {rep.ghz_fidelity:.4f}")
    print(f"  TF fidelity  {rep.tf_fidelity:.4f}")
    print(f"  CES / pi     {ces / np.pi:.4f}")
    print(f"  x / pi       {np.array2string(res.x_opt / np.pi, precision=3)}")


if __name__ == "__main__":
    main()
