"""Where the 1-layer OAT GHZ fidelity crosses 1/2, for several dephasing-rate scales.

Thresholds scale as 1/rate_scale, which is how the default 0.25 was chosen.
"""
import numpy as np

from qmetro.lindblad import IntegratorConfig, NoiseSpec
from qmetro.metrology import ghz_fidelity_max
from qmetro.optimize import optimize_pipeline
from qmetro.spin import SpinSystem
from qmetro.vqc import CircuitSpec, run_circuit

GAMMAS = np.geomspace(0.02, 0.6, 10)


def ghz_curve(rate_scale, N=8, restarts=4):
    out = []
    for g in GAMMAS:
        spec = CircuitSpec(SpinSystem(N), "oat", 1, NoiseSpec.uniform(g), "perm",
                           IntegratorConfig(method="expm"), rate_scale=rate_scale)
        res = optimize_pipeline(spec, restarts, 0)
        out.append(ghz_fidelity_max(run_circuit(spec, res.x_opt))[0])
    return np.array(out)


def crossing(gammas, f, level=0.5):
    below = np.nonzero(f < level)[0]
    if len(below) == 0 or below[0] == 0:
        return float("nan")
    i = below[0]
    t = (f[i - 1] - level) / (f[i - 1] - f[i])
    return float(np.exp(np.log(gammas[i - 1]) + t * np.log(gammas[i] / gammas[i - 1])))


if __name__ == "__main__":
    for s in (1.0, 0.5, 0.25):
        f = ghz_curve(s)
        print(f"rate_scale {s:<5} GHZ(gamma) {np.round(f, 3)}  gamma1 ~ {crossing(GAMMAS, f):.3f}")
