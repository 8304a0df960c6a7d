"""One sample path of the truncated Galerkin system.

Integrates a smooth initial velocity under shear transport noise until the UH
functional reaches M + |x0|_U^2 or the horizon ends, then prints the norm
history every 50 steps.

    python demos/single_trajectory.py
"""
import numpy as np

from saltgalerkin.galerkin import GalerkinConfig, auto_R, galerkin_system, run
from saltgalerkin.noise import BrownianPath, build_xi_family
from saltgalerkin.operators import OperatorBundle
from saltgalerkin.studies import initial_coefficients

n = 16
bundle = OperatorBundle(noise=build_xi_family("shear", 4, 1.0, amplitude=8.0))
system = galerkin_system(bundle, n)
x0 = initial_coefficients(bundle, n, "smooth", 1.0, seed=0)
cfg = GalerkinConfig(cutoff_n=n, R=1.0, M=2.0, horizon_t=0.5, dt=1e-3)
cfg = cfg.replace(R=auto_R(cfg, float(system.norm2(x0, "H")), bundle))
path = BrownianPath(seed=7, dt=cfg.dt, count=bundle.noise_count)

rec = run(system.basis.to_field(x0), cfg, bundle, path)
print(f"R = {cfg.R:.3g}, threshold M + |x0|_U^2 = {cfg.M + rec.norm_U2[0]:.4f}")
print(f"{'t':>7} {'|x|_U^2':>10} {'|x|_H^2':>10} {'uh':>10}")
for i in range(0, len(rec.times), 50):
    print(f"{rec.times[i]:7.3f} {rec.norm_U2[i]:10.4f} {rec.norm_H2[i]:10.4f} {rec.uh_running[i]:10.4f}")
print(f"stopped at t = {rec.times[-1]:.3f} ({rec.cause.value}); "
      f"f_R stayed at 1: {bool(np.all(rec.fR == 1.0))}")
