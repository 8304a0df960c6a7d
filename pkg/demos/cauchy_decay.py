"""Galerkin Cauchy decay on the 2D SALT bundle.

Runs coupled cutoffs m and 2m from the same initial data and noise, and prints
the mean UH-norm difference with its standard error. The differences should
shrink as m grows.

    python demos/cauchy_decay.py
"""
from saltgalerkin.galerkin import GalerkinConfig
from saltgalerkin.noise import build_xi_family
from saltgalerkin.operators import OperatorBundle
from saltgalerkin.studies import StudySpec, cauchy_decay_study

bundle = OperatorBundle(noise=build_xi_family("shear", 4, 1.0))
cfg = GalerkinConfig(cutoff_n=32, R=1e3, M=10.0, horizon_t=0.25, dt=1e-3)
spec = StudySpec("cauchy_decay", cfg, bundle, [4, 8, 16, 32], 100, seed=1,
                 params={"initial": "smooth", "threads": 4})
res = cauchy_decay_study(spec)

print(f"{'m':>4} {'E|Psi^2m - Psi^m|^2_UH':>24} {'stderr':>10}")
for r in res.select("uh_diff"):
    print(f"{r['param_value']:>4} {r['mean']:>24.4e} {r['stderr']:>10.2e}")
print(f"log-log slope in lambda_m: {res.get('slope')['mean']:.2f}")
