"""Sampled assumption constants c(n) on the Stokes-only and full SALT bundles.

The Stokes rows match the closed-form power-counting values (for example
kappa = 2 for coercivity). The SALT rows show how the estimated c varies with n.

    python demos/assumption_constants.py
"""
from saltgalerkin.assumptions import check_all
from saltgalerkin.noise import build_xi_family
from saltgalerkin.operators import OperatorBundle

bundles = {
    "stokes": OperatorBundle(nonlinear=False),
    "salt": OperatorBundle(noise=build_xi_family("shear", 4, 1.0)),
}
for name, bundle in bundles.items():
    print(f"== {name}")
    table = {}
    for n in (4, 8, 16):
        for rep in check_all(bundle, n, 40):
            table.setdefault(rep.assumption_id, []).append((rep.c, rep.kappa, rep.worst_violation))
    for cid, rows in table.items():
        cs = "  ".join(f"{c:9.3g}" for c, _, _ in rows)
        ok = all(w <= 0 for _, _, w in rows)
        print(f"{cid:18s} c(4,8,16) = {cs}   kappa(16) = {rows[-1][1]!s:>6.6}   satisfied {ok}")
