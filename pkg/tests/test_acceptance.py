"""Acceptance criteria 1-11, each printing one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the status lines are printed
outside pytest's capture.
"""
import numpy as np
import pytest

from saltgalerkin.assumptions import CHECK_IDS, _COERCIVE, check_all, stokes_closed_form
from saltgalerkin.galerkin import (
    EigenBasis,
    Ensemble,
    GalerkinConfig,
    auto_R,
    galerkin_system,
    project,
)
from saltgalerkin.noise import build_xi_family, increment_block
from saltgalerkin.operators import OperatorBundle, advect, biot_savart
from saltgalerkin.spectral import (
    VELOCITY_LADDER,
    ModeSet,
    SpectralField,
    curl,
    divergence_residual,
    grid_transform,
    leray_project,
    sobolev_inner,
    sobolev_norm,
)
from saltgalerkin.studies import (
    Study,
    StudySpec,
    cauchy_decay_study,
    initial_coefficients,
    run_study,
    small_time_hitting_study,
    uniqueness_study,
)

FIELDS = 1000


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"criterion {number}: {detail}"
    return _report


def _batch(rng, modes, count, project_=True, vertical=False):
    shape = (count, modes.size, modes.dim)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= (modes.k2 ** -1.0)[:, None]
    if vertical:
        c[..., :2] = 0.0
    f = SpectralField(modes, c)
    return leray_project(f) if project_ else f


def _shear_bundle(count=4, amplitude=1.0):
    return OperatorBundle(noise=build_xi_family("shear", count, 1.0, amplitude=amplitude))


def test_criterion_01_spectral_identities(report):
    rng = np.random.default_rng(1)
    worst = {"idempotence": 0.0, "divergence": 0.0, "parseval": 0.0, "biot_savart": 0.0}
    for modes in (ModeSet(2, 16), ModeSet(3, 6)):
        raw = _batch(rng, modes, FIELDS, project_=False)
        p = leray_project(raw)
        scale = np.max(np.abs(p.coeffs), axis=(-2, -1))
        worst["idempotence"] = max(worst["idempotence"], float(np.max(
            np.max(np.abs(leray_project(p).coeffs - p.coeffs), axis=(-2, -1)) / scale)))
        k = modes.wavevectors.astype(float)
        div = np.abs(np.einsum("nd,...nd->...n", k, p.coeffs))
        worst["divergence"] = max(worst["divergence"], float(np.max(
            np.max(div, axis=-1) / (scale * np.sqrt(modes.k2.max())))))
        assert all(divergence_residual(p[j]) < 1e-10 for j in range(0, FIELDS, 97))
        grid = grid_transform(p)
        mean_sq = np.mean(np.sum(grid**2, axis=-1 - modes.dim), axis=tuple(range(-modes.dim, 0)))
        norm2 = sobolev_norm(p, 0) ** 2
        worst["parseval"] = max(worst["parseval"], float(np.max(np.abs(mean_sq - norm2) / norm2)))
    for modes, vertical in ((ModeSet(3, 6), False), (ModeSet(3, 16, planar=True), True)):
        w = _batch(rng, modes, FIELDS, vertical=vertical)
        back = curl(biot_savart(w))
        rel = np.max(np.abs(back.coeffs - w.coeffs), axis=(-2, -1)) / np.max(np.abs(w.coeffs), axis=(-2, -1))
        worst["biot_savart"] = max(worst["biot_savart"], float(np.max(rel)))
    ok = all(v <= 1e-10 for v in worst.values())
    report(1, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " <= 1e-10")


def test_criterion_02_energy_neutrality(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for modes in (ModeSet(2, 10), ModeSet(3, 4)):
        xi = _batch(rng, modes, FIELDS)
        f = _batch(rng, modes, FIELDS, project_=False)
        a = advect(xi, f)
        pairing = sobolev_inner(a, f.resample(a.modes), 0)
        worst = max(worst, float(np.max(np.abs(pairing) / sobolev_norm(f, 0) ** 2)))
    report(2, worst <= 1e-10, f"max |<L_xi f, f>| / |f|^2 = {worst:.1e} <= 1e-10")


def test_criterion_03_tail_rate(report):
    rng = np.random.default_rng(3)
    lad = VELOCITY_LADDER
    gap = (lad.m_H - lad.m_U) / 2
    worst_excess = -np.inf
    f = _batch(rng, ModeSet(2, 20), FIELDS)
    for n in (1, 4, 9, 17, 32):
        lam_next = EigenBasis(2, n + 1).lam[-1]
        rest = f - project(f, n).resample(f.modes)
        lhs = sobolev_norm(rest, lad.m_U)
        rhs = lam_next ** -gap * sobolev_norm(f, lad.m_H)
        worst_excess = max(worst_excess, float(np.max((lhs - rhs) / rhs)))
    eq_err = 0.0
    for n in (1, 4, 9, 17, 32):
        basis = EigenBasis(2, n + 1)
        a = basis.basis_fields()[n]
        rest = a - project(a, n).resample(a.modes)
        lhs = sobolev_norm(rest, lad.m_U)
        rhs = basis.lam[-1] ** -gap * sobolev_norm(a, lad.m_H)
        eq_err = max(eq_err, abs(lhs - rhs) / rhs)
    ok = worst_excess <= 1e-12 and eq_err <= 1e-12
    report(3, ok, f"bound excess {worst_excess:.1e} <= 1e-12, equality error at mode n+1 {eq_err:.1e} <= 1e-12")


def test_criterion_04_stokes_single_mode(report):
    bundle = OperatorBundle()
    system = galerkin_system(bundle, 8)
    lam = system.basis.lam
    j = 5  # lambda = 2
    x0 = np.zeros((1, 8))
    x0[0, j] = 1.0
    T = 1.0
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        cfg = GalerkinConfig(8, 1e9, 1e9, T, dt)
        ens = Ensemble(system, cfg, x0).run(np.zeros((1, cfg.n_steps, 0)))
        errs.append(abs(ens.state[0, j] - np.exp(-lam[j] * T)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    report(4, ok, f"lambda {lam[j]:g}, errors {', '.join(f'{e:.2e}' for e in errs)}, "
                  f"halving ratios {ratios[0]:.3f}, {ratios[1]:.3f} in [1.6, 2.4]")


def test_criterion_05_ito_stratonovich(report):
    # n = 4: the first nontrivially coupled system; for n = 2 both modes share one wave vector
    # and a single transport field acts trivially on them
    n, S, T, fine = 4, 400, 1.0, 2.5e-3
    bundle = OperatorBundle(noise=build_xi_family("random", 1, 1.0, amplitude=3.0))
    system = galerkin_system(bundle, n)
    inc = increment_block(0, range(S), 1, fine, int(round(T / fine)))
    x0 = 0.5 * np.ones((S, n))
    gaps = []
    dts = (1e-2, 5e-3, 2.5e-3)
    for dt in dts:
        r = int(round(dt / fine))
        dW = inc.reshape(S, -1, r, 1).sum(axis=2)
        ends = []
        for scheme in ("euler_maruyama", "heun"):
            cfg = GalerkinConfig(n, 1e12, 1e12, T, dt, scheme, "galerkin")
            ends.append(Ensemble(system, cfg, x0).run(dW).state)
        gaps.append(float(np.mean(np.sum((ends[0] - ends[1]) ** 2, axis=-1))))
    orders = [np.log2(gaps[0] / gaps[1]), np.log2(gaps[1] / gaps[2])]
    ok = gaps[0] > gaps[1] > gaps[2] and all(o >= 0.5 - 0.3 for o in orders)
    report(5, ok, f"mean-square gaps {', '.join(f'{g:.2e}' for g in gaps)}, "
                  f"orders {orders[0]:.2f}, {orders[1]:.2f} >= 0.5 - 0.3")


def test_criterion_06_truncation(report):
    # strong noise so that about a fifth of the auto_R paths reach their hitting time
    bundle = _shear_bundle(4, amplitude=16.0)
    n, S = 16, 500
    system = galerkin_system(bundle, n)
    x0 = np.tile(initial_coefficients(bundle, n, "smooth", 2.0, 0), (S, 1))
    h0 = float(system.norm2(x0[0], "H"))
    cfg = GalerkinConfig(n, 0.4 * h0, 2.0, 0.5, 1e-3)
    incs = increment_block(6, range(S), bundle.noise_count, cfg.dt, cfg.n_steps)
    frozen = Ensemble(system, cfg, x0).run(incs)
    frozen_ok = bool(np.all(frozen.state == x0))
    cfg = cfg.replace(R=auto_R(cfg, h0, bundle))
    ens = Ensemble(system, cfg, x0).run(incs)
    fr = ens.series("fR")
    before = np.arange(cfg.n_steps + 1)[:, None] <= ens.tau_step[None, :]
    paths_ok = np.all(np.where(before, fr == 1.0, True), axis=0)
    ok = frozen_ok and bool(paths_ok.all())
    report(6, ok, f"R = 0.4 |x0|_H^2: frozen {frozen_ok}; auto_R: f_R == 1 before tau on "
                  f"{int(paths_ok.sum())}/{S} paths ({np.mean(ens.cause == 'UHHit'):.0%} hit before the horizon)")


def _full_spec(study, n_values, samples, seed=0, **cfg_kw):
    cfg = dict(cutoff_n=max(n_values), R=1e3, M=10.0, horizon_t=0.5, dt=1e-3)
    cfg.update(cfg_kw)
    return StudySpec(study, GalerkinConfig(**cfg), _shear_bundle(4), list(n_values), samples, seed,
                     params={"initial": "smooth", "initial_norm": 1.0, "threads": 4})


def test_criterion_07_uniqueness(report):
    spec = _full_spec(Study.PATHWISE_UNIQUENESS, [16], 200)
    res = uniqueness_study(spec, deltas=[0.0, 1e-2, 1e-3, 1e-4])
    exact = res.get("max_uh_diff", 0.0)["mean"] == 0.0
    ratios = [res.get("ratio", d)["mean"] for d in (1e-2, 1e-3, 1e-4)]
    spread = max(ratios) / min(ratios)
    ok = exact and spread <= 3.0
    report(7, ok, f"delta 0 bit-identical {exact}; ratios {', '.join(f'{r:.4f}' for r in ratios)}, "
                  f"spread {spread:.3f} <= 3")


def test_criterion_08_cauchy_decay(report):
    spec = _full_spec(Study.CAUCHY_DECAY, [4, 8, 16, 32], 400, seed=1)
    res = cauchy_decay_study(spec)
    rows = res.select("uh_diff")
    means = [r["mean"] for r in rows]
    ses = [r["stderr"] for r in rows]
    margins = [(means[i] - means[i + 1]) / np.hypot(ses[i], ses[i + 1]) for i in range(len(rows) - 1)]
    ok = all(m > 2.0 for m in margins)
    detail = ", ".join(f"m={r['param_value']}: {r['mean']:.4g} (se {r['stderr']:.2g})" for r in rows)
    report(8, ok, f"{detail}; decreases {', '.join(f'{m:.1f}' for m in margins)} pooled SE > 2")


def test_criterion_09_small_time_hitting(report):
    bundle = OperatorBundle(noise=build_xi_family("shear", 4, 1.0, amplitude=8.0))
    cfg = GalerkinConfig(16, 1e3, 1.2, 0.16, 1e-3)
    spec = StudySpec(Study.SMALL_TIME_HITTING, cfg, bundle, [16], 1000, 3,
                     params={"initial": "smooth", "initial_norm": 1.0, "threads": 4})
    res = small_time_hitting_study(spec, S_values=[0.01, 0.04, 0.16])
    probs = [r["mean"] for r in res.select("hit_probability")]
    resid = res.select("fit_residual")
    monotone = all(b >= a for a, b in zip(probs, probs[1:]))
    within = all(abs(r["mean"]) <= r["stderr"] for r in resid)
    ok = monotone and within
    report(9, ok, f"P = {', '.join(f'{p:.3f}' for p in probs)} (monotone {monotone}); residuals "
                  + ", ".join(f"{r['mean']:+.4f} vs se {r['stderr']:.4f}" for r in resid))


def test_criterion_10_assumption_constants(report):
    n_values, samples = (4, 8, 16), 60
    stokes = OperatorBundle(nonlinear=False)
    oracle_err = 0.0
    for n in n_values:
        for rep in check_all(stokes, n, samples):
            c, kappa = stokes_closed_form(rep.assumption_id, stokes, n, samples)
            oracle_err = max(oracle_err, abs(rep.c - c) / max(1.0, abs(c)))
            if kappa is not None and np.isfinite(kappa):
                oracle_err = max(oracle_err, abs(rep.kappa - kappa) / max(1.0, abs(kappa)))
    full = _shear_bundle(4)
    by_id = {i: [] for i in CHECK_IDS}
    feasible = True
    for n in n_values:
        for rep in check_all(full, n, samples):
            by_id[rep.assumption_id].append(rep.c)
            feasible &= np.isfinite(rep.c) and rep.worst_violation <= 0
            if rep.assumption_id in _COERCIVE:
                feasible &= rep.kappa is not None and rep.kappa > 0
    trend_fail = []
    for cid, cs in by_id.items():
        cs = np.array(cs)
        if np.all(cs == 0):
            continue
        ratio = np.inf if np.any(cs == 0) else cs.max() / cs.min()
        if ratio > 2.0:
            trend_fail.append(f"{cid} c(n)={', '.join(f'{c:.3g}' for c in cs)}")
    ok = oracle_err <= 1e-9 and feasible and not trend_fail
    detail = (f"Stokes oracle error {oracle_err:.1e} <= 1e-9; full bundle feasible {feasible}; "
              f"max/min c(n) <= 2 fails for {len(trend_fail)} ids"
              + (": " + "; ".join(trend_fail) if trend_fail else ""))
    report(10, ok, detail)


def test_criterion_11_reproducibility(report, tmp_path):
    bundle = _shear_bundle(4)
    cfg = GalerkinConfig(8, 1e3, 10.0, 0.05, 1e-3)
    identical = []
    for study in Study:
        n_values = [2, 4, 8]
        outs = []
        for threads in (1, 8):
            spec = StudySpec(study, cfg, bundle, n_values, 300, 11,
                             params={"threads": threads, "S_values": [0.01, 0.05],
                                     "deltas": [1e-2, 1e-3]})
            path = tmp_path / f"{study.value}_{threads}.csv"
            run_study(spec).to_csv(path)
            outs.append(path.read_bytes())
        identical.append(outs[0] == outs[1])
    ok = all(identical)
    report(11, ok, f"{sum(identical)}/{len(identical)} studies byte-identical at 1 and 8 threads")
