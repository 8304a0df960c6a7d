"""Monte Carlo study harness: closed-form Stokes oracles, coupling and determinism."""
import numpy as np
import pytest

from saltgalerkin.galerkin import Cause, EigenBasis, Ensemble, GalerkinConfig, galerkin_system
from saltgalerkin.noise import build_xi_family, increment_block
from saltgalerkin.operators import OperatorBundle
from saltgalerkin.studies import (
    CHUNK,
    Study,
    StudySpec,
    _perturbation,
    blowup_watch,
    cauchy_decay_study,
    gronwall_witness,
    initial_coefficients,
    rough_data_study,
    run_study,
    small_time_hitting_study,
    uniform_bound_study,
    uniqueness_study,
)

STOKES = OperatorBundle(nonlinear=False)
NOISY = OperatorBundle(noise=build_xi_family("shear", 4, 1.0, resolution=32))


def _cfg(**kw):
    base = dict(cutoff_n=16, R=1e6, M=10.0, horizon_t=0.1, dt=1e-3)
    base.update(kw)
    return GalerkinConfig(**base)


def _spec(study, bundle=STOKES, n_values=(4, 8, 16), samples=8, **params):
    cfg = params.pop("cfg", _cfg())
    return StudySpec(study, cfg, bundle, list(n_values), samples, seed=params.pop("seed", 0),
                     params=params)


def _stokes_path(x0, lam, dt, steps):
    """Exact Euler iterates ``x_k = (1 - lambda dt)^k x_0`` as ``(steps + 1, n)``."""
    k = np.arange(steps + 1)[:, None]
    return (1 - lam * dt) ** k * x0


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            _spec("uniform_bound", n_values=(8, 4))
        with pytest.raises(ValueError):
            _spec("uniform_bound", samples=0)
        with pytest.raises(ValueError):
            _spec("nonsense")

    def test_echo_contains_config(self):
        echo = _spec("uniform_bound", initial="smooth").echo()
        assert echo["cfg.M"] == 10.0 and echo["params.initial"] == "smooth"
        assert echo["bundle.nonlinear"] is False


class TestInitialData:
    def test_prefix_across_n(self):
        a = initial_coefficients(NOISY, 8, "smooth", 1.0, 3)
        b = initial_coefficients(NOISY, 32, "smooth", 1.0, 3)
        assert np.array_equal(a, b[:8])

    def test_rough_tail_decreasing(self):
        x = initial_coefficients(NOISY, 2048, "rough", 1.0, 0)
        lam = EigenBasis.for_bundle(NOISY, 2048).lam
        tails = [np.sum(lam[n:] * x[n:] ** 2) for n in (4, 8, 16, 32, 64)]
        assert np.all(np.diff(tails) < 0)
        # H norm keeps growing with n while the U norm stays bounded
        h = [np.sum(lam[:n] ** 2 * x[:n] ** 2) for n in (64, 512, 2048)]
        assert h[2] > 2 * h[0]

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            initial_coefficients(STOKES, 4, "spiky")


class TestUniformBound:
    def test_stokes_closed_form(self):
        cfg = _cfg(horizon_t=0.2, dt=1e-2)
        spec = _spec("uniform_bound", cfg=cfg, n_values=(4, 8), samples=5)
        res = uniform_bound_study(spec)
        for n in (4, 8):
            lam = EigenBasis.for_bundle(STOKES, n).lam
            x0 = initial_coefficients(STOKES, n, "smooth", 1.0, 0)
            path = _stokes_path(x0, lam, cfg.dt, cfg.n_steps)
            H = np.sum(lam**2 * path**2, axis=1)
            V = np.sum(lam**3 * path**2, axis=1)
            expect = H.max() + cfg.dt * V[:-1].sum()
            row = res.get("hv_tau", n)
            assert row["mean"] == pytest.approx(expect, rel=1e-12)
            assert row["stderr"] <= 3 * 1e-12 * expect + 1e-300

    def test_zero_data_zero_noise(self):
        res = uniform_bound_study(_spec("uniform_bound", initial="zero", samples=3))
        assert all(r["mean"] == 0 for r in res.select("hv_tau"))

    def test_stderr_shrinks(self):
        # shear noise acts trivially on V_4, so use n = 8
        cfg = _cfg(horizon_t=0.05, dt=1e-3)
        se = []
        for s in (64, 256):
            spec = _spec("uniform_bound", bundle=NOISY, cfg=cfg, n_values=(8,), samples=s,
                         initial="smooth")
            se.append(uniform_bound_study(spec).get("hv_tau", 8)["stderr"])
        assert 1.4 < se[0] / se[1] < 2.8


class TestCauchy:
    def test_needs_three_levels(self):
        with pytest.raises(ValueError):
            cauchy_decay_study(_spec("cauchy_decay", n_values=(4, 8)))

    def test_stokes_modal_invariance(self):
        res = cauchy_decay_study(_spec("cauchy_decay", initial="single", samples=3))
        assert all(r["mean"] == 0 for r in res.select("uh_diff"))

    def test_noisy_reports_slope(self):
        cfg = _cfg(horizon_t=0.02)
        res = cauchy_decay_study(_spec("cauchy_decay", bundle=NOISY, cfg=cfg, samples=4))
        assert len(res.select("uh_diff")) == 2
        assert np.isfinite(res.get("slope")["mean"])


class TestHitting:
    def test_huge_M_never_hits(self):
        cfg = _cfg(M=1e9, horizon_t=0.05)
        spec = _spec("small_time_hitting", bundle=NOISY, cfg=cfg, n_values=(4,), samples=16,
                     S_values=[0.01, 0.05])
        res = small_time_hitting_study(spec)
        assert all(r["mean"] == 0 for r in res.select("hit_probability"))

    def test_monotone_in_S(self):
        noise = build_xi_family("shear", 4, 1.0, amplitude=8.0, resolution=32)
        bundle = OperatorBundle(noise=noise)
        cfg = _cfg(M=1.2, horizon_t=0.16)
        spec = _spec("small_time_hitting", bundle=bundle, cfg=cfg, n_values=(8,), samples=64,
                     S_values=[0.01, 0.04, 0.16], seed=3)
        probs = [r["mean"] for r in small_time_hitting_study(spec).select("hit_probability")]
        assert np.all(np.diff(probs) >= 0) and probs[-1] > 0

    def test_S_outside_horizon(self):
        spec = _spec("small_time_hitting", S_values=[0.5])
        with pytest.raises(ValueError):
            small_time_hitting_study(spec)

    def test_tau_monotone_in_M(self):
        noise = build_xi_family("shear", 4, 1.0, amplitude=8.0, resolution=32)
        system = galerkin_system(OperatorBundle(noise=noise), 8)
        x0 = np.tile(initial_coefficients(system.bundle, 8), (32, 1))
        taus = []
        for M in (1.1, 1.5, 3.0):
            cfg = _cfg(cutoff_n=8, M=M, horizon_t=0.2)
            incs = increment_block(1, range(32), 4, cfg.dt, cfg.n_steps)
            taus.append(Ensemble(system, cfg, x0).run(incs).tau)
        assert np.all(taus[1] >= taus[0]) and np.all(taus[2] >= taus[1])


class TestUniqueness:
    def test_delta_zero_exact(self):
        res = uniqueness_study(_spec("uniqueness", bundle=NOISY, n_values=(8,), samples=4,
                                     cfg=_cfg(horizon_t=0.02)), deltas=[0.0])
        assert res.get("max_uh_diff")["mean"] == 0.0

    def test_stokes_ratio_closed_form(self):
        cfg = _cfg(horizon_t=0.1, dt=1e-2)
        n = 8
        spec = _spec("uniqueness", cfg=cfg, n_values=(n,), samples=2)
        res = uniqueness_study(spec, deltas=[1e-2, 1e-3])
        lam = EigenBasis.for_bundle(STOKES, n).lam
        e = _perturbation(STOKES, n, spec.seed)
        path = _stokes_path(e, lam, cfg.dt, cfg.n_steps)
        U = np.sum(lam * path**2, axis=1)
        H = np.sum(lam**2 * path**2, axis=1)
        expect = U.max() + cfg.dt * H[:-1].sum()
        for delta in (1e-2, 1e-3):
            assert res.get("ratio", delta)["mean"] == pytest.approx(expect, rel=1e-9)


class TestRoughData:
    def test_data_in_vn_gives_zero(self):
        spec = _spec("rough_data", initial="single", samples=3, cfg=_cfg(horizon_t=0.02))
        res = rough_data_study(spec)
        assert all(r["mean"] == 0 for r in res.select("uh_diff"))

    def test_tail_decreasing(self):
        spec = _spec("rough_data", samples=2, cfg=_cfg(horizon_t=0.01))
        tails = [r["mean"] for r in rough_data_study(spec).select("tail_U2")]
        assert np.all(np.diff(tails) < 0)

    def test_cutoff_guard(self):
        with pytest.raises(ValueError):
            rough_data_study(_spec("rough_data", n_values=(4, 8, 32)))


class TestBlowupWatch:
    def test_stokes_all_horizon(self):
        res = blowup_watch(_spec("blowup_watch", n_values=(4,), samples=5))
        assert res.get("cause_fraction", Cause.HORIZON.value)["mean"] == 1.0

    def test_frozen_dynamics(self):
        n = 4
        x0 = initial_coefficients(NOISY, n, "smooth", 1.0, 0)
        system = galerkin_system(NOISY, n)
        h0 = float(system.norm2(x0, "H"))
        v0 = float(system.norm2(x0, "V"))
        cfg = _cfg(R=0.4 * h0, horizon_t=0.05)
        res = blowup_watch(_spec("blowup_watch", bundle=NOISY, cfg=cfg, n_values=(n,), samples=4,
                                 auto_R=False))
        assert res.get("cause_fraction", Cause.HORIZON.value)["mean"] == 1.0
        assert res.get("terminal_hv")["mean"] == pytest.approx(h0 + cfg.horizon_t * v0, rel=1e-12)


class TestGronwall:
    def test_stokes_sup_is_initial(self):
        res = gronwall_witness(_spec("gronwall_witness", n_values=(8,), samples=6))
        assert res.get("sup_U_diff")["mean"] == pytest.approx(res.get("initial_U_diff")["mean"])
        assert res.get("ratio_of_means")["mean"] > 1.0


class TestDeterminism:
    def test_thread_count_invariant(self, tmp_path):
        cfg = _cfg(horizon_t=0.02)
        outs = []
        for threads in (1, 4):
            spec = _spec("uniform_bound", bundle=NOISY, cfg=cfg, n_values=(4, 8),
                         samples=2 * CHUNK + 5, threads=threads)
            path = tmp_path / f"t{threads}.csv"
            run_study(spec).to_csv(path)
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_write_layout(self, tmp_path):
        spec = _spec(Study.UNIFORM_BOUND, samples=2, seed=42)
        data, meta = run_study(spec).write(tmp_path)
        assert data.name == "uniform_bound_seed42.csv"
        text = meta.read_text()
        assert "seed = 42" in text and "data_sha256" in text
        assert data.read_text().splitlines()[0] == \
            "study,param_name,param_value,statistic,mean,stderr,count"
