"""Monte Carlo studies over ensembles of truncated Galerkin paths.

Samples are processed in fixed chunks of :data:`CHUNK` paths. Each chunk is a
pure function of ``(seed, sample ids)``, so results do not depend on how many
worker threads execute the chunks. Compared trajectories within a sample share
Brownian increments (coupled noise).
"""
from __future__ import annotations

import csv
import datetime
import enum
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .galerkin import Cause, EigenBasis, Ensemble, GalerkinConfig, auto_R, galerkin_system
from .noise import increment_block
from .operators import OperatorBundle

__all__ = [
    "Study",
    "StudySpec",
    "StudyResult",
    "CHUNK",
    "initial_coefficients",
    "uniform_bound_study",
    "cauchy_decay_study",
    "small_time_hitting_study",
    "uniqueness_study",
    "rough_data_study",
    "blowup_watch",
    "gronwall_witness",
    "run_study",
]

CHUNK = 64
# eigen-coefficient count used to normalise initial profiles independently of n
REFERENCE_MODES = 2048


class Study(enum.Enum):
    UNIFORM_BOUND = "uniform_bound"
    CAUCHY_DECAY = "cauchy_decay"
    SMALL_TIME_HITTING = "small_time_hitting"
    PATHWISE_UNIQUENESS = "uniqueness"
    ROUGH_DATA_CONVERGENCE = "rough_data"
    BLOWUP_WATCH = "blowup_watch"
    GRONWALL_WITNESS = "gronwall_witness"


@dataclass
class StudySpec:
    """One experiment.

    ``params`` holds study-specific knobs: ``initial`` (profile name),
    ``initial_norm`` (H norm of the smooth profile, U norm of the rough one),
    ``S_values``, ``deltas``, ``auto_R`` (bool) and ``threads``.
    """

    study: Study
    cfg: GalerkinConfig
    bundle: OperatorBundle
    n_values: list
    sample_count: int
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.study = Study(self.study)
        self.n_values = [int(n) for n in self.n_values]
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError(f"n_values must be strictly increasing, got {self.n_values}")
        if not self.n_values:
            raise ValueError("n_values must not be empty")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def threads(self) -> int:
        return int(self.params.get("threads", 1))

    def echo(self) -> dict:
        out = {"study": self.study.value, "n_values": self.n_values,
               "sample_count": self.sample_count, "seed": self.seed}
        for k, v in self.cfg.__dict__.items():
            out["cfg." + k] = getattr(v, "value", v)
        b = self.bundle
        out.update({"bundle.form": b.form.value, "bundle.dim": b.dim,
                    "bundle.viscosity": b.viscosity, "bundle.noise_count": b.noise_count,
                    "bundle.nonlinear": b.nonlinear, "bundle.square": b.square.value})
        for k, v in sorted(self.params.items()):
            if k != "threads":
                out["params." + k] = v
        return out


@dataclass
class StudyResult:
    """Rows of ``(parameter, statistic, mean, stderr, count)`` plus metadata."""

    spec: StudySpec
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    COLUMNS = ("study", "param_name", "param_value", "statistic", "mean", "stderr", "count")

    def add(self, param_name, param_value, statistic, values=None, mean=None, se=None, count=None):
        """Append a row, either from a sample array or from precomputed numbers."""
        if values is not None:
            values = np.asarray(values, dtype=float)
            count = values.size
            mean = float(values.mean()) if count else float("nan")
            se = float(values.std(ddof=1) / np.sqrt(count)) if count > 1 else 0.0
        self.rows.append({"study": self.spec.study.value, "param_name": param_name,
                          "param_value": param_value, "statistic": statistic,
                          "mean": mean, "stderr": 0.0 if se is None else se,
                          "count": 0 if count is None else int(count)})

    def get(self, statistic, param_value=None) -> dict:
        for r in self.rows:
            if r["statistic"] == statistic and (param_value is None or r["param_value"] == param_value):
                return r
        raise KeyError((statistic, param_value))

    def select(self, statistic) -> list:
        return [r for r in self.rows if r["statistic"] == statistic]

    @property
    def stem(self) -> str:
        return f"{self.spec.study.value}_seed{self.spec.seed}"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.COLUMNS])

    def write(self, out_dir) -> tuple:
        """Write ``<study>_seed<seed>.csv`` and its ``.meta.txt`` sidecar."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        data = out_dir / f"{self.stem}.csv"
        meta = out_dir / f"{self.stem}.meta.txt"
        self.to_csv(data)
        lines = [f"version = {__version__}",
                 f"written = {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
                 f"data_sha256 = {hashlib.sha256(data.read_bytes()).hexdigest()}"]
        lines += [f"{k} = {v}" for k, v in self.spec.echo().items()]
        lines += [f"extra.{k} = {v}" for k, v in self.extra.items()]
        meta.write_text("\n".join(lines) + "\n")
        return data, meta


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


# ---------------------------------------------------------------- initial data

def initial_coefficients(bundle: OperatorBundle, n: int, profile: str = "smooth",
                         norm: float = 1.0, seed: int = 0) -> np.ndarray:
    """Eigen-coefficients of ``P_n Psi_0`` for a fixed profile ``Psi_0``.

    ``smooth``: Gaussian coefficients times ``lambda^{-(m_V + 1)/2}``, scaled to
    H norm ``norm``. ``rough``: decay ``lambda^{-(m_U/2 + d/4 + 1/4)}`` so the U
    norm is finite but the H norm diverges, scaled to U norm ``norm``.
    ``single``: the first eigenfunction with H norm ``norm``. ``zero``: 0.
    The profile is defined on :data:`REFERENCE_MODES` coefficients, so
    ``P_m Psi_0`` is a prefix of ``P_n Psi_0`` for m < n.
    """
    ref = max(REFERENCE_MODES, n)
    lam = EigenBasis.for_bundle(bundle, ref).lam
    lad = bundle.ladder
    if profile == "zero":
        return np.zeros(n)
    if profile == "single":
        x = np.zeros(ref)
        x[0] = norm / lam[0] ** (float(lad.m_H) / 2)
        return x[:n]
    g = np.random.default_rng(np.random.SeedSequence([seed, 7919])).standard_normal(ref)
    if profile == "smooth":
        x = g * lam ** (-(float(lad.m_V) + 1) / 2)
        space = lad.m_H
    elif profile == "rough":
        d = 2 if bundle.planar else bundle.field_dim
        x = g * lam ** (-(float(lad.m_U) / 2 + d / 4 + 0.25))
        space = lad.m_U
    else:
        raise ValueError(f"unknown initial profile {profile!r}")
    x *= norm / np.sqrt(np.sum(lam ** float(space) * x**2))
    return x[:n]


def _perturbation(bundle, n, seed) -> np.ndarray:
    """A fixed direction in V_n with unit U norm."""
    lam = EigenBasis.for_bundle(bundle, n).lam
    g = np.random.default_rng(np.random.SeedSequence([seed, 104729, n])).standard_normal(n)
    x = g * lam ** (-float(bundle.ladder.m_V) / 2)
    return x / np.sqrt(np.sum(lam ** float(bundle.ladder.m_U) * x**2))


def _config_for(spec: StudySpec, n: int, x0: np.ndarray) -> GalerkinConfig:
    cfg = spec.cfg.replace(cutoff_n=n)
    if spec.params.get("auto_R", True):
        sys_ = galerkin_system(spec.bundle, n)
        bound = float(np.max(sys_.norm2(np.atleast_2d(x0), "H")))
        cfg = cfg.replace(R=auto_R(cfg, bound, spec.bundle))
    return cfg


# ---------------------------------------------------------------- execution

def _chunks(sample_count: int):
    return [list(range(s, min(sample_count, s + CHUNK))) for s in range(0, sample_count, CHUNK)]


def _map_chunks(fn, spec: StudySpec):
    """Apply ``fn(sample_ids)`` per chunk and concatenate results in chunk order."""
    chunks = _chunks(spec.sample_count)
    if spec.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts]) for k in keys}


def _increments(spec: StudySpec, ids, cfg: GalerkinConfig) -> np.ndarray:
    return increment_block(spec.seed, ids, spec.bundle.noise_count, cfg.dt, cfg.n_steps)


def _single_level(spec: StudySpec, n: int, x0: np.ndarray, cfg: GalerkinConfig, keep=()):
    """Run one cutoff level; returns per-sample arrays (and requested series)."""
    system = galerkin_system(spec.bundle, n)

    def work(ids):
        ens = Ensemble(system, cfg, np.tile(x0, (len(ids), 1)))
        ens.run(_increments(spec, ids, cfg))
        out = {"uh": ens.uh, "hv": ens.hv, "tau": ens.tau, "tau_step": ens.tau_step,
               "cause": ens.cause.astype(str), "normU0": ens.normU0}
        for name in keep:
            out[name] = ens.series(name).T
        return out

    return _map_chunks(work, spec)


def _pad(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(x.shape[:-1] + (n,))
    out[..., :x.shape[-1]] = x
    return out


def _coupled_pair(spec: StudySpec, n_a: int, x0a, cfg_a, n_b: int, x0b, cfg_b):
    """Two coupled ensembles and the UH functional of their difference.

    The difference is measured in V_max(n_a, n_b) (lower level zero-padded) up
    to ``min(tau_a, tau_b)``, with a left Riemann sum for the time integral.
    """
    sys_a, sys_b = galerkin_system(spec.bundle, n_a), galerkin_system(spec.bundle, n_b)
    big = sys_a if n_a >= n_b else sys_b
    N = big.n
    mU, mH = big.ladder.m_U, big.ladder.m_H

    def work(ids):
        S = len(ids)
        ea = Ensemble(sys_a, cfg_a, np.tile(x0a, (S, 1)))
        eb = Ensemble(sys_b, cfg_b, np.tile(x0b, (S, 1)))
        inc = _increments(spec, ids, cfg_a)
        diff = _pad(ea.state, N) - _pad(eb.state, N)
        d0 = big.basis.norm2(diff, mU)
        sup_u = d0.copy()
        int_h = np.zeros(S)
        prev_h = big.basis.norm2(diff, mH)
        for j in range(cfg_a.n_steps):
            window = ea.active & eb.active
            ea.advance(inc[:, j, :])
            eb.advance(inc[:, j, :])
            diff = _pad(ea.state, N) - _pad(eb.state, N)
            du = big.basis.norm2(diff, mU)
            dh = big.basis.norm2(diff, mH)
            int_h = np.where(window, int_h + prev_h * cfg_a.dt, int_h)
            sup_u = np.where(window, np.maximum(sup_u, du), sup_u)
            prev_h = np.where(window, dh, prev_h)
        finite = (ea.cause != Cause.NON_FINITE.value) & (eb.cause != Cause.NON_FINITE.value)
        return {"uh_diff": sup_u + int_h, "sup_u": sup_u, "int_h": int_h, "d0": d0,
                "finite": finite, "tau_min": np.minimum(ea.tau, eb.tau)}

    if cfg_a.dt != cfg_b.dt or cfg_a.n_steps != cfg_b.n_steps:
        raise ValueError("coupled runs need a common time grid")
    return _map_chunks(work, spec)


def _finite(res) -> np.ndarray:
    return res["cause"] != Cause.NON_FINITE.value


# ---------------------------------------------------------------- studies

def _x0(spec: StudySpec, n: int) -> np.ndarray:
    return initial_coefficients(spec.bundle, n, spec.params.get("initial", "smooth"),
                                float(spec.params.get("initial_norm", 1.0)),
                                int(spec.params.get("initial_seed", 0)))


def uniform_bound_study(spec: StudySpec) -> StudyResult:
    """``E ||Psi^n||^2_{HV, tau}`` per n and its ratio to ``||Psi^n_0||^2_H + 1``."""
    result = StudyResult(spec)
    for n in spec.n_values:
        x0 = _x0(spec, n)
        cfg = _config_for(spec, n, x0)
        res = _single_level(spec, n, x0, cfg)
        ok = _finite(res)
        h0 = float(galerkin_system(spec.bundle, n).norm2(x0, "H"))
        result.add("n", n, "hv_tau", res["hv"][ok])
        result.add("n", n, "ratio", res["hv"][ok] / (h0 + 1.0))
        result.add("n", n, "initial_H2", mean=h0, se=0.0, count=1)
        result.add("n", n, "nonfinite", mean=float(np.sum(~ok)), se=0.0, count=ok.size)
    return result


def cauchy_decay_study(spec: StudySpec) -> StudyResult:
    """``E ||Psi^n - Psi^m||^2_{UH, tau_m ^ tau_n}`` for consecutive cutoffs."""
    if len(spec.n_values) < 3:
        raise ValueError("cauchy_decay needs at least three cutoffs")
    result = StudyResult(spec)
    logs = []
    for m, n in zip(spec.n_values, spec.n_values[1:]):
        xm, xn = _x0(spec, m), _x0(spec, n)
        cm, cn = _config_for(spec, m, xm), _config_for(spec, n, xn)
        res = _coupled_pair(spec, m, xm, cm, n, xn, cn)
        ok = res["finite"]
        lam = EigenBasis.for_bundle(spec.bundle, n).lam
        tail = float(np.sum(lam[m:] ** float(spec.bundle.ladder.m_U) * xn[m:] ** 2))
        proxy = lam[m - 1] ** -0.5 + tail
        result.add("m", m, "uh_diff", res["uh_diff"][ok])
        result.add("m", m, "bound_proxy", mean=float(proxy), se=0.0, count=1)
        result.add("m", m, "nonfinite", mean=float(np.sum(~ok)), se=0.0, count=ok.size)
        mean = float(res["uh_diff"][ok].mean()) if ok.any() else float("nan")
        if mean > 0:
            logs.append((np.log(proxy), np.log(mean)))
    if len(logs) >= 2:
        a = np.array(logs)
        slope = float(np.polyfit(a[:, 0], a[:, 1], 1)[0])
        result.add("fit", "log-log", "slope", mean=slope, se=0.0, count=len(logs))
    return result


def small_time_hitting_study(spec: StudySpec, S_values=None) -> StudyResult:
    """``P(||Psi^n||^2_{UH, tau ^ S} >= M - 1 + ||Psi^n_0||^2_U)`` and an ``a + b sqrt(S)`` fit."""
    S_values = list(S_values if S_values is not None else spec.params.get("S_values", [0.01, 0.04, 0.16]))
    dt, horizon = spec.cfg.dt, spec.cfg.horizon_t
    steps = []
    for S in S_values:
        if not 0 < S <= horizon + 1e-12:
            raise ValueError(f"S={S} outside (0, horizon]")
        steps.append(int(round(S / dt)))
    result = StudyResult(spec)
    for n in spec.n_values:
        x0 = _x0(spec, n)
        cfg = _config_for(spec, n, x0)
        res = _single_level(spec, n, x0, cfg, keep=("uh",))
        level = spec.cfg.M - 1.0 + res["normU0"]
        probs, ses = [], []
        for S, k in zip(S_values, steps):
            hit = (res["uh"][:, k] >= level).astype(float)
            result.add(f"n={n}", S, "hit_probability", hit)
            p = hit.mean()
            probs.append(p)
            ses.append(np.sqrt(p * (1 - p) / hit.size))
        design = np.column_stack([np.ones(len(S_values)), np.sqrt(S_values)])
        coef, *_ = np.linalg.lstsq(design, np.array(probs), rcond=None)
        resid = np.array(probs) - design @ coef
        result.add(f"n={n}", "fit", "a", mean=float(coef[0]), se=0.0, count=len(S_values))
        result.add(f"n={n}", "fit", "b", mean=float(coef[1]), se=0.0, count=len(S_values))
        for S, r, s in zip(S_values, resid, ses):
            result.add(f"n={n}", S, "fit_residual", mean=float(r), se=float(s), count=spec.sample_count)
    return result


def uniqueness_study(spec: StudySpec, deltas=None) -> StudyResult:
    """Coupled runs from ``Psi_0`` and ``Psi_0 + delta e`` (``||e||_U = 1``); ratio ``E||diff||^2_UH / delta^2``."""
    deltas = list(deltas if deltas is not None else spec.params.get("deltas", [1e-2, 1e-3, 1e-4]))
    n = spec.n_values[-1]
    x0 = _x0(spec, n)
    e = _perturbation(spec.bundle, n, spec.seed)
    cfg = _config_for(spec, n, x0)
    result = StudyResult(spec)
    for delta in deltas:
        x1 = x0 + delta * e
        res = _coupled_pair(spec, n, x0, cfg, n, x1, cfg)
        ok = res["finite"]
        if delta == 0:
            result.add("delta", delta, "max_uh_diff", mean=float(np.max(res["uh_diff"])), se=0.0,
                       count=ok.size)
        else:
            result.add("delta", delta, "ratio", res["uh_diff"][ok] / delta**2)
        result.add("delta", delta, "nonfinite", mean=float(np.sum(~ok)), se=0.0, count=ok.size)
    return result


def rough_data_study(spec: StudySpec) -> StudyResult:
    """Runs from ``P_n Psi_0`` (rough ``Psi_0``) at the internal cutoff ``cfg.cutoff_n``.

    Reports ``E||Psi^(n') - Psi^(n)||^2_UH`` for consecutive n and the U tail
    ``||(I - P_n) Psi_0||^2_U``.
    """
    N = spec.cfg.cutoff_n
    if spec.n_values[-1] > N:
        raise ValueError("rough_data needs n_values <= cfg.cutoff_n")
    params = dict(spec.params)
    params.setdefault("initial", "rough")
    profile, norm = params["initial"], float(params.get("initial_norm", 1.0))
    seed0 = int(params.get("initial_seed", 0))
    full = initial_coefficients(spec.bundle, REFERENCE_MODES, profile, norm, seed0)
    lam = EigenBasis.for_bundle(spec.bundle, REFERENCE_MODES).lam
    mU = float(spec.bundle.ladder.m_U)
    starts = {n: _pad(full[:n], N) for n in spec.n_values}
    bound = max(float(galerkin_system(spec.bundle, N).norm2(x, "H")) for x in starts.values())
    cfg = spec.cfg
    if params.get("auto_R", True):
        cfg = cfg.replace(R=auto_R(cfg, bound, spec.bundle))
    result = StudyResult(spec)
    for n in spec.n_values:
        result.add("n", n, "tail_U2", mean=float(np.sum(lam[n:] ** mU * full[n:] ** 2)), se=0.0, count=1)
    for m, n in zip(spec.n_values, spec.n_values[1:]):
        res = _coupled_pair(spec, N, starts[m], cfg, N, starts[n], cfg)
        ok = res["finite"]
        result.add("n", m, "uh_diff", res["uh_diff"][ok])
        result.add("n", m, "nonfinite", mean=float(np.sum(~ok)), se=0.0, count=ok.size)
    return result


def blowup_watch(spec: StudySpec) -> StudyResult:
    """Distribution of termination causes and terminal HV values per cutoff."""
    result = StudyResult(spec)
    for n in spec.n_values:
        x0 = _x0(spec, n)
        cfg = _config_for(spec, n, x0)
        res = _single_level(spec, n, x0, cfg)
        for cause in Cause:
            hit = (res["cause"] == cause.value).astype(float)
            result.add(f"n={n}", cause.value, "cause_fraction", hit)
        ok = _finite(res)
        result.add(f"n={n}", "all", "terminal_hv", res["hv"][ok])
        result.add(f"n={n}", "all", "tau", res["tau"])
    return result


def gronwall_witness(spec: StudySpec) -> StudyResult:
    """``E sup||d||^2_U + E int||d||^2_H`` against ``E||d_0||^2_U`` for random perturbation sizes.

    Each sample perturbs ``Psi_0`` along the fixed unit direction by a size
    drawn log-uniformly from ``[1e-4, 1e-2]`` (keyed by seed and sample id).
    """
    n = spec.n_values[-1]
    x0 = _x0(spec, n)
    e = _perturbation(spec.bundle, n, spec.seed)
    cfg = _config_for(spec, n, x0)
    system = galerkin_system(spec.bundle, n)

    def work(ids):
        sizes = np.array([10 ** np.random.default_rng(np.random.SeedSequence([spec.seed, 31337, i]))
                          .uniform(-4, -2) for i in ids])
        ea = Ensemble(system, cfg, np.tile(x0, (len(ids), 1)))
        eb = Ensemble(system, cfg, x0 + sizes[:, None] * e)
        inc = _increments(spec, ids, cfg)
        mU, mH = system.ladder.m_U, system.ladder.m_H
        diff = ea.state - eb.state
        d0 = system.basis.norm2(diff, mU)
        sup_u, int_h, prev_h = d0.copy(), np.zeros(len(ids)), system.basis.norm2(diff, mH)
        for j in range(cfg.n_steps):
            window = ea.active & eb.active
            ea.advance(inc[:, j, :])
            eb.advance(inc[:, j, :])
            diff = ea.state - eb.state
            int_h = np.where(window, int_h + prev_h * cfg.dt, int_h)
            sup_u = np.where(window, np.maximum(sup_u, system.basis.norm2(diff, mU)), sup_u)
            prev_h = np.where(window, system.basis.norm2(diff, mH), prev_h)
        finite = (ea.cause != Cause.NON_FINITE.value) & (eb.cause != Cause.NON_FINITE.value)
        return {"sup_u": sup_u, "int_h": int_h, "d0": d0, "finite": finite}

    res = _map_chunks(work, spec)
    ok = res["finite"]
    result = StudyResult(spec)
    result.add("n", n, "sup_U_diff", res["sup_u"][ok])
    result.add("n", n, "int_H_diff", res["int_h"][ok])
    result.add("n", n, "initial_U_diff", res["d0"][ok])
    lhs = res["sup_u"][ok] + res["int_h"][ok]
    result.add("n", n, "ratio_of_means", mean=float(lhs.mean() / res["d0"][ok].mean()), se=0.0,
               count=int(ok.sum()))
    return result


_DISPATCH = {
    Study.UNIFORM_BOUND: uniform_bound_study,
    Study.CAUCHY_DECAY: cauchy_decay_study,
    Study.SMALL_TIME_HITTING: small_time_hitting_study,
    Study.PATHWISE_UNIQUENESS: uniqueness_study,
    Study.ROUGH_DATA_CONVERGENCE: rough_data_study,
    Study.BLOWUP_WATCH: blowup_watch,
    Study.GRONWALL_WITNESS: gronwall_witness,
}


def run_study(spec: StudySpec) -> StudyResult:
    return _DISPATCH[spec.study](spec)
