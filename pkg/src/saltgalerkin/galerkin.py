"""Truncated Galerkin system, Itô time stepping and first-hitting-time monitoring.

The state of the n-th Galerkin system is the vector of coefficients of the
first ``n`` Stokes eigenfunctions (real, L2-orthonormal). Because the drift is
a quadratic polynomial and the noise is linear, the projected system is held
exactly as a tensor triple assembled once from the pseudo-spectral operators:

    drift(x) = Q[x, x] + L x,      noise_i(x) = G_i x.

Ensembles of sample paths are advanced together as ``(samples, n)`` arrays.
"""
from __future__ import annotations

import csv
import enum
import functools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .noise import BrownianPath
from .operators import (
    Form,
    OperatorBundle,
    ito_drift_correction,
    nonlinear_term,
    transport_noise,
)
from .spectral import ModeSet, SobolevLadder, SpectralField

__all__ = [
    "Scheme",
    "Cause",
    "ItoCorrection",
    "GalerkinConfig",
    "EigenBasis",
    "GalerkinSystem",
    "galerkin_system",
    "project",
    "cutoff_fR",
    "step",
    "run",
    "auto_R",
    "Ensemble",
    "TrajectoryRecord",
]


class Scheme(enum.Enum):
    EULER_MARUYAMA_ITO = "euler_maruyama"
    HEUN_STRATONOVICH = "heun"


class Cause(enum.Enum):
    HORIZON = "Horizon"
    UH_HIT = "UHHit"
    NON_FINITE = "NonFinite"


class ItoCorrection(enum.Enum):
    """Which Itô drift the Euler scheme integrates.

    ``PROJECTED`` is ``P_n (1/2 sum B_i^2)``, the projection of the converted
    equation. ``GALERKIN`` is ``1/2 sum (P_n B_i)^2``, the exact Itô form of the
    projected Stratonovich system; the two agree as ``n`` grows.
    """

    PROJECTED = "projected"
    GALERKIN = "galerkin"


@dataclass(frozen=True)
class GalerkinConfig:
    cutoff_n: int
    R: float
    M: float
    horizon_t: float
    dt: float
    scheme: Scheme = Scheme.EULER_MARUYAMA_ITO
    ito_correction: ItoCorrection = ItoCorrection.PROJECTED

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "ito_correction", ItoCorrection(self.ito_correction))
        if self.cutoff_n < 1:
            raise ValueError("cutoff_n must be >= 1")
        if not self.M > 1:
            raise ValueError(f"M must exceed 1, got {self.M}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.horizon_t >= self.dt:
            raise ValueError(f"horizon_t must be >= dt, got {self.horizon_t} < {self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_t / self.dt))

    def replace(self, **changes) -> "GalerkinConfig":
        values = dict(self.__dict__)
        values.update(changes)
        return GalerkinConfig(**values)


def _directions(k: np.ndarray, dim: int, vertical_only: bool):
    if dim == 2:
        e = np.array([-k[1], k[0]], dtype=float)
        return [e / np.linalg.norm(e)]
    kf = k.astype(float)
    khat = kf / np.linalg.norm(kf)
    ref = np.array([0.0, 0.0, 1.0])
    if np.linalg.norm(np.cross(ref, khat)) < 1e-12:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(ref, khat)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(khat, e1)
    if vertical_only:
        return [e2]
    return [e1, e2]


@functools.lru_cache(maxsize=None)
def _eigen_table(dim: int, n: int, planar: bool, vertical_only: bool):
    cutoff = 1
    while True:
        modes = ModeSet(dim, cutoff, planar)
        count = sum(len(_directions(k, dim, vertical_only)) for k in modes.wavevectors) * 2
        if count >= n:
            break
        cutoff += 1
    half, dirs, phase = [], [], []
    for h, k in enumerate(modes.wavevectors):
        for e in _directions(k, dim, vertical_only):
            for ph in (1 / np.sqrt(2), -1j / np.sqrt(2)):
                half.append(h)
                dirs.append(e)
                phase.append(ph)
    half = np.array(half[:n])
    cutoff = int(modes.k2[half[-1]])
    return ModeSet(dim, cutoff, planar), half, np.array(dirs[:n]), np.array(phase[:n])


class EigenBasis:
    """First ``n`` real Stokes eigenfunctions in the canonical ordering.

    Eigenfunction j is ``sqrt(2) cos(k.x) e`` or ``sqrt(2) sin(k.x) e`` for a
    half-space wave vector k and a unit divergence-free direction e, ordered by
    (k, direction, cos before sin). Each has unit L2 norm and eigenvalue ``|k|^2``.
    """

    def __init__(self, dim: int, n: int, planar: bool = False, vertical_only: bool = False):
        self.dim, self.n = dim, n
        self.planar, self.vertical_only = planar, vertical_only
        self.modes, self.half, self.directions, self.phase = _eigen_table(dim, n, planar, vertical_only)
        self.lam = self.modes.k2[self.half]
        mat = np.zeros((n, self.modes.size, dim), dtype=complex)
        mat[np.arange(n), self.half] = self.phase[:, None] * self.directions
        self._matrix = mat.reshape(n, -1)

    @classmethod
    def for_bundle(cls, bundle: OperatorBundle, n: int) -> "EigenBasis":
        return cls(bundle.field_dim, n, bundle.planar, vertical_only=bundle.planar)

    def to_field(self, x) -> SpectralField:
        x = np.asarray(x, dtype=float)
        c = x @ self._matrix
        return SpectralField(self.modes, c.reshape(x.shape[:-1] + (self.modes.size, self.dim)))

    def coefficients(self, f: SpectralField) -> np.ndarray:
        """``<f, a_j>_{L2}`` for j < n; components outside V_n are discarded."""
        if not f.modes.compatible(self.modes):
            raise ValueError(f"field on {f.modes} does not match basis on {self.modes}")
        c = f.resample(self.modes).coeffs
        flat = c.reshape(c.shape[:-2] + (-1,))
        return 2.0 * (flat @ self._matrix.conj().T).real

    def norm2(self, x, m) -> np.ndarray:
        return np.sum(self.lam ** float(m) * np.asarray(x) ** 2, axis=-1)

    def basis_fields(self) -> SpectralField:
        return self.to_field(np.eye(self.n))


def project(f: SpectralField, n: int, vertical_only: bool = False) -> SpectralField:
    """Orthogonal projection onto the span of the first ``n`` eigenfunctions."""
    if n < 1:
        raise ValueError("n must be >= 1")
    basis = EigenBasis(f.dim, n, f.modes.planar, vertical_only)
    return basis.to_field(basis.coefficients(f))


def cutoff_fR(x, R: float):
    """Smooth cutoff: 1 on [0, R], 0 on [2R, inf), quintic smoothstep between (C^2)."""
    if R <= 0:
        raise ValueError("R must be positive")
    y = np.clip((np.asarray(x, dtype=float) - R) / R, 0.0, 1.0)
    return 1.0 - y**3 * (10.0 - 15.0 * y + 6.0 * y**2)


class GalerkinSystem:
    """Exact projected drift and noise of one bundle on ``V_n``."""

    def __init__(self, bundle: OperatorBundle, n: int):
        self.bundle = bundle
        self.n = n
        self.basis = EigenBasis.for_bundle(bundle, n)
        self.ladder: SobolevLadder = bundle.ladder
        a = self.basis.basis_fields()
        lam = self.basis.lam
        self.stokes = -bundle.viscosity * lam
        self.noise_count = bundle.noise_count
        self.G = np.zeros((self.noise_count, n, n))
        for i in range(self.noise_count):
            self.G[i] = -self.basis.coefficients(transport_noise(i, a, bundle)).T
        self.correction = {
            ItoCorrection.PROJECTED: np.zeros((n, n)),
            ItoCorrection.GALERKIN: 0.5 * np.einsum("ijk,ikl->jl", self.G, self.G),
        }
        if self.noise_count:
            self.correction[ItoCorrection.PROJECTED] = \
                self.basis.coefficients(ito_drift_correction(a, bundle)).T
        self.Q = self._assemble_quadratic(a) if bundle.nonlinear else np.zeros((n, n, n))
        self._Qflat = self.Q.reshape(n, n * n)
        self._Gflat = self.G.reshape(self.noise_count * n, n)

    def _assemble_quadratic(self, a: SpectralField) -> np.ndarray:
        n = self.n
        Q = np.zeros((n, n, n))
        out = self.basis.modes
        chunk = max(1, 2048 // n)
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            left = SpectralField(a.modes, a.coeffs[start:stop, None])
            right = SpectralField(a.modes, a.coeffs[None, :])
            vals = nonlinear_term(left, right, self.bundle, modes=out)
            # vals[k, l] -> coefficients j
            Q[:, start:stop, :] = -np.moveaxis(self.basis.coefficients(vals), -1, 0)
        return Q

    def linear(self, correction: ItoCorrection) -> np.ndarray:
        return np.diag(self.stokes) + self.correction[ItoCorrection(correction)]

    def quadratic(self, x: np.ndarray) -> np.ndarray:
        outer = (x[..., :, None] * x[..., None, :]).reshape(x.shape[:-1] + (self.n * self.n,))
        return outer @ self._Qflat.T

    def drift(self, x: np.ndarray, correction=ItoCorrection.PROJECTED, ito: bool = True) -> np.ndarray:
        out = self.quadratic(x) + self.stokes * x
        if ito and self.noise_count:
            out = out + x @ self.correction[ItoCorrection(correction)].T
        return out

    def noise(self, x: np.ndarray) -> np.ndarray:
        """``G_i x`` stacked as ``(..., noise_count, n)``."""
        if not self.noise_count:
            return np.zeros(x.shape[:-1] + (0, self.n))
        return (x @ self._Gflat.T).reshape(x.shape[:-1] + (self.noise_count, self.n))

    def norm2(self, x, space: str) -> np.ndarray:
        return self.basis.norm2(x, self.ladder.exponent(space))


@functools.lru_cache(maxsize=32)
def galerkin_system(bundle: OperatorBundle, n: int) -> GalerkinSystem:
    return GalerkinSystem(bundle, n)


def _increment(system: GalerkinSystem, x, dW, dt, scheme, correction, R):
    """One truncated step for a batch; returns (new_state, fR_used)."""
    fr = cutoff_fR(system.norm2(x, "H"), R)
    if scheme is Scheme.EULER_MARUYAMA_ITO:
        move = system.drift(x, correction) * dt
        if system.noise_count:
            move = move + np.einsum("...i,...in->...n", dW, system.noise(x))
        return x + fr[..., None] * move, fr
    move = system.drift(x, ito=False) * dt
    if system.noise_count:
        move = move + np.einsum("...i,...in->...n", dW, system.noise(x))
    pred = x + fr[..., None] * move
    fr_pred = cutoff_fR(system.norm2(pred, "H"), R)
    move_pred = system.drift(pred, ito=False) * dt
    if system.noise_count:
        move_pred = move_pred + np.einsum("...i,...in->...n", dW, system.noise(pred))
    return x + 0.5 * (fr[..., None] * move + fr_pred[..., None] * move_pred), fr


def step(state: SpectralField, t: float, cfg: GalerkinConfig, bundle: OperatorBundle,
         dW, dt: Optional[float] = None) -> SpectralField:
    """One step of the truncated Galerkin system from a field in ``V_n``.

    ``dt`` overrides ``cfg.dt`` (0 is allowed here). Raises FloatingPointError
    when the step produces non-finite values.
    """
    del t
    system = galerkin_system(bundle, cfg.cutoff_n)
    x = system.basis.coefficients(state)
    dW = np.asarray(dW, dtype=float).reshape(system.noise_count)
    h = cfg.dt if dt is None else float(dt)
    with np.errstate(over="ignore", invalid="ignore"):
        new, _ = _increment(system, x, dW, h, cfg.scheme, cfg.ito_correction, cfg.R)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite Galerkin state")
    return system.basis.to_field(new)


def auto_R(cfg: GalerkinConfig, initial_bound: float, bundle: Optional[OperatorBundle] = None,
           margin: float = 1.01) -> float:
    """Truncation radius that never binds before the UH hitting time.

    Before the hit, ``||x||_U^2 < M + ||x_0||_U^2 <= M + initial_bound`` and on
    ``V_n`` the H norm exceeds the U norm by at most ``lambda_n^{m_H - m_U}``.
    ``initial_bound`` bounds ``||x_0||_H^2`` (hence ``||x_0||_U^2``, as lambda_1 = 1).
    """
    from .operators import OperatorBundle as _OB

    bundle = bundle or _OB()
    basis = EigenBasis.for_bundle(bundle, cfg.cutoff_n)
    gap = float(bundle.ladder.m_H - bundle.ladder.m_U)
    equiv = basis.lam.max() ** gap
    return margin * max(initial_bound, equiv * (cfg.M + initial_bound))


class Ensemble:
    """A batch of sample paths of one Galerkin system advanced in lockstep.

    Stopped samples keep their state and functionals frozen (the stopped
    process). Per-sample bookkeeping follows the hitting-time definition:
    ``uh = sup_{r<=t} ||x_r||_U^2 + int_0^t ||x_r||_H^2 dr`` with a left
    Riemann sum, checked after every step.
    """

    def __init__(self, system: GalerkinSystem, cfg: GalerkinConfig, x0: np.ndarray,
                 record_states: bool = False):
        self.system = system
        self.cfg = cfg
        x0 = np.array(x0, dtype=float, copy=True)
        self.state = x0
        self.samples = x0.shape[0]
        nU, nH, nV = (system.norm2(x0, s) for s in "UHV")
        self.normU0 = nU
        self.sup_U, self.int_H = nU.copy(), np.zeros_like(nU)
        self.sup_H, self.int_V = nH.copy(), np.zeros_like(nU)
        self._last = (nU, nH, nV)
        self.threshold = cfg.M + nU
        self.active = np.ones(self.samples, dtype=bool)
        self.tau = np.full(self.samples, cfg.n_steps * cfg.dt)
        self.tau_step = np.full(self.samples, cfg.n_steps)
        self.cause = np.full(self.samples, Cause.HORIZON.value, dtype=object)
        self.k = 0
        self.fr = cutoff_fR(nH, cfg.R)
        self.history = {"uh": [self.uh.copy()], "hv": [self.hv.copy()], "U": [nU], "H": [nH],
                        "V": [nV], "fR": [self.fr.copy()]}
        self.states = [x0.copy()] if record_states else None

    @property
    def uh(self) -> np.ndarray:
        return self.sup_U + self.int_H

    @property
    def hv(self) -> np.ndarray:
        return self.sup_H + self.int_V

    @property
    def time(self) -> float:
        return self.k * self.cfg.dt

    def advance(self, dW: np.ndarray) -> None:
        cfg, system = self.cfg, self.system
        with np.errstate(over="ignore", invalid="ignore"):
            new, fr = _increment(system, self.state, dW, cfg.dt, cfg.scheme,
                                 cfg.ito_correction, cfg.R)
            finite = np.all(np.isfinite(new), axis=-1)
            nU, nH, nV = (system.norm2(new, s) for s in "UHV")
            finite &= np.isfinite(nU) & np.isfinite(nH) & np.isfinite(nV)
        self.k += 1
        blown = self.active & ~finite
        if blown.any():
            self.cause[blown] = Cause.NON_FINITE.value
            self.tau[blown] = (self.k - 1) * cfg.dt
            self.tau_step[blown] = self.k - 1
            self.active &= finite
        act = self.active
        _, pH, pV = self._last
        self.int_H = np.where(act, self.int_H + pH * cfg.dt, self.int_H)
        self.int_V = np.where(act, self.int_V + pV * cfg.dt, self.int_V)
        self.sup_U = np.where(act, np.maximum(self.sup_U, np.where(act, nU, 0.0)), self.sup_U)
        self.sup_H = np.where(act, np.maximum(self.sup_H, np.where(act, nH, 0.0)), self.sup_H)
        self.state = np.where(act[:, None], new, self.state)
        self.fr = np.where(act, fr, self.fr)
        last = tuple(np.where(act, a, b) for a, b in zip((nU, nH, nV), self._last))
        self._last = last
        hit = act & (self.uh >= self.threshold)
        if hit.any():
            self.cause[hit] = Cause.UH_HIT.value
            self.tau[hit] = self.k * cfg.dt
            self.tau_step[hit] = self.k
            self.active &= ~hit
        fr_now = cutoff_fR(last[1], cfg.R)
        h = self.history
        h["uh"].append(self.uh.copy())
        h["hv"].append(self.hv.copy())
        h["U"].append(last[0])
        h["H"].append(last[1])
        h["V"].append(last[2])
        h["fR"].append(fr_now)
        if self.states is not None:
            self.states.append(self.state.copy())

    def run(self, increments: np.ndarray) -> "Ensemble":
        """Advance through ``increments`` of shape ``(samples, n_steps, noise_count)``."""
        for j in range(increments.shape[1]):
            self.advance(increments[:, j, :])
        return self

    def series(self, name: str) -> np.ndarray:
        """Recorded quantity as ``(n_steps + 1, samples)``."""
        return np.array(self.history[name])


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    coefficients: np.ndarray
    basis: EigenBasis
    norm_U2: np.ndarray
    norm_H2: np.ndarray
    norm_V2: np.ndarray
    uh_running: np.ndarray
    hv_running: np.ndarray
    fR: np.ndarray
    tau: float
    cause: Cause
    increments: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def states(self) -> list:
        return [self.basis.to_field(x) for x in self.coefficients]

    def state_at(self, j: int) -> SpectralField:
        return self.basis.to_field(self.coefficients[j])

    COLUMNS = ("time", "norm_U2", "norm_H2", "norm_V2", "uh_running", "hv_running", "fR_value")

    def rows(self):
        for j in range(len(self.times)):
            yield (self.times[j], self.norm_U2[j], self.norm_H2[j], self.norm_V2[j],
                   self.uh_running[j], self.hv_running[j], self.fR[j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([f"{v:.17g}" for v in row])


def run(initial: SpectralField, cfg: GalerkinConfig, bundle: OperatorBundle,
        path: BrownianPath) -> TrajectoryRecord:
    """Integrate one sample path up to the UH hitting time, the horizon or a blow-up."""
    system = galerkin_system(bundle, cfg.cutoff_n)
    if path.count != system.noise_count:
        raise ValueError(f"path drives {path.count} noises, bundle has {system.noise_count}")
    x0 = system.basis.coefficients(initial)
    residual = initial - system.basis.to_field(x0)
    scale = max(1.0, float(np.abs(initial.coeffs).max(initial=0.0)))
    if np.abs(residual.coeffs).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("initial condition is not contained in V_n")
    ens = Ensemble(system, cfg, x0[None, :], record_states=True)
    incs = path.increments(cfg.n_steps)
    for j in range(cfg.n_steps):
        ens.advance(incs[j][None, :])
    times = np.arange(cfg.n_steps + 1) * cfg.dt
    return TrajectoryRecord(
        times=times,
        coefficients=np.array(ens.states)[:, 0, :],
        basis=system.basis,
        norm_U2=ens.series("U")[:, 0],
        norm_H2=ens.series("H")[:, 0],
        norm_V2=ens.series("V")[:, 0],
        uh_running=ens.series("uh")[:, 0],
        hv_running=ens.series("hv")[:, 0],
        fR=ens.series("fR")[:, 0],
        tau=float(ens.tau[0]),
        cause=Cause(ens.cause[0]),
        increments=incs,
    )
