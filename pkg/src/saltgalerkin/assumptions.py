"""Sampling checks of the growth, coercivity and monotonicity assumptions.

Every assumption has the shape ``LHS <= c * D - kappa * W`` where ``D`` is a
K-weighted norm product and ``W`` (absent for most checks) a norm that the
dissipation controls. Random elements of V_n are drawn, both sides evaluated
with the operators of an :class:`OperatorBundle` at ``t = 0``, and the
smallest feasible ``c`` (and, for the coercive checks, a positive ``kappa``)
is reported.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .galerkin import EigenBasis
from .operators import Form, NoiseSquare, OperatorBundle, drift, ito_drift_correction, transport_noise
from .spectral import SpectralField, sobolev_inner

__all__ = [
    "KWeights",
    "AssumptionReport",
    "CHECK_IDS",
    "AMPLITUDES",
    "sample_elements",
    "evaluate_terms",
    "run_check",
    "check_growth",
    "check_coercivity",
    "check_monotonicity",
    "check_remaining",
    "check_all",
    "stokes_closed_form",
    "correction_ordering_gap",
    "write_reports",
]

AMPLITUDES = (0.1, 1.0, 10.0)

# checks carrying a -kappa * W term
_COERCIVE = {"A3.3(coercivity)", "A3.4(mono)", "A4.3(coercive-U)"}
# checks that need a second (and third) sample
_PAIRED = {"A3.2(222)", "A3.2(333)", "A3.4(mono)", "A3.4(quad)", "A3.6(dual)",
           "A4.1(X-Lipschitz)", "A4.2(mono-X)", "A4.2(quad-X)"}

CHECK_IDS = (
    "A3.2(111)", "A3.2(222)", "A3.2(333)", "A3.3(coercivity)", "A3.3(quad)",
    "A3.4(mono)", "A3.4(quad)", "A3.5(growth-U)", "A3.5(quad-U)", "A3.6(dual)",
    "A4.1(X-growth)", "A4.1(X-Lipschitz)", "A4.2(mono-X)", "A4.2(quad-X)",
    "A4.3(coercive-U)",
)


@dataclass(frozen=True)
class KWeights:
    """Exponents of ``K(phi) = 1 + |phi|_U^p`` and ``K(phi, psi) = 1 + |phi|_U^p + |psi|_U^q``.

    ``p_tilde`` and ``q_tilde`` are the H-norm exponents of ``K~``; the checks
    here use ``K~_2`` (both equal to 2) as the assumptions do.
    """

    p: float = 4.0
    q: float = 4.0
    p_tilde: float = 2.0
    q_tilde: float = 2.0

    def __post_init__(self):
        if min(self.p, self.q, self.p_tilde, self.q_tilde) < 0:
            raise ValueError("K exponents must be non-negative")

    def K(self, u_phi, u_psi=None):
        """``u_*`` are U norms (not squared)."""
        out = 1.0 + np.asarray(u_phi) ** self.p
        if u_psi is not None:
            out = out + np.asarray(u_psi) ** self.q
        return out

    def K2(self, u_phi, h_phi, u_psi=None, h_psi=None):
        """``K~_2``: ``K`` plus the squared H norms."""
        out = self.K(u_phi, u_psi) + np.asarray(h_phi) ** 2
        if h_psi is not None:
            out = out + np.asarray(h_psi) ** 2
        return out


@dataclass
class AssumptionReport:
    assumption_id: str
    n: int
    samples: int
    c: float
    kappa: Optional[float]
    worst_violation: float
    witness: dict
    lhs: np.ndarray = field(default=None, repr=False)
    rhs_c: np.ndarray = field(default=None, repr=False)
    rhs_kappa: np.ndarray = field(default=None, repr=False)

    def row(self) -> dict:
        return {"assumption_id": self.assumption_id, "n": self.n, "samples": self.samples,
                "c": self.c, "kappa": "" if self.kappa is None else self.kappa,
                "worst_violation": self.worst_violation}


def sample_elements(bundle: OperatorBundle, n: int, samples: int, seed: int = 0, stream: int = 0):
    """Random coefficient vectors in V_n, shape ``(samples, n)``, plus their amplitudes.

    Coefficients are Gaussian with per-mode standard deviation ``lambda^{-m_V/2}``,
    then rescaled so the U norm equals the amplitude; amplitudes cycle through
    :data:`AMPLITUDES`.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    basis = EigenBasis.for_bundle(bundle, n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, stream]))
    x = rng.standard_normal((samples, n)) * basis.lam ** (-float(bundle.ladder.m_V) / 2)
    amps = np.array([AMPLITUDES[s % len(AMPLITUDES)] for s in range(samples)])
    norm = np.sqrt(basis.norm2(x, bundle.ladder.m_U))
    if np.any(norm == 0):
        raise ValueError("degenerate (all-zero) sample")
    return x * (amps / norm)[:, None], amps


class _Evaluator:
    """Norms and pairings of drift/noise images for one batch of V_n elements."""

    def __init__(self, bundle: OperatorBundle, basis: EigenBasis, x: np.ndarray):
        self.bundle, self.basis, self.ladder = bundle, basis, bundle.ladder
        self.x = x
        self.f = basis.to_field(x)
        self._A = None
        self._G = None

    @property
    def A(self) -> SpectralField:
        if self._A is None:
            self._A = drift(0.0, self.f, self.bundle)
        return self._A

    @property
    def G(self) -> list:
        if self._G is None:
            self._G = [-transport_noise(i, self.f, self.bundle) for i in range(self.bundle.noise_count)]
        return self._G

    def norm2(self, space):
        return self.basis.norm2(self.x, self.ladder.exponent(space))

    def m(self, space):
        return self.ladder.exponent(space)


def _inner(f, g, m):
    return sobolev_inner(f, g, m)


def _pair(f, g, m, tol=1e-12):
    """``<f, g>_m`` with values below ``tol`` times the Cauchy-Schwarz bound set to 0.

    Used where the pairing is squared: a structurally zero pairing would
    otherwise surface as a round-off constant of order 1e-33.
    """
    val = sobolev_inner(f, g, m)
    bound = np.sqrt(sobolev_inner(f, f, m) * sobolev_inner(g, g, m))
    return np.where(np.abs(val) <= tol * bound, 0.0, val)


def _diff_noise(a: _Evaluator, b: _Evaluator):
    return [ga - gb for ga, gb in zip(a.G, b.G)]


def _zero(a: _Evaluator):
    return np.zeros(a.x.shape[0])


def _project(basis: EigenBasis, f: SpectralField) -> SpectralField:
    return basis.to_field(basis.coefficients(f))


def evaluate_terms(check_id: str, bundle: OperatorBundle, n: int, x, y=None, z=None,
                   weights: KWeights = KWeights()):
    """``(LHS, D, W)`` per sample for one assumption; ``y``/``z`` are the partner samples.

    All quantities are arrays of length ``len(x)``; ``W`` is zero for checks
    without a kappa term.
    """
    basis = EigenBasis.for_bundle(bundle, n)
    a = _Evaluator(bundle, basis, np.atleast_2d(x))
    w = weights
    uU, uH, uV = (np.sqrt(a.norm2(s)) for s in "UHV")
    W = _zero(a)
    if check_id in _PAIRED:
        if y is None:
            raise ValueError(f"{check_id} needs a partner sample")
        b = _Evaluator(bundle, basis, np.atleast_2d(y))
        vU, vH, vV = (np.sqrt(b.norm2(s)) for s in "UHV")
        d = _Evaluator(bundle, basis, a.x - b.x)
        dU, dH, dV, dX = (d.norm2(s) for s in "UHVX")
        dA = a.A - b.A
        dG = _diff_noise(a, b)
    if check_id == "A3.2(111)":
        L = _inner(a.A, a.A, a.m("U")) + sum((_inner(g, g, a.m("H")) for g in a.G), _zero(a))
        D = w.K(uU) * (1 + uV**2)
    elif check_id == "A3.2(222)":
        L = _inner(dA, dA, a.m("U"))
        D = (w.K(uU, vU) + uV**w.p + vV**w.q) * dV
    elif check_id == "A3.2(333)":
        L = sum((_inner(g, g, a.m("U")) for g in dG), _zero(a))
        D = w.K(uU, vU) * dH
    elif check_id == "A3.3(coercivity)":
        PA = _project(basis, a.A)
        L = 2 * _inner(PA, a.f, a.m("H"))
        for g in a.G:
            Pg = _project(basis, g)
            L = L + _inner(Pg, Pg, a.m("H"))
        D = w.K2(uU, uH) * (1 + uH**2)
        W = uV**2
    elif check_id == "A3.3(quad)":
        # <P_n g, phi>_H = <g, phi>_H for phi in V_n; the unprojected g gives the
        # round-off floor a meaningful scale when P_n g vanishes
        L = sum((_pair(g, a.f, a.m("H")) ** 2 for g in a.G), _zero(a))
        D = w.K2(uU, uH) * (1 + uH**4)
    elif check_id == "A3.4(mono)":
        L = 2 * _inner(dA, d.f, a.m("U")) + sum((_inner(g, g, a.m("U")) for g in dG), _zero(a))
        D = w.K2(uU, uH, vU, vH) * dU
        W = dH
    elif check_id == "A3.4(quad)":
        L = sum((_pair(g, d.f, a.m("U")) ** 2 for g in dG), _zero(a))
        D = w.K2(uU, uH, vU, vH) * dU**2
    elif check_id == "A3.5(growth-U)":
        L = 2 * _inner(a.A, a.f, a.m("U")) + sum((_inner(g, g, a.m("U")) for g in a.G), _zero(a))
        D = w.K(uU) * (1 + uH**2)
    elif check_id == "A3.5(quad-U)":
        L = sum((_pair(g, a.f, a.m("U")) ** 2 for g in a.G), _zero(a))
        D = w.K(uU) * (1 + uH**4)
    elif check_id == "A3.6(dual)":
        if z is None:
            raise ValueError(f"{check_id} needs a third sample")
        e = _Evaluator(bundle, basis, np.atleast_2d(z))
        L = _inner(dA, e.f, a.m("U"))
        D = (1 + np.sqrt(e.norm2("H"))) * (w.K(uU, vU) + uV + vV) * np.sqrt(dH)
    elif check_id == "A4.1(X-growth)":
        L = _inner(a.A, a.A, a.m("X")) + sum((_inner(g, g, a.m("U")) for g in a.G), _zero(a))
        D = w.K(uU) * (1 + uH**2)
    elif check_id == "A4.1(X-Lipschitz)":
        L = _inner(dA, dA, a.m("X"))
        D = w.K2(uU, uH, vU, vH) * dH
    elif check_id == "A4.2(mono-X)":
        L = 2 * _inner(dA, d.f, a.m("X")) + sum((_inner(g, g, a.m("X")) for g in dG), _zero(a))
        D = w.K2(uU, uH, vU, vH) * dX
    elif check_id == "A4.2(quad-X)":
        L = sum((_pair(g, d.f, a.m("X")) ** 2 for g in dG), _zero(a))
        D = w.K2(uU, uH, vU, vH) * dX**2
    elif check_id == "A4.3(coercive-U)":
        L = 2 * _inner(a.A, a.f, a.m("U")) + sum((_inner(g, g, a.m("U")) for g in a.G), _zero(a))
        D = w.K(uU)
        W = uH**2
    else:
        raise KeyError(f"unknown assumption id {check_id!r}")
    return np.asarray(L, dtype=float), np.asarray(D, dtype=float), np.asarray(W, dtype=float)


def _fit_constants(check_id, L, D, W):
    """Smallest ``c`` (and a positive ``kappa`` for coercive checks) with ``L <= c D - kappa W``.

    The kappa rule: allow ``c`` to grow to ``T = 2 c(0)`` (``T = 0`` when no
    constant is needed) and take the largest kappa feasible at ``T``; then
    report the smallest ``c`` feasible at that kappa.
    """
    keep = (D > 0) | (L != 0)
    if np.any((D <= 0) & (L > 0)):
        return np.inf, None
    L, D, W = L[keep], D[keep], W[keep]
    if L.size == 0:
        return 0.0, (np.inf if check_id in _COERCIVE else None)

    def c_at(kappa):
        return max(0.0, float(np.max((L + kappa * W) / D)))

    kappa = None
    c = c_at(0.0)
    if check_id in _COERCIVE:
        T = 2.0 * c
        pos = W > 0
        kappa = float(np.min((T * D[pos] - L[pos]) / W[pos])) if pos.any() else np.inf
        c = c_at(kappa) if np.isfinite(kappa) else c
    return c, kappa


def _violation(L, D, W, c, kappa):
    k = 0.0 if kappa is None or not np.isfinite(kappa) else kappa
    return L - (c * D - k * W)


def run_check(check_id: str, bundle: OperatorBundle, n: int, samples: int,
              weights: KWeights = KWeights(), seed: int = 0) -> AssumptionReport:
    x, amps = sample_elements(bundle, n, samples, seed, 0)
    y = z = None
    if check_id in _PAIRED:
        y, _ = sample_elements(bundle, n, samples, seed, 1)
        z, _ = sample_elements(bundle, n, samples, seed, 2)
    L, D, W = evaluate_terms(check_id, bundle, n, x, y, z, weights)
    c, kappa = _fit_constants(check_id, L, D, W)
    if not np.isfinite(c):
        worst = np.inf
        margin = L
    else:
        margin = _violation(L, D, W, c, kappa)
        # the fitted c is a float max of ratios; nudge it until the margin is exact
        while margin.max() > 0:
            c = float(np.nextafter(c, np.inf))
            margin = _violation(L, D, W, c, kappa)
        worst = float(margin.max())
    j = int(np.argmax(margin))
    return AssumptionReport(check_id, n, samples, float(c), kappa, worst,
                            {"index": j, "amplitude": float(amps[j])}, L, D, W)


def check_growth(bundle, n, samples, weights=KWeights(), seed=0) -> AssumptionReport:
    """Growth bound ``|A phi|_U^2 + sum |G_i phi|_H^2 <= c K(phi) (1 + |phi|_V^2)``."""
    return run_check("A3.2(111)", bundle, n, samples, weights, seed)


def check_coercivity(bundle, n, samples, weights=KWeights(), seed=0) -> AssumptionReport:
    """Projected energy inequality in H with the ``-kappa |phi|_V^2`` dissipation term."""
    return run_check("A3.3(coercivity)", bundle, n, samples, weights, seed)


def check_monotonicity(bundle, n, samples, weights=KWeights(), seed=0) -> AssumptionReport:
    """Monotonicity of the difference of two solutions in U with ``-kappa |phi-psi|_H^2``."""
    return run_check("A3.4(mono)", bundle, n, samples, weights, seed)


def check_remaining(bundle, n, samples, weights=KWeights(), seed=0) -> list:
    """Reports for every other listed inequality.

    The X-space checks are skipped in vorticity form, where X is not used.
    """
    main = {"A3.2(111)", "A3.3(coercivity)", "A3.4(mono)"}
    ids = [i for i in CHECK_IDS if i not in main]
    if bundle.form is Form.VORTICITY:
        ids = [i for i in ids if not i.startswith("A4")]
    return [run_check(i, bundle, n, samples, weights, seed) for i in ids]


def check_all(bundle, n, samples, weights=KWeights(), seed=0) -> list:
    reports = [check_growth(bundle, n, samples, weights, seed),
               check_coercivity(bundle, n, samples, weights, seed),
               check_monotonicity(bundle, n, samples, weights, seed)]
    reports += check_remaining(bundle, n, samples, weights, seed)
    order = {k: i for i, k in enumerate(CHECK_IDS)}
    return sorted(reports, key=lambda r: order[r.assumption_id])


def stokes_closed_form(check_id: str, bundle: OperatorBundle, n: int, samples: int,
                       weights: KWeights = KWeights(), seed: int = 0):
    """``(c, kappa)`` for the pure Stokes drift by eigenvalue power counting.

    With ``A phi = -nu lambda x`` on the eigen-coefficients and no noise, every
    norm is a weighted sum ``sum lambda^m x^2``; no field is ever transformed.
    Uses the same samples as :func:`run_check`.
    """
    lam = EigenBasis.for_bundle(bundle, n).lam
    nu = bundle.viscosity
    lad = bundle.ladder
    m = {s: float(lad.exponent(s)) for s in "UHVX"}

    def n2(v, s, shift=0.0):
        return np.sum(lam ** (m[s] + shift) * v**2, axis=-1)

    x, _ = sample_elements(bundle, n, samples, seed, 0)
    y, _ = sample_elements(bundle, n, samples, seed, 1)
    z, _ = sample_elements(bundle, n, samples, seed, 2)
    w = weights
    uU, uH, uV = (np.sqrt(n2(x, s)) for s in "UHV")
    vU, vH, vV = (np.sqrt(n2(y, s)) for s in "UHV")
    d = x - y
    zero = np.zeros(len(x))
    W = zero
    if check_id == "A3.2(111)":
        L, D = nu**2 * n2(x, "U", 2), w.K(uU) * (1 + uV**2)
    elif check_id == "A3.2(222)":
        L, D = nu**2 * n2(d, "U", 2), (w.K(uU, vU) + uV**w.p + vV**w.q) * n2(d, "V")
    elif check_id in ("A3.2(333)", "A3.4(quad)", "A4.2(quad-X)"):
        L, D = zero, np.ones_like(zero)
    elif check_id == "A3.3(coercivity)":
        L, D, W = -2 * nu * n2(x, "H", 1), w.K2(uU, uH) * (1 + uH**2), uV**2
    elif check_id == "A3.3(quad)" or check_id == "A3.5(quad-U)":
        L, D = zero, np.ones_like(zero)
    elif check_id == "A3.4(mono)":
        L, D, W = -2 * nu * n2(d, "U", 1), w.K2(uU, uH, vU, vH) * n2(d, "U"), n2(d, "H")
    elif check_id == "A3.5(growth-U)":
        L, D = -2 * nu * n2(x, "U", 1), w.K(uU) * (1 + uH**2)
    elif check_id == "A3.6(dual)":
        L = -nu * np.sum(lam ** (m["U"] + 1) * d * z, axis=-1)
        D = (1 + np.sqrt(n2(z, "H"))) * (w.K(uU, vU) + uV + vV) * np.sqrt(n2(d, "H"))
    elif check_id == "A4.1(X-growth)":
        L, D = nu**2 * n2(x, "X", 2), w.K(uU) * (1 + uH**2)
    elif check_id == "A4.1(X-Lipschitz)":
        L, D = nu**2 * n2(d, "X", 2), w.K2(uU, uH, vU, vH) * n2(d, "H")
    elif check_id == "A4.2(mono-X)":
        L, D = -2 * nu * n2(d, "X", 1), w.K2(uU, uH, vU, vH) * n2(d, "X")
    elif check_id == "A4.3(coercive-U)":
        L, D, W = -2 * nu * n2(x, "U", 1), w.K(uU), uH**2
    else:
        raise KeyError(f"unknown assumption id {check_id!r}")
    return _fit_constants(check_id, L, D, W)


def correction_ordering_gap(bundle: OperatorBundle, n: int, samples: int, seed: int = 0) -> float:
    """Largest relative L2 gap between ``(P B_i)^2`` and ``P B_i^2`` on sampled elements."""
    if bundle.form is not Form.VELOCITY or not bundle.noise_count:
        return 0.0
    x, _ = sample_elements(bundle, n, samples, seed, 0)
    f = EigenBasis.for_bundle(bundle, n).to_field(x)
    each = ito_drift_correction(f, _with_square(bundle, NoiseSquare.PROJECT_EACH))
    outer = ito_drift_correction(f, _with_square(bundle, NoiseSquare.PROJECT_OUTER))
    gap = each - outer
    scale = np.sqrt(np.maximum(sobolev_inner(each, each, 0), 1e-300))
    return float(np.max(np.sqrt(sobolev_inner(gap, gap, 0)) / scale))


def _with_square(bundle: OperatorBundle, square: NoiseSquare) -> OperatorBundle:
    return OperatorBundle(bundle.form, bundle.dim, bundle.viscosity, bundle.noise, square,
                          nonlinear=bundle.nonlinear)


def write_reports(reports, path) -> None:
    cols = ("assumption_id", "n", "samples", "c", "kappa", "worst_violation")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in reports:
            row = r.row()
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})
