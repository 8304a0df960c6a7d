"""SALT Navier-Stokes operators evaluated pseudo-spectrally.

Bilinear products are computed on a grid fine enough that the result,
restricted to the requested output mode set, carries no aliasing error.
Without an explicit output set the result lives on the smallest ball that
holds the full product, so compositions such as ``B_i B_i f`` stay exact.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import (
    VELOCITY_LADDER,
    VORTICITY_LADDER,
    ModeSet,
    SobolevLadder,
    SpectralField,
    _from_grid,
    _to_grid,
    leray_project,
    stokes_apply,
)

__all__ = [
    "Form",
    "OperatorBundle",
    "advect",
    "stretch",
    "lie_bracket",
    "transport_noise",
    "ito_drift_correction",
    "nonlinear_term",
    "drift",
    "biot_savart",
]


class Form(enum.Enum):
    VELOCITY = "velocity"
    VORTICITY = "vorticity"


class NoiseSquare(enum.Enum):
    """How the projector enters the Itô correction in velocity form."""

    PROJECT_EACH = "project_each"  # (P B_i)(P B_i)
    PROJECT_OUTER = "project_outer"  # P (B_i B_i)


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Drift and diffusion of the SALT system, configured for one form.

    ``noise`` is a :class:`saltgalerkin.noise.NoiseModel` (or None for the
    deterministic system). ``nonlinear=False`` drops the quadratic term, leaving
    the linear Stokes plus transport system. Instances hash by identity so derived Galerkin
    systems can be cached per bundle.
    """

    form: Form = Form.VELOCITY
    dim: int = 2
    viscosity: float = 1.0
    noise: Optional[object] = None
    square: NoiseSquare = NoiseSquare.PROJECT_EACH
    ladder: SobolevLadder = field(default=None)
    nonlinear: bool = True

    def __post_init__(self):
        form = Form(self.form)
        object.__setattr__(self, "form", form)
        object.__setattr__(self, "square", NoiseSquare(self.square))
        expected = VELOCITY_LADDER if form is Form.VELOCITY else VORTICITY_LADDER
        if self.ladder is None:
            object.__setattr__(self, "ladder", expected)
        elif self.ladder != expected:
            raise ValueError(f"{form.value} form requires ladder {expected}, got {self.ladder}")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.noise is not None and self.noise.count:
            modes = self.noise.modes
            if not modes.compatible(self.field_modes(1)):
                raise ValueError(f"noise fields on {modes} do not match bundle layout")

    @property
    def planar(self) -> bool:
        """2D vorticity is carried by planar 3D fields."""
        return self.form is Form.VORTICITY and self.dim == 2

    @property
    def field_dim(self) -> int:
        return 3 if self.planar else self.dim

    def field_modes(self, cutoff: int) -> ModeSet:
        return ModeSet(self.field_dim, cutoff, self.planar)

    @property
    def noise_count(self) -> int:
        return 0 if self.noise is None else self.noise.count

    def xi(self, i: int) -> SpectralField:
        if not 0 <= i < self.noise_count:
            raise IndexError(f"noise index {i} outside [0, {self.noise_count})")
        return self.noise.xis[i]

    def without_noise(self) -> "OperatorBundle":
        return OperatorBundle(self.form, self.dim, self.viscosity, None, self.square,
                              nonlinear=self.nonlinear)

    def stokes_only(self) -> "OperatorBundle":
        return OperatorBundle(self.form, self.dim, self.viscosity, None, self.square,
                              nonlinear=False)


def _product_shape(a: ModeSet, b: ModeSet, out: ModeSet) -> tuple:
    shape = []
    for ka, kb, ko in zip(a.axis_kmax(), b.axis_kmax(), out.axis_kmax()):
        if ka == kb == ko == 0:
            shape.append(1)
            continue
        n = max(ka + kb + ko + 1, 2 * ka + 1, 2 * kb + 1, 2 * ko + 1)
        shape.append(n + (n % 2))
    return tuple(shape)


def _gradient_coeffs(f: SpectralField) -> np.ndarray:
    """``i k_a c_b`` flattened to ``(..., n, dim*dim)`` with index ``a*dim + b``."""
    k = f.modes.wavevectors.astype(float)
    grad = 1j * k[:, :, None] * f.coeffs[..., :, None, :]
    return grad.reshape(grad.shape[:-2] + (f.dim * f.dim,))


def _check_pair(a: SpectralField, b: SpectralField):
    if not a.modes.compatible(b.modes):
        raise ValueError(f"grid mismatch: {a.modes} vs {b.modes}")


def _bilinear(phi, psi, out, kind):
    _check_pair(phi, psi)
    out = out or phi.modes.sum_set(psi.modes)
    shape = _product_shape(phi.modes, psi.modes, out)
    d = phi.dim
    G = int(np.prod(shape))
    if kind == "advect":
        vec = _to_grid(phi.modes, phi.coeffs, shape)
        grad = _to_grid(psi.modes, _gradient_coeffs(psi), shape)
    else:
        vec = _to_grid(psi.modes, psi.coeffs, shape)
        grad = _to_grid(phi.modes, _gradient_coeffs(phi), shape)
    vec = vec.reshape(vec.shape[:-len(shape) - 1] + (d, G))
    grad = grad.reshape(grad.shape[:-len(shape) - 1] + (d, d, G))
    if kind == "advect":
        # sum_j phi^j d_j psi^k
        prod = np.einsum("...jG,...jkG->...kG", vec, grad)
    else:
        # sum_j psi^j d_k phi^j
        prod = np.einsum("...jG,...kjG->...kG", vec, grad)
    prod = prod.reshape(prod.shape[:-1] + shape)
    return SpectralField(out, _from_grid(prod, out))


def advect(phi: SpectralField, psi: SpectralField, modes: Optional[ModeSet] = None) -> SpectralField:
    """``L_phi psi = sum_j phi^j d_j psi`` (not projected)."""
    return _bilinear(phi, psi, modes, "advect")


def stretch(phi: SpectralField, psi: SpectralField, modes: Optional[ModeSet] = None) -> SpectralField:
    """``T_phi psi = sum_j psi^j grad phi^j``."""
    return _bilinear(phi, psi, modes, "stretch")


def lie_bracket(phi: SpectralField, psi: SpectralField, modes: Optional[ModeSet] = None) -> SpectralField:
    """``L(phi, psi) = L_phi psi - L_psi phi``."""
    out = modes or phi.modes.sum_set(psi.modes)
    return advect(phi, psi, out) - advect(psi, phi, out)


def transport_noise(i: int, f: SpectralField, bundle: OperatorBundle,
                    project: bool = True) -> SpectralField:
    """Action of the i-th noise operator on ``f``.

    Velocity form: ``P (L_xi + T_xi) f`` (``project=False`` drops the P).
    Vorticity form: the bracket ``L(xi, f)``.
    """
    xi = bundle.xi(i)
    if bundle.form is Form.VORTICITY:
        return lie_bracket(xi, f)
    out = xi.modes.sum_set(f.modes)
    b = advect(xi, f, out) + stretch(xi, f, out)
    return leray_project(b) if project else b


def ito_drift_correction(f: SpectralField, bundle: OperatorBundle) -> SpectralField:
    """``1/2 sum_i B_i^2 f`` with the projector placement set by ``bundle.square``."""
    total = SpectralField.zeros(f.modes, f.batch_shape)
    outer = bundle.form is Form.VELOCITY and bundle.square is NoiseSquare.PROJECT_OUTER
    for i in range(bundle.noise_count):
        once = transport_noise(i, f, bundle, project=not outer)
        twice = transport_noise(i, once, bundle, project=not outer)
        total = total + twice
    if outer:
        total = leray_project(total)
    return 0.5 * total


def biot_savart(w: SpectralField) -> SpectralField:
    """Velocity with curl ``w``: ``u_k = i k x w_k / |k|^2`` (3D or planar 3D)."""
    if w.dim != 3:
        raise ValueError("Biot-Savart acts on 3D (or planar 3D) vorticity fields")
    k = w.modes.wavevectors.astype(float)
    u = 1j * np.cross(np.broadcast_to(k, w.coeffs.shape), w.coeffs) / w.modes.k2[:, None]
    return SpectralField(w.modes, u)


def nonlinear_term(f: SpectralField, g: SpectralField, bundle: OperatorBundle,
                   modes: Optional[ModeSet] = None) -> SpectralField:
    """The quadratic part of the drift as a bilinear form, without its minus sign.

    Velocity form: ``P L_f g``. Vorticity form: ``L(BS f, g)``.
    ``nonlinear_term(u, u)`` is the term subtracted in :func:`drift`.
    """
    if bundle.form is Form.VORTICITY:
        return lie_bracket(biot_savart(f), g, modes)
    return leray_project(advect(f, g, modes))


def drift(t: float, f: SpectralField, bundle: OperatorBundle) -> SpectralField:
    """Itô drift of the converted equation.

    Velocity form: ``-P L_u u - nu A u + 1/2 sum P B_i^2 u``.
    Vorticity form: ``-L(u, w) + nu Lap w + 1/2 sum L_i^2 w`` with ``u = BS(w)``.
    The SALT operators are autonomous; ``t`` is accepted for interface symmetry.
    """
    del t
    total = -bundle.viscosity * stokes_apply(f, 1)
    if bundle.nonlinear:
        total = total - nonlinear_term(f, f, bundle)
    if bundle.noise_count:
        total = total + ito_drift_correction(f, bundle)
    return total
