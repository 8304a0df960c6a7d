import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from saltgalerkin.spectral import ModeSet, SpectralField, leray_project

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_field(rng, modes, batch=(), project=True, decay=1.0, vertical=False):
    """Gaussian coefficients with |k|^-decay envelope, optionally Leray-projected.

    ``vertical`` keeps only the third component (planar vorticity layout).
    """
    shape = tuple(batch) + (modes.size, modes.dim)
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= (modes.k2 ** (-decay / 2))[:, None]
    if vertical:
        c[..., :2] = 0.0
    f = SpectralField(modes, c)
    return leray_project(f) if project else f


def full_lattice(f):
    """``{k: c_k}`` over the full lattice (both half spaces) of an unbatched field."""
    out = {}
    for k, c in zip(f.modes.wavevectors, f.coeffs):
        out[tuple(int(v) for v in k)] = c
        out[tuple(-int(v) for v in k)] = np.conj(c)
    return out


def evaluate(f, points, deriv=None):
    """Direct sum ``sum_k c_k e^{ik.x}`` (plus conjugates) at ``points`` of shape (P, d).

    ``deriv`` is a multi-index; no FFT is involved.
    """
    k = f.modes.wavevectors.astype(float)
    phase = np.exp(1j * points @ k.T)
    factor = np.ones(len(k), dtype=complex)
    if deriv is not None:
        factor = np.prod((1j * k) ** np.array(deriv), axis=1)
    vals = phase @ (factor[:, None] * f.coeffs)
    return 2.0 * vals.real


def grid_points(n, dim, planar=False):
    axes = [np.arange(n) * 2 * np.pi / n] * dim
    if planar:
        axes[2] = np.zeros(1)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def quadrature_coeffs(samples, points, modes):
    """``c_k = mean(f(x) e^{-ik.x})`` by direct quadrature over the grid points."""
    k = modes.wavevectors.astype(float)
    phase = np.exp(-1j * points @ k.T)
    return (phase.T @ samples) / len(points)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
