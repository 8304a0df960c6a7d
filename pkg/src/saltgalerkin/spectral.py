"""Spectral representation of divergence-free vector fields on the 2π-periodic torus.

A field is stored as complex coefficients ``c_k`` of ``f(x) = sum_k c_k exp(i k.x)``
over a half-space of wave vectors; the conjugate half is implied, so every
stored field is real by construction. Inner products use the normalized
(probability) measure on the torus, hence ``||f||^2 = sum_k |c_k|^2`` over the
full lattice, which equals twice the half-space sum.

Mode sets are balls ``0 < |k|^2 <= cutoff``. Modes are ordered by ``|k|^2`` and
then lexicographically, so a smaller ball is always a prefix of a larger one.
Coefficient arrays have shape ``(..., n_modes, dim)``; leading axes are batch
axes and every routine here broadcasts over them.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "AliasingError",
    "ModeSet",
    "SpectralField",
    "SobolevLadder",
    "VELOCITY_LADDER",
    "VORTICITY_LADDER",
    "min_resolution",
    "leray_project",
    "stokes_apply",
    "sobolev_norm",
    "sobolev_inner",
    "dual_pairing",
    "grid_transform",
    "from_grid",
    "curl",
    "divergence_residual",
]


class AliasingError(ValueError):
    """Grid too coarse to represent (or dealias products of) a mode set."""


@dataclass(frozen=True)
class ModeSet:
    """Half-space wave vectors with ``0 < |k|^2 <= cutoff``.

    ``planar`` restricts a 3D set to ``k_3 = 0`` (fields constant in x_3); it is
    how 2D vorticity is carried as the third component of a 3D field.
    """

    dim: int
    cutoff: int
    planar: bool = False

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        if self.planar and self.dim != 3:
            raise ValueError("planar mode sets are 3D")

    @functools.cached_property
    def kmax(self) -> int:
        return int(np.floor(np.sqrt(self.cutoff)))

    @functools.cached_property
    def wavevectors(self) -> np.ndarray:
        return _enumerate_modes(self.dim, self.cutoff, self.planar)

    @property
    def size(self) -> int:
        return len(self.wavevectors)

    @functools.cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavevectors**2, axis=1).astype(float)

    @functools.cached_property
    def khat(self) -> np.ndarray:
        return self.wavevectors / np.sqrt(self.k2)[:, None]

    def axis_kmax(self) -> tuple:
        if self.planar:
            return (self.kmax, self.kmax, 0)
        return (self.kmax,) * self.dim

    def compatible(self, other: "ModeSet") -> bool:
        return self.dim == other.dim and self.planar == other.planar

    def union(self, other: "ModeSet") -> "ModeSet":
        if not self.compatible(other):
            raise ValueError(f"incompatible mode sets {self} and {other}")
        return self if self.cutoff >= other.cutoff else other

    def sum_set(self, other: "ModeSet") -> "ModeSet":
        """Smallest ball holding every ``k + q`` with k, q drawn from the two sets."""
        if not self.compatible(other):
            raise ValueError(f"incompatible mode sets {self} and {other}")
        radius = np.sqrt(self.cutoff) + np.sqrt(other.cutoff)
        return ModeSet(self.dim, int(np.floor(radius**2 + 1e-9)), self.planar)

    def index_of(self, k) -> int:
        """Position of ``k`` (or of ``-k``) in the ordering; raises KeyError if absent."""
        k = tuple(int(v) for v in k)
        table = self._lookup
        if k in table:
            return table[k]
        neg = tuple(-v for v in k)
        if neg in table:
            return table[neg]
        raise KeyError(k)

    @functools.cached_property
    def _lookup(self) -> dict:
        return {tuple(int(v) for v in k): i for i, k in enumerate(self.wavevectors)}


def _in_half_space(k) -> bool:
    for v in reversed(k):
        if v != 0:
            return v > 0
    return False


@functools.lru_cache(maxsize=None)
def _enumerate_modes(dim: int, cutoff: int, planar: bool) -> np.ndarray:
    kmax = int(np.floor(np.sqrt(cutoff)))
    ranges = [range(-kmax, kmax + 1)] * dim
    if planar:
        ranges[2] = range(0, 1)
    modes = [k for k in itertools.product(*ranges)
             if 0 < sum(v * v for v in k) <= cutoff and _in_half_space(k)]
    modes.sort(key=lambda k: (sum(v * v for v in k),) + tuple(k))
    out = np.array(modes, dtype=np.int64).reshape(-1, dim)
    out.setflags(write=False)
    return out


def min_resolution(modes: ModeSet, dealias: bool = True) -> tuple:
    """Per-axis grid size; ``dealias`` asks for the 2/3-rule size ``3K+1``."""
    sizes = []
    for kmax in modes.axis_kmax():
        if kmax == 0:
            sizes.append(1)
            continue
        n = 3 * kmax + 1 if dealias else 2 * kmax + 1
        sizes.append(n + (n % 2))
    return tuple(sizes)


class SpectralField:
    """Real vector field held as half-space Fourier coefficients.

    Args:
        modes: the mode set the coefficients live on.
        coeffs: complex array of shape ``(..., modes.size, modes.dim)``.
    """

    __slots__ = ("modes", "coeffs")

    def __init__(self, modes: ModeSet, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[-2:] != (modes.size, modes.dim):
            raise ValueError(
                f"coeffs shape {coeffs.shape} does not match ({modes.size}, {modes.dim})")
        self.modes = modes
        self.coeffs = coeffs

    @classmethod
    def zeros(cls, modes: ModeSet, batch: tuple = ()) -> "SpectralField":
        return cls(modes, np.zeros(tuple(batch) + (modes.size, modes.dim), dtype=complex))

    @classmethod
    def from_dict(cls, modes: ModeSet, values: dict) -> "SpectralField":
        """Build from ``{k: vector}``; a key in the lower half-space stores the conjugate."""
        coeffs = np.zeros((modes.size, modes.dim), dtype=complex)
        for k, vec in values.items():
            k = tuple(int(v) for v in k)
            idx = modes.index_of(k)
            vec = np.asarray(vec, dtype=complex)
            if _in_half_space(k):
                coeffs[idx] += vec
            else:
                coeffs[idx] += np.conj(vec)
        return cls(modes, coeffs)

    @property
    def dim(self) -> int:
        return self.modes.dim

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-2]

    def resample(self, modes: ModeSet) -> "SpectralField":
        """Zero-pad or truncate onto another (compatible) ball."""
        if not self.modes.compatible(modes):
            raise ValueError(f"cannot resample {self.modes} onto {modes}")
        if modes.size == self.modes.size:
            return SpectralField(modes, self.coeffs)
        if modes.size < self.modes.size:
            return SpectralField(modes, self.coeffs[..., :modes.size, :])
        pad = [(0, 0)] * self.coeffs.ndim
        pad[-2] = (0, modes.size - self.modes.size)
        return SpectralField(modes, np.pad(self.coeffs, pad))

    def _aligned(self, other: "SpectralField"):
        modes = self.modes.union(other.modes)
        return modes, self.resample(modes).coeffs, other.resample(modes).coeffs

    def __add__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        modes, a, b = self._aligned(other)
        return SpectralField(modes, a + b)

    def __sub__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        modes, a, b = self._aligned(other)
        return SpectralField(modes, a - b)

    def __neg__(self):
        return SpectralField(self.modes, -self.coeffs)

    def __mul__(self, scalar):
        scalar = np.asarray(scalar)
        if scalar.ndim:
            scalar = scalar[..., None, None]
        return SpectralField(self.modes, self.coeffs * scalar)

    __rmul__ = __mul__

    def __getitem__(self, item) -> "SpectralField":
        """Index the batch axes."""
        return SpectralField(self.modes, self.coeffs[item])

    def __repr__(self):
        return f"SpectralField({self.modes}, batch={self.batch_shape})"

    def allclose(self, other: "SpectralField", rtol=1e-12, atol=1e-14) -> bool:
        _, a, b = self._aligned(other)
        return np.allclose(a, b, rtol=rtol, atol=atol)


@dataclass(frozen=True)
class SobolevLadder:
    """Exponents of the nested spaces V ⊂ H ⊂ U ⊂ X (as powers of the Stokes operator)."""

    m_V: Fraction
    m_H: Fraction
    m_U: Fraction
    m_X: Fraction = Fraction(0)

    def __post_init__(self):
        for name in ("m_V", "m_H", "m_U", "m_X"):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if not (self.m_V > self.m_H > self.m_U >= self.m_X >= 0):
            raise ValueError(
                f"ladder must satisfy m_V > m_H > m_U >= m_X >= 0, got "
                f"({self.m_V}, {self.m_H}, {self.m_U}, {self.m_X})")

    def exponent(self, space: str) -> Fraction:
        return getattr(self, "m_" + space)


VELOCITY_LADDER = SobolevLadder(3, 2, 1, 0)
VORTICITY_LADDER = SobolevLadder(2, 1, 0, 0)


def _power(k2: np.ndarray, p) -> np.ndarray:
    return k2 ** float(p)


def leray_project(f: SpectralField) -> SpectralField:
    """L2-orthogonal projection onto divergence-free fields, mode by mode."""
    khat = f.modes.khat
    along = np.sum(f.coeffs * khat, axis=-1, keepdims=True)
    return SpectralField(f.modes, f.coeffs - along * khat)


def divergence_residual(f: SpectralField) -> np.ndarray:
    """``max_k |k.c_k| / max_k |k||c_k|`` per batch element (0 for the zero field)."""
    k = f.modes.wavevectors
    div = np.abs(np.sum(f.coeffs * k, axis=-1))
    scale = np.sqrt(f.modes.k2) * np.linalg.norm(f.coeffs, axis=-1)
    top = scale.max(axis=-1)
    return np.where(top > 0, div.max(axis=-1) / np.where(top > 0, top, 1.0), 0.0)


def stokes_apply(f: SpectralField, power=1) -> SpectralField:
    """Apply ``A^power`` where the Stokes eigenvalue of mode k is ``|k|^2``."""
    return SpectralField(f.modes, f.coeffs * _power(f.modes.k2, power)[:, None])


def sobolev_inner(f: SpectralField, g: SpectralField, m=0):
    """``<A^{m/2} f, A^{m/2} g>`` in L2 of the normalized torus."""
    modes, a, b = f._aligned(g)
    weight = _power(modes.k2, m)[:, None]
    return 2.0 * np.sum(weight * (a * np.conj(b)).real, axis=(-2, -1))


def sobolev_norm(f: SpectralField, m=0):
    """``(sum_k lambda_k^m |c_k|^2)^{1/2}`` over the full lattice."""
    weight = _power(f.modes.k2, m)[:, None]
    return np.sqrt(2.0 * np.sum(weight * np.abs(f.coeffs) ** 2, axis=(-2, -1)))


def dual_pairing(f: SpectralField, g: SpectralField, ladder: SobolevLadder):
    """``<f, g>_{U x V}``, the continuous extension of ``<f, g>_H`` to ``U x V``.

    Spectrally this is ``sum lambda^{m_H} f_k g_k``; it is bounded by
    ``||f||_U ||g||_V`` as long as ``2 m_H <= m_U + m_V``.
    """
    if 2 * ladder.m_H > ladder.m_U + ladder.m_V:
        raise ValueError("ladder does not admit a U x V pairing extending <.,.>_H")
    return sobolev_inner(f, g, ladder.m_H)


@functools.lru_cache(maxsize=None)
def _grid_plan(modes: ModeSet, shape: tuple):
    k = modes.wavevectors
    rshape = shape[:-1] + (shape[-1] // 2 + 1,)
    idx = np.ravel_multi_index(tuple(np.mod(k[:, a], shape[a]) for a in range(modes.dim)), rshape)
    mirror = np.nonzero(k[:, -1] == 0)[0]
    mirror_idx = np.ravel_multi_index(
        tuple(np.mod(-k[mirror, a], shape[a]) for a in range(modes.dim)), rshape)
    return rshape, idx, mirror, mirror_idx


def _check_shape(modes: ModeSet, shape, dealias: bool) -> tuple:
    shape = tuple(int(n) for n in shape)
    if len(shape) != modes.dim:
        raise ValueError(f"resolution {shape} has wrong length for dim={modes.dim}")
    need = min_resolution(modes, dealias=dealias)
    if any(n < m for n, m in zip(shape, need)):
        raise AliasingError(f"resolution {shape} too small for cutoff {modes.cutoff}; need {need}")
    return shape


def _to_grid(modes: ModeSet, coeffs: np.ndarray, shape: tuple) -> np.ndarray:
    """Coefficients ``(..., n_modes, m)`` to samples ``(..., m, *shape)``; m is free."""
    rshape, idx, mirror, mirror_idx = _grid_plan(modes, shape)
    c = np.swapaxes(coeffs, -1, -2)
    spec = np.zeros(c.shape[:-1] + (int(np.prod(rshape)),), dtype=complex)
    spec[..., idx] = c
    spec[..., mirror_idx] = np.conj(c[..., mirror])
    spec = spec.reshape(c.shape[:-1] + rshape)
    axes = tuple(range(-modes.dim, 0))
    return np.fft.irfftn(spec, s=shape, axes=axes, norm="forward")


def _from_grid(samples: np.ndarray, modes: ModeSet) -> np.ndarray:
    """Samples ``(..., m, *shape)`` to coefficients ``(..., n_modes, m)``."""
    shape = samples.shape[-modes.dim:]
    rshape, idx, _, _ = _grid_plan(modes, shape)
    axes = tuple(range(-modes.dim, 0))
    spec = np.fft.rfftn(samples, axes=axes, norm="forward")
    spec = spec.reshape(spec.shape[:-modes.dim] + (-1,))
    return np.swapaxes(spec[..., idx], -1, -2)


def grid_transform(f: SpectralField, resolution=None) -> np.ndarray:
    """Sample ``f`` on a uniform grid; returns shape ``(..., dim, *resolution)``.

    Grid point ``j`` on axis ``a`` sits at ``x_a = 2π j / resolution[a]``.
    Raises AliasingError when the grid is coarser than the dealiased size.
    """
    if resolution is None:
        resolution = min_resolution(f.modes)
    elif np.isscalar(resolution):
        resolution = (int(resolution),) * f.dim
        if f.modes.planar:
            resolution = resolution[:2] + (1,)
    shape = _check_shape(f.modes, resolution, dealias=True)
    return _to_grid(f.modes, f.coeffs, shape)


def from_grid(samples, modes: ModeSet) -> SpectralField:
    """Inverse of :func:`grid_transform`, keeping only the modes of ``modes``."""
    samples = np.asarray(samples, dtype=float)
    _check_shape(modes, samples.shape[-modes.dim:], dealias=False)
    return SpectralField(modes, _from_grid(samples, modes))


def curl(f: SpectralField) -> SpectralField:
    """Spectral curl ``i k x c_k`` of a 3D field."""
    if f.dim != 3:
        raise ValueError("curl is defined here for 3D (or planar 3D) fields")
    k = f.modes.wavevectors.astype(float)
    return SpectralField(f.modes, 1j * np.cross(np.broadcast_to(k, f.coeffs.shape), f.coeffs))
