"""Correlation fields (xi_i) for transport noise and the driving Brownian increments."""
from __future__ import annotations

import enum
import functools
import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .spectral import ModeSet, SpectralField, _to_grid, leray_project

__all__ = [
    "XiKind",
    "NoiseModel",
    "BrownianPath",
    "build_xi_family",
    "w3inf_norm",
    "sample_increments",
    "increment_block",
    "load_xi_family",
    "save_xi_family",
]


class XiKind(enum.Enum):
    SHEAR_MODES = "shear"
    RANDOM_SMOOTH = "random"


def _multi_indices(dim: int, order: int, planar: bool):
    axes = 2 if planar else dim
    for total in range(order + 1):
        for alpha in itertools.product(range(total + 1), repeat=axes):
            if sum(alpha) == total:
                yield alpha + (0,) * (dim - axes)


def w3inf_norm(f: SpectralField, resolution: int = 128) -> float:
    """Estimate of ``max_{|alpha|<=3} sup_x |d^alpha f(x)|`` from grid samples.

    The sup is taken over ``resolution^d`` points (Euclidean norm of the vector
    at each point); derivatives are exact spectral derivatives.
    """
    modes = f.modes
    shape = (resolution,) * modes.dim
    if modes.planar:
        shape = (resolution, resolution, 1)
    k = modes.wavevectors.astype(float)
    best = 0.0
    for alpha in _multi_indices(modes.dim, 3, modes.planar):
        factor = np.prod((1j * k) ** np.array(alpha), axis=1)
        vals = _to_grid(modes, f.coeffs * factor[:, None], shape)
        best = max(best, float(np.sqrt(np.sum(vals**2, axis=-modes.dim - 1)).max()))
    return best


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Truncated family ``xi_i = weights[i] * base_i``.

    ``w3inf_norms`` holds the estimated ``W^{3,inf}`` norm of each ``xi_i``.
    ``decay`` is set when the weights are ``2^{-decay i}`` over unit-norm bases;
    it enables the geometric tail bound in :meth:`summability`.
    """

    xis: tuple
    weights: tuple
    w3inf_norms: tuple
    decay: float = None

    @property
    def count(self) -> int:
        return len(self.xis)

    @property
    def modes(self) -> ModeSet:
        return self.xis[0].modes if self.xis else None

    def stacked(self) -> SpectralField:
        return SpectralField(self.modes, np.stack([x.coeffs for x in self.xis]))

    def summability(self) -> dict:
        """Partial sum of ``||xi_i||^2_{W^{3,inf}}`` plus the geometric tail beyond the truncation."""
        partial = float(np.sum(np.square(self.w3inf_norms)))
        tail = None
        if self.decay is not None:
            r = 2.0 ** (-2.0 * self.decay)
            tail = r**self.count / (1.0 - r)
        return {"partial": partial, "tail": tail,
                "bound": None if tail is None else partial + tail}

    def scaled(self, s: float) -> "NoiseModel":
        return NoiseModel(tuple(s * x for x in self.xis), tuple(s * w for w in self.weights),
                          tuple(abs(s) * n for n in self.w3inf_norms), None)


def _shear_base(i: int, dim: int, planar: bool) -> SpectralField:
    j = i // 4 + 1
    pattern = i % 4
    modes = ModeSet(dim, j * j, planar)
    e1 = np.zeros(dim)
    e2 = np.zeros(dim)
    e1[0] = 1.0
    e2[1] = 1.0
    ky = (0, j) + (0,) * (dim - 2)
    kx = (j, 0) + (0,) * (dim - 2)
    # sin(j x) = (e^{ijx} - e^{-ijx}) / 2i, cos(j x) = (e^{ijx} + e^{-ijx}) / 2
    if pattern == 0:
        values = {ky: -0.5j * e1}
    elif pattern == 1:
        values = {kx: -0.5j * e2}
    elif pattern == 2:
        values = {ky: 0.5 * e1}
    else:
        values = {kx: 0.5 * e2}
    return SpectralField.from_dict(modes, values)


def _random_base(i: int, dim: int, planar: bool, seed: int, cutoff: int = 4) -> SpectralField:
    modes = ModeSet(dim, cutoff, planar)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
    c = rng.standard_normal((modes.size, dim)) + 1j * rng.standard_normal((modes.size, dim))
    c *= (modes.k2 ** -2.0)[:, None]
    if planar:
        c[:, 2] = 0.0
    return leray_project(SpectralField(modes, c))


@functools.lru_cache(maxsize=64)
def _unit_base(kind: XiKind, i: int, dim: int, planar: bool, seed: int, resolution: int):
    if kind is XiKind.SHEAR_MODES:
        base = _shear_base(i, dim, planar)
    else:
        base = _random_base(i, dim, planar, seed)
    return base * (1.0 / w3inf_norm(base, resolution))


def build_xi_family(kind, count: int, decay: float, dim: int = 2, planar: bool = False,
                    seed: int = 0, resolution: int = 128, amplitude: float = 1.0) -> NoiseModel:
    """Weighted family ``xi_i = amplitude * 2^{-decay i} * base_i`` with unit ``W^{3,inf}`` bases.

    ``kind`` is :class:`XiKind` (or its value). Shear bases cycle through
    ``sin(j x_2) e_1, sin(j x_1) e_2, cos(j x_2) e_1, cos(j x_1) e_2`` with
    ``j = i // 4 + 1``; random bases are smooth Gaussian fields on ``|k|^2 <= 4``.
    All bases live on a common mode set.
    """
    kind = XiKind(kind)
    if decay <= 0:
        raise ValueError("decay must be positive")
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return NoiseModel((), (), (), decay)
    bases = [_unit_base(kind, i, dim, planar, seed, resolution) for i in range(count)]
    modes = bases[0].modes
    for b in bases[1:]:
        modes = modes.union(b.modes)
    weights = tuple(amplitude * 2.0 ** (-decay * i) for i in range(count))
    xis = tuple(w * b.resample(modes) for w, b in zip(weights, bases))
    norms = tuple(abs(w) for w in weights)
    return NoiseModel(xis, weights, norms, decay if amplitude == 1.0 else None)


def save_xi_family(model: NoiseModel, path) -> None:
    """One JSON record per line: mode list plus complex coefficients of each ``xi_i``."""
    with open(path, "w") as fh:
        for xi in model.xis:
            rec = {
                "dim": xi.modes.dim,
                "planar": xi.modes.planar,
                "modes": xi.modes.wavevectors.tolist(),
                "coeffs": [[[v.real, v.imag] for v in row] for row in xi.coeffs],
            }
            fh.write(json.dumps(rec) + "\n")


def load_xi_family(path, resolution: int = 128) -> NoiseModel:
    """Read a family written by :func:`save_xi_family` (or supplied externally).

    Records may list any half- or full-space modes; each field is Leray-projected
    on load so the divergence-free invariant holds.
    """
    xis = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            dim = int(rec["dim"])
            planar = bool(rec.get("planar", False))
            ks = [tuple(int(v) for v in k) for k in rec["modes"]]
            vals = [np.array([complex(re, im) for re, im in row]) for row in rec["coeffs"]]
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed xi record ({exc})") from exc
        cutoff = max(sum(v * v for v in k) for k in ks)
        modes = ModeSet(dim, cutoff, planar)
        xis.append(leray_project(SpectralField.from_dict(modes, dict(zip(ks, vals)))))
    if not xis:
        return NoiseModel((), (), (), None)
    modes = xis[0].modes
    for x in xis[1:]:
        modes = modes.union(x.modes)
    xis = tuple(x.resample(modes) for x in xis)
    norms = tuple(w3inf_norm(x, resolution) for x in xis)
    return NoiseModel(xis, (1.0,) * len(xis), norms, None)


def _stream_key(seed: int, sample: int, index: int) -> np.ndarray:
    return np.random.SeedSequence([seed, sample, index]).generate_state(2, np.uint64)


def _normals(seed: int, sample: int, index: int, start: int, count: int) -> np.ndarray:
    """Standard normals at positions ``start..start+count`` of one counter-based stream."""
    bg = np.random.Philox(key=_stream_key(seed, sample, index))
    block, offset = divmod(start, 4)
    if block:
        bg.advance(block)
    raw = bg.random_raw(offset + count)[offset:]
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class BrownianPath:
    """Increments of ``count`` independent Brownian motions on a ``dt`` grid.

    Entry ``(step, i)`` is a pure function of ``(seed, sample, step, i)``: each
    noise index has its own Philox stream keyed by ``(seed, sample, i)`` and the
    step is the position in that stream.
    """

    seed: int
    dt: float
    count: int
    sample: int = 0

    def increments(self, n_steps: int, start: int = 0) -> np.ndarray:
        out = np.empty((n_steps, self.count))
        for i in range(self.count):
            out[:, i] = _normals(self.seed, self.sample, i, start, n_steps)
        return np.sqrt(self.dt) * out


def sample_increments(path: BrownianPath, step: int) -> np.ndarray:
    """The increment vector for one step, length ``path.count``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return path.increments(1, start=step)[0]


def increment_block(seed: int, samples, count: int, dt: float, n_steps: int,
                    start: int = 0) -> np.ndarray:
    """Increments for several sample paths, shape ``(len(samples), n_steps, count)``."""
    samples = list(samples)
    out = np.empty((len(samples), n_steps, count))
    for s, sample in enumerate(samples):
        for i in range(count):
            out[s, :, i] = _normals(seed, sample, i, start, n_steps)
    return np.sqrt(dt) * out
