"""Exact Gaussian increment sampling on uniform grids via circulant embedding.

A stationary kernel sampled on the (2^level + 1)^2 grid embeds into a
block-circulant covariance on a periodic torus of side ``embed_size``; its FFT
eigenvalues give an exact O(N log N) sampler. Dyadic subsampling couples all
coarser grids to the same realization. A pivoted-Cholesky dense sampler serves
as the correctness oracle.

Reproducibility contract: the increment for (master_seed, sample_index,
step_index) is a pure function of those integers. Streams use numpy's Philox
counter-based generator with the counter block (0, draw, sample, 0) and
key (master_seed, 0); Gaussians come from Generator.standard_normal (ziggurat),
real parts feeding even steps and imaginary parts odd steps of the same draw.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg.lapack as lapack

from .errors import ConfigurationError, KernelNotPsdError, NotEmbeddableError, NumericError
from .geometry import MAX_LEVEL
from .kernels import KernelSpec, eval_lag, kernel_eval

_NEG_EIG_TOL = 1e-10
_MAGIC = b"SPDEW1\x00\x00"


@dataclass(frozen=True, eq=False)
class CirculantSpectrum:
    """Nonnegative FFT eigenvalues of the embedded covariance on the torus."""

    grid_level: int
    embed_size: int
    eigenvalues: np.ndarray      # (embed_size, embed_size), >= 0
    clip_count: int
    clipped_mass_fraction: float
    kernel: object

    @property
    def n_per_axis(self):
        return 2 ** self.grid_level + 1


def pair_covariance(kernel, pts_a, pts_b):
    """Covariance matrix q(a_i, b_j); kernel is a KernelSpec or a pair callable."""
    a = np.asarray(pts_a, dtype=np.float64)
    b = np.asarray(pts_b, dtype=np.float64)
    if isinstance(kernel, KernelSpec):
        return kernel_eval(kernel, a[:, None, :], b[None, :, :])
    if callable(kernel):
        return np.asarray(kernel(a[:, None, :], b[None, :, :]), dtype=np.float64)
    return kernel_eval(kernel, a[:, None, :], b[None, :, :])


def build_spectrum(kernel, grid_level, max_padding_doublings=4, mode="clip"):
    """Embed the covariance over the level grid into a circulant torus.

    The torus side starts at 2^(level+1) and doubles until the spectrum is
    nonnegative (within 1e-10 of the largest eigenvalue) or the padding budget
    is exhausted; then strict mode raises NotEmbeddableError while clip mode
    zeroes the remaining negative eigenvalues and records their count and mass.
    """
    if mode not in ("strict", "clip"):
        raise ConfigurationError(f"embedding mode must be 'strict' or 'clip', got {mode!r}")
    if not (0 <= grid_level <= MAX_LEVEL):
        raise ConfigurationError(f"grid_level must lie in [0, {MAX_LEVEL}]")
    spacing = 2.0 ** (-grid_level)
    embed = 2 ** (grid_level + 1)
    for attempt in range(max_padding_doublings + 1):
        idx = np.arange(embed)
        wrap = np.minimum(idx, embed - idx) * spacing
        dx, dy = np.meshgrid(wrap, wrap, indexing="ij")
        row = eval_lag(kernel, np.stack([dx, dy], axis=-1))
        lam_c = np.fft.fft2(row)
        lam = np.ascontiguousarray(lam_c.real)
        max_eig = lam.max()
        if abs(lam_c.imag).max() > 1e-8 * max(max_eig, 1e-300):
            raise NumericError(  # pragma: no cover - symmetric input keeps the FFT real
                f"embedded covariance FFT has imaginary mass {abs(lam_c.imag).max():.3e}")
        if lam.min() >= -_NEG_EIG_TOL * max_eig:
            break
        if attempt < max_padding_doublings:
            embed *= 2
    else:  # pragma: no cover - loop always breaks or falls through above
        pass
    if lam.min() < -_NEG_EIG_TOL * max_eig and mode == "strict":
        raise NotEmbeddableError(
            f"embedding kept eigenvalues down to {lam.min():.3e} "
            f"(max {max_eig:.3e}) at embed_size {embed}; use clip mode or more padding")
    neg = lam < 0.0
    clip_count = int(neg.sum())
    clipped = float(-lam[neg].sum())
    lam[neg] = 0.0
    mass = clipped / float(lam.sum()) if lam.sum() > 0 else 0.0
    lam.setflags(write=False)
    return CirculantSpectrum(grid_level, embed, lam, clip_count, mass, kernel)


class NoiseStream:
    """Per-sample stream of N(0, dt*q) nodal increments on the spectrum's grid.

    Each FFT draw yields two independent fields (real and imaginary parts),
    consumed by consecutive steps. Random access by step index is supported
    and bit-reproducible; sequential access reuses the cached draw.
    """

    def __init__(self, master_seed, sample_index, spectrum, dt):
        if dt < 0:
            raise ConfigurationError("dt must be nonnegative")
        self.master_seed = int(master_seed)
        self.sample_index = int(sample_index)
        self.spectrum = spectrum
        self.dt = float(dt)
        self.step_index = 0
        self._sqrt_eig = np.sqrt(spectrum.eigenvalues)
        self._cached = (-1, None)

    @property
    def grid_level(self):
        return self.spectrum.grid_level

    def _draw(self, draw_index):
        m = self.spectrum.embed_size
        bitgen = np.random.Philox(counter=[0, draw_index, self.sample_index, 0],
                                  key=[self.master_seed % 2 ** 64, 0])
        gen = np.random.Generator(bitgen)
        eps = gen.standard_normal((2, m, m))
        z = np.fft.ifft2((eps[0] + 1j * eps[1]) * self._sqrt_eig) * m
        return z

    def increment_at(self, step_index):
        """Nodal increment for one time step, shape (n, n), variance dt*q."""
        draw_index, part = divmod(int(step_index), 2)
        if self._cached[0] != draw_index:
            self._cached = (draw_index, self._draw(draw_index))
        z = self._cached[1]
        n = self.spectrum.n_per_axis
        field = (z.real if part == 0 else z.imag)[:n, :n]
        return np.sqrt(self.dt) * field

    def next_increment(self):
        out = self.increment_at(self.step_index)
        self.step_index += 1
        return out


def subsample(fine_values, target_level):
    """Restrict nodal values on a level-L grid to the nested level-l grid (exact)."""
    fine = np.asarray(fine_values)
    n_fine = fine.shape[0]
    if fine.ndim != 2 or fine.shape[1] != n_fine:
        raise ConfigurationError("fine_values must be a square (n, n) nodal array")
    fine_level = int(round(np.log2(n_fine - 1)))
    if 2 ** fine_level + 1 != n_fine:
        raise ConfigurationError(f"array side {n_fine} is not 2^L + 1")
    if target_level > fine_level:
        raise ConfigurationError(
            f"target level {target_level} exceeds source level {fine_level}")
    step = 2 ** (fine_level - target_level)
    return np.ascontiguousarray(fine[::step, ::step])


class SubsampledStream:
    """View of a finer stream restricted to a nested coarser grid."""

    def __init__(self, parent, target_level):
        if target_level > parent.grid_level:
            raise ConfigurationError("subsampled level must not exceed the parent level")
        self.parent = parent
        self.target_level = int(target_level)
        self.dt = parent.dt
        self.step_index = 0

    @property
    def grid_level(self):
        return self.target_level

    def increment_at(self, step_index):
        return subsample(self.parent.increment_at(step_index), self.target_level)

    def next_increment(self):
        out = self.increment_at(self.step_index)
        self.step_index += 1
        return out


# -- dense oracle sampler --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DenseSampler:
    """Exact sampler from a pivoted-Cholesky factor B with B @ B.T = dt * q."""

    points: np.ndarray
    dt: float
    cov: np.ndarray
    factor: np.ndarray   # (n, rank)
    rank: int

    def sample(self, generator, size=None):
        if size is None:
            return self.factor @ generator.standard_normal(self.rank)
        return generator.standard_normal((size, self.rank)) @ self.factor.T


def dense_sampler(kernel, points, dt):
    """Factorize dt * q over arbitrary points (pivoted Cholesky, tol 1e-12).

    Handles rank deficiency (duplicated points, constant kernels); raises
    KernelNotPsdError when the matrix is indefinite beyond -1e-8 * max_diag.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    if n > 4096:
        raise ConfigurationError(f"dense sampler capped at 4096 points, got {n}")
    cov = dt * pair_covariance(kernel, pts, pts)
    cov = 0.5 * (cov + cov.T)
    max_diag = float(cov.diagonal().max()) if n else 0.0
    c, piv, rank, info = lapack.dpstrf(cov, lower=1, tol=1e-12 * max(max_diag, 1e-300))
    if info < 0:  # pragma: no cover - argument error
        raise KernelNotPsdError(f"dpstrf failed with info={info}")
    ltrap = np.tril(c)[:, :rank]
    factor = np.empty((n, rank))
    factor[piv - 1, :] = ltrap
    resid = cov - factor @ factor.T
    worst = float(np.abs(resid).max())
    if worst > 1e-10 * max(max_diag, 1e-300):
        if np.linalg.eigvalsh(resid).min() < -1e-8 * max(max_diag, 1e-300):
            raise KernelNotPsdError(
                f"covariance indefinite: residual eigenvalue below -1e-8 * max_diag")
    return DenseSampler(pts, float(dt), cov, factor, int(rank))


# -- binary increment dump -------------------------------------------------------

def write_increment(path, values, level, step):
    """Binary dump: 16-byte header (magic, level, step), then row-major float64."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", level, step))
        fh.write(arr.tobytes())


def read_increment(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}")
        level, step = struct.unpack("<II", fh.read(8))
        n = 2 ** level + 1
        data = np.frombuffer(fh.read(), dtype=np.float64).reshape(n, n)
    return data, level, step
