"""Graph shifts, graph Fourier transform and the four sampling filters."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .corr_graph import CompatibilityGraph

FILTER_KINDS = ("haar_high", "haar_low", "all_pass", "laplacian")


class NonSymmetricShiftError(ValueError):
    """Raised when an eigenbasis is requested for a non-symmetric shift."""


class DegenerateShiftError(ValueError):
    """Raised when a filter needs a nonzero leading eigenvalue and there is none."""


def _is_symmetric(a: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return bool(np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale))


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    inverse: np.ndarray


@dataclass(frozen=True, eq=False)
class GraphShift:
    a: np.ndarray
    spectral_norm: float

    @property
    def n(self) -> int:
        return int(self.a.shape[0])

    @cached_property
    def symmetric(self) -> bool:
        return _is_symmetric(self.a)

    @cached_property
    def decomposition(self) -> SpectralDecomposition:
        return decompose(self)


def _square(raw) -> np.ndarray:
    a = np.array(raw, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"graph shift must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("graph shift contains non-finite entries")
    return a


def normalize_shift(raw) -> GraphShift:
    """Scale a weighted adjacency so its largest singular value is 1."""
    a = _square(raw)
    sigma = float(np.linalg.norm(a, 2)) if a.size else 0.0
    if sigma == 0.0:
        return GraphShift(a=np.zeros_like(a), spectral_norm=0.0)
    return GraphShift(a=a / sigma, spectral_norm=1.0)


def random_walk_shift(w) -> GraphShift:
    """Row-normalized shift ``D^-1 W``; rows of isolated nodes stay zero."""
    w = _square(w)
    d = w.sum(axis=1)
    inv = np.divide(1.0, d, out=np.zeros_like(d), where=d > 0)
    a = inv[:, None] * w
    return GraphShift(a=a, spectral_norm=float(np.linalg.norm(a, 2)) if a.size else 0.0)


def as_shift(shift) -> GraphShift:
    return shift if isinstance(shift, GraphShift) else GraphShift(
        a=_square(shift), spectral_norm=float(np.linalg.norm(_square(shift), 2))
    )


def decompose(shift) -> SpectralDecomposition:
    """Eigendecomposition with eigenvalues in descending order.

    Only symmetric shifts are supported; their eigenbasis is orthonormal so
    the inverse is the transpose.
    """
    shift = as_shift(shift)
    if not shift.symmetric:
        raise NonSymmetricShiftError("eigendecomposition requires a symmetric shift")
    a = 0.5 * (shift.a + shift.a.T)
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    return SpectralDecomposition(eigenvalues=vals, eigenvectors=vecs, inverse=vecs.T.copy())


def gft(shift, x) -> np.ndarray:
    shift = as_shift(shift)
    return shift.decomposition.inverse @ np.asarray(x, dtype=float)


def inverse_gft(shift, x_hat) -> np.ndarray:
    shift = as_shift(shift)
    return shift.decomposition.eigenvectors @ np.asarray(x_hat, dtype=float)


def leading_eigenvalue(shift) -> float:
    """Largest eigenvalue (by real part) of the shift."""
    shift = as_shift(shift)
    if shift.n == 0:
        return 0.0
    if shift.symmetric:
        return float(np.linalg.eigvalsh(0.5 * (shift.a + shift.a.T))[-1])
    return float(np.max(np.linalg.eigvals(shift.a).real))


@dataclass(frozen=True, eq=False)
class GraphFilter:
    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        self.matrix.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])


def haar_high_pass(shift) -> GraphFilter:
    shift = as_shift(shift)
    return GraphFilter("haar_high", np.eye(shift.n) - shift.a)


def haar_low_pass(shift) -> GraphFilter:
    shift = as_shift(shift)
    lam = abs(leading_eigenvalue(shift))
    if lam < 1e-12:
        raise DegenerateShiftError("leading eigenvalue of the shift is zero")
    return GraphFilter("haar_low", np.eye(shift.n) + shift.a / lam)


def all_pass(n: int) -> GraphFilter:
    return GraphFilter("all_pass", np.eye(int(n)))


def laplacian_filter(g) -> GraphFilter:
    """``Diag(s) - W_SOG``; also accepts a bare symmetric weight matrix."""
    if isinstance(g, CompatibilityGraph):
        w, s = g.w_sog, g.degree
    else:
        w = _square(g)
        s = w.sum(axis=1)
    return GraphFilter("laplacian", np.diag(s) - w)


def apply_filter(f: GraphFilter, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != f.n:
        raise ValueError(f"signal length {x.shape[0]} does not match filter size {f.n}")
    return f.matrix @ x


def laplacian_response(g: CompatibilityGraph, x=None) -> np.ndarray:
    """Laplacian response without materializing the filter matrix.

    ``x`` defaults to the generalized degree signal.
    """
    x = g.degree if x is None else np.asarray(x, dtype=float)
    return g.degree * x - g.w_sog @ x
