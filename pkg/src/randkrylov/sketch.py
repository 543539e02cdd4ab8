"""Oblivious subspace embeddings (sketching operators).

A sketch maps R^n into R^ell, ell << n, while approximately preserving the
geometry of any fixed low-dimensional subspace: for every x in the subspace,

    (1 - eps) ||x||^2 <= ||Omega x||^2 <= (1 + eps) ||x||^2,

equivalently |<Omega x, Omega y> - <x, y>| <= eps ||x|| ||y|| for pairs in the
subspace.  Two random constructions are provided:

* :class:`GaussianSketch` -- an ell x n array of i.i.d. normals with standard
  deviation ell^{-1/2}, so E||Omega x||^2 = ||x||^2.
* :class:`SrhtSketch` -- the subsampled randomized Hadamard transform
  sqrt(N/ell) * P * H * D applied implicitly: a random-sign diagonal D, an
  orthonormal Walsh-Hadamard transform H over the zero-padded dimension
  N = next power of two >= n, and ell rows P drawn uniformly without
  replacement.  One apply costs O(N log N) via :func:`fwht`.

:class:`IdentitySketch` (ell = n) makes sketched algorithms coincide with
their deterministic counterparts and is used for exact-reduction tests.

Randomness is consumed only at construction; applying a sketch is
deterministic and reentrant, so sketches can be shared across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SketchOperator",
    "GaussianSketch",
    "SrhtSketch",
    "IdentitySketch",
    "make_sketch",
    "sketch_apply",
    "sketched_dot",
    "fwht",
    "estimate_epsilon",
    "EpsilonEstimate",
]


def fwht(v: np.ndarray) -> np.ndarray:
    """Orthonormal fast Walsh-Hadamard transform (natural ordering).

    Input length must be a power of two.  The transform is its own inverse
    and an isometry: ||fwht(v)|| = ||v||.
    """
    a = np.array(v, dtype=float)
    n = a.size
    if n == 0 or (n & (n - 1)) != 0:
        raise ValueError(f"fwht needs a power-of-two length, got {n}")
    h = 1
    while h < n:
        b = a.reshape(-1, 2 * h)
        top = b[:, :h].copy()
        b[:, :h] += b[:, h:]
        b[:, h:] = top - b[:, h:]
        h *= 2
    return a / math.sqrt(n)


class SketchOperator:
    """Base class: an ell x n embedding applied as an operator."""

    kind = "abstract"

    def __init__(self, ell: int, n: int, seed: int | None = None):
        if ell < 1 or n < 1:
            raise ValueError("sketch dimensions must be positive")
        if ell > n:
            raise ValueError(f"sampling size ell={ell} exceeds ambient dimension n={n}")
        self.ell = int(ell)
        self.n = int(n)
        self.seed = seed

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def densify(self) -> np.ndarray:
        """Explicit ell x n matrix (tests and small problems only)."""
        raise NotImplementedError

    def _check_vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        return v


class GaussianSketch(SketchOperator):
    kind = "gaussian"

    def __init__(self, ell: int, n: int, seed: int = 0):
        super().__init__(ell, n, seed)
        rng = np.random.default_rng(seed)
        self.matrix = rng.standard_normal((ell, n)) / math.sqrt(ell)

    def apply(self, v):
        return self.matrix @ self._check_vec(v)

    def densify(self):
        return self.matrix.copy()


class SrhtSketch(SketchOperator):
    kind = "srht"

    def __init__(self, ell: int, n: int, seed: int = 0):
        super().__init__(ell, n, seed)
        self.padded_n = 1 << (n - 1).bit_length()
        rng = np.random.default_rng(seed)
        self.signs = rng.choice([-1.0, 1.0], self.padded_n)
        self.rows = rng.choice(self.padded_n, ell, replace=False)
        self.scale = math.sqrt(self.padded_n / ell)

    def apply(self, v):
        v = self._check_vec(v)
        w = np.zeros(self.padded_n)
        w[: self.n] = v
        w *= self.signs
        w = fwht(w)
        return self.scale * w[self.rows]

    def densify(self):
        # H[i, j] = N^{-1/2} (-1)^{popcount(i & j)} in natural ordering.
        masked = np.bitwise_and(self.rows[:, None].astype(np.int64),
                                np.arange(self.n, dtype=np.int64)[None, :])
        parity = np.zeros_like(masked)
        while masked.any():
            parity ^= masked & 1
            masked >>= 1
        h = np.where(parity == 0, 1.0, -1.0) / math.sqrt(self.padded_n)
        return self.scale * h * self.signs[None, : self.n]


class IdentitySketch(SketchOperator):
    kind = "identity"

    def __init__(self, n: int):
        super().__init__(n, n, None)

    def apply(self, v):
        return self._check_vec(v).copy()

    def densify(self):
        return np.eye(self.n)


def make_sketch(kind: str, ell: int, n: int, seed: int = 0) -> SketchOperator:
    if kind == "gaussian":
        return GaussianSketch(ell, n, seed)
    if kind == "srht":
        return SrhtSketch(ell, n, seed)
    if kind == "identity":
        return IdentitySketch(n)
    raise ValueError(f"unknown sketch kind {kind!r}")


def sketch_apply(omega: SketchOperator, v: np.ndarray) -> np.ndarray:
    """Return the sketch Omega v."""
    return omega.apply(v)


def sketched_dot(omega: SketchOperator, u, v, cache: np.ndarray | None = None) -> float:
    """Return <Omega u, Omega v>; ``cache`` supplies a pre-sketched u."""
    su = omega.apply(u) if cache is None else np.asarray(cache, dtype=float)
    return float(su @ omega.apply(v))


@dataclass(frozen=True)
class EpsilonEstimate:
    """Exact smallest embedding tolerance for one subspace.

    sigma_min/sigma_max are the extreme singular values of Omega Q for an
    orthonormal basis Q of the subspace; epsilon_hat =
    max(1 - sigma_min^2, sigma_max^2 - 1).
    """

    epsilon_hat: float
    sigma_min: float
    sigma_max: float


def estimate_epsilon(omega: SketchOperator, basis: np.ndarray) -> EpsilonEstimate:
    """Measure the embedding quality of ``omega`` on span(basis).

    ``basis`` must have l2-orthonormal columns (checked to 1e-8); then the
    returned epsilon_hat is the smallest eps such that every x in the span
    satisfies (1 - eps)||x||^2 <= ||Omega x||^2 <= (1 + eps)||x||^2.
    """
    q = np.asarray(basis, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[0] != omega.n:
        raise ValueError(f"basis rows {q.shape[0]} != sketch ambient dimension {omega.n}")
    gram_dev = np.abs(q.T @ q - np.eye(q.shape[1])).max()
    if gram_dev > 1e-8:
        raise ValueError(f"basis columns are not orthonormal (max Gram deviation {gram_dev:.2e})")
    sq = np.column_stack([omega.apply(q[:, j]) for j in range(q.shape[1])])
    sigma = np.linalg.svd(sq, compute_uv=False)
    smin, smax = float(sigma.min()), float(sigma.max())
    eps = max(1.0 - smin**2, smax**2 - 1.0, 0.0)
    return EpsilonEstimate(epsilon_hat=eps, sigma_min=smin, sigma_max=smax)
