"""Symmetric positive-definite operators.

Every solver in this package sees its matrix through the :class:`SpdOperator`
interface: a dimension ``n``, a matvec ``apply``, and (when available) spectral
access, i.e. the ability to apply functions of the operator such as A^{-1/2}
exactly.  Concrete forms:

* :class:`DenseSpdOperator` -- an explicit symmetric array.
* :class:`SparseSpdOperator` -- a scipy CSR matrix, e.g. read from a Matrix
  Market file via :func:`load_matrix_market`.
* :class:`SyntheticSpectralOperator` -- Q diag(lam) Q^T with a prescribed
  spectrum and an implicit random orthogonal factor Q built from layers of
  2x2 rotations; produced by :func:`generate_spd`.
* :class:`BlockJacobiOperator` -- the symmetrically preconditioned operator
  M^{-1/2} A M^{-1/2}, from :func:`make_block_jacobi`.
* :class:`ShiftedOperator` -- A + sigma*I around any of the above.

Operators are immutable after construction and safe to share across threads;
``apply`` is reentrant.  Internal eigendecomposition caches are populated
lazily but idempotently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

__all__ = [
    "SpdOperator",
    "DenseSpdOperator",
    "SparseSpdOperator",
    "SyntheticSpectralOperator",
    "BlockJacobiOperator",
    "ShiftedOperator",
    "SpectrumSpec",
    "PrecondSpec",
    "generate_spd",
    "load_matrix_market",
    "save_matrix_market",
    "make_block_jacobi",
    "shift_operator",
    "format_spectrum_spec",
    "parse_spectrum_spec",
    "SPECTRUM_PRESETS",
]

# Largest n for which we allow a dense eigendecomposition fallback
# (apply_inv_sqrt, cond) and a dense factorization (exact solves).
DENSE_EIG_LIMIT = 8192
DENSE_SOLVE_LIMIT = 16384


class SpdOperator:
    """Abstract SPD linear operator of dimension ``n``."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"operator dimension must be positive, got {n}")
        self.n = int(n)

    # -- mandatory interface -------------------------------------------------

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Return A v."""
        raise NotImplementedError

    # -- optional spectral interface ------------------------------------------

    @property
    def spectral_access(self) -> bool:
        """True when eigenvalues and A^{+-1/2}, A^{-1} are available exactly."""
        return False

    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues, when spectral access or a dense fallback exists."""
        w, _ = self._dense_eig()
        return w

    def apply_inv_sqrt(self, v: np.ndarray) -> np.ndarray:
        """Return A^{-1/2} v.

        Exact for spectral-synthetic operators; otherwise falls back to a
        dense eigendecomposition for n <= 8192 and raises beyond that.
        """
        v = self._check_vec(v)
        w, u = self._dense_eig()
        return u @ ((u.T @ v) / np.sqrt(w))

    def apply_sqrt(self, v: np.ndarray) -> np.ndarray:
        """Return A^{1/2} v (same availability as :meth:`apply_inv_sqrt`)."""
        v = self._check_vec(v)
        w, u = self._dense_eig()
        return u @ ((u.T @ v) * np.sqrt(w))

    def cond(self) -> float:
        """Spectral condition number lambda_max / lambda_min."""
        w = self.eigenvalues()
        return float(w.max() / w.min())

    # -- helpers ---------------------------------------------------------------

    def a_norm(self, v: np.ndarray) -> float:
        """Energy norm sqrt(<v, A v>)."""
        v = self._check_vec(v)
        return math.sqrt(max(float(v @ self.apply(v)), 0.0))

    def densify(self) -> np.ndarray:
        """Materialize the full matrix (guarded: intended for small n)."""
        cols = [self.apply(col) for col in np.eye(self.n)]
        return np.column_stack(cols)

    def _check_vec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        return v

    def _dense_eig(self):
        if self.n > DENSE_EIG_LIMIT:
            raise ValueError(
                "diagnostic unavailable: no spectral access and "
                f"n={self.n} exceeds the dense eigendecomposition limit {DENSE_EIG_LIMIT}"
            )
        cached = getattr(self, "_eig_cache", None)
        if cached is None:
            a = self.densify()
            cached = np.linalg.eigh(a)
            self._eig_cache = cached
        return cached


class DenseSpdOperator(SpdOperator):
    """SPD operator stored as an explicit symmetric array."""

    def __init__(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        scale = np.abs(a).max() or 1.0
        if np.abs(a - a.T).max() > 1e-10 * scale:
            raise ValueError("matrix is not symmetric")
        super().__init__(a.shape[0])
        self.a = a

    def apply(self, v):
        return self.a @ self._check_vec(v)

    def densify(self):
        return self.a.copy()


class SparseSpdOperator(SpdOperator):
    """SPD operator stored as a symmetric scipy CSR matrix (both triangles)."""

    def __init__(self, a: scipy.sparse.spmatrix):
        a = scipy.sparse.csr_matrix(a)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        super().__init__(a.shape[0])
        self.a = a

    def apply(self, v):
        return self.a @ self._check_vec(v)

    def densify(self):
        if self.n > DENSE_SOLVE_LIMIT:
            raise ValueError(f"refusing to densify a sparse operator of dimension {self.n}")
        return self.a.toarray()


@dataclass(frozen=True)
class SpectrumSpec:
    """Parametric description of a synthetic SPD spectrum.

    kind is one of ``clusters`` (n_clusters groups with geometrically spaced
    centers, eigenvalues uniform within center*(1 +- radius_ratio)),
    ``exp-decay`` (geometric interpolation from lambda_max down to lambda_min)
    or ``linear-decay``.
    """

    kind: str
    n: int
    lambda_min: float = 1.0
    lambda_max: float = 1.0
    n_clusters: int = 1
    radius_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("clusters", "exp-decay", "linear-decay"):
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not (0.0 < self.lambda_min <= self.lambda_max):
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not (0.0 <= self.radius_ratio < 1.0):
            raise ValueError("radius_ratio must lie in [0, 1)")


@dataclass(frozen=True)
class PrecondSpec:
    """Preconditioner request: ``none`` or ``block-jacobi`` with n_blocks."""

    kind: str = "none"
    n_blocks: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "block-jacobi"):
            raise ValueError(f"unknown preconditioner kind {self.kind!r}")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")


_SPEC_FIELDS = ("kind", "n", "lambda_min", "lambda_max", "n_clusters", "radius_ratio", "seed")


def format_spectrum_spec(spec: SpectrumSpec) -> str:
    """Serialize a SpectrumSpec as a key=value text block (one pair per line)."""
    lines = [f"{name}={getattr(spec, name)}" for name in _SPEC_FIELDS]
    return "\n".join(lines) + "\n"


def parse_spectrum_spec(text: str) -> SpectrumSpec:
    """Parse the key=value block written by :func:`format_spectrum_spec`."""
    values = {}
    for raw in text.replace(",", "\n").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed spectrum-spec line {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _SPEC_FIELDS:
            raise ValueError(f"unknown spectrum-spec field {key!r}")
        values[key] = val.strip()
    if "kind" not in values or "n" not in values:
        raise ValueError("spectrum spec needs at least 'kind' and 'n'")
    kwargs = {"kind": values["kind"], "n": int(values["n"])}
    for name in ("lambda_min", "lambda_max", "radius_ratio"):
        if name in values:
            kwargs[name] = float(values[name])
    for name in ("n_clusters", "seed"):
        if name in values:
            kwargs[name] = int(values[name])
    return SpectrumSpec(**kwargs)


#: Named spectra used throughout the experiments, at desk scale (n=4096 by
#: default; override n/seed via parse overrides).
SPECTRUM_PRESETS = {
    "G-exp2": dict(kind="exp-decay", lambda_min=1.0, lambda_max=1e2),
    "G-exp3": dict(kind="exp-decay", lambda_min=1.0, lambda_max=1e3),
    "G-c5-s25": dict(kind="clusters", lambda_min=1.0, lambda_max=1e5,
                     n_clusters=5, radius_ratio=0.25),
    "G-c5-s025": dict(kind="clusters", lambda_min=1.0, lambda_max=1e5,
                      n_clusters=5, radius_ratio=0.025),
    "G-clust2": dict(kind="clusters", lambda_min=1.0, lambda_max=1e2,
                     n_clusters=2, radius_ratio=0.25),
    "G-clust3": dict(kind="clusters", lambda_min=1.0, lambda_max=1e3,
                     n_clusters=2, radius_ratio=0.25),
}


def _spectrum_values(spec: SpectrumSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "exp-decay":
        return np.geomspace(spec.lambda_max, spec.lambda_min, spec.n)
    if spec.kind == "linear-decay":
        return np.linspace(spec.lambda_max, spec.lambda_min, spec.n)
    # clusters: geometrically spaced centers, near-equal sizes, remainder
    # assigned to the smallest-center cluster.
    centers = np.geomspace(spec.lambda_max, spec.lambda_min, spec.n_clusters)
    base, rem = divmod(spec.n, spec.n_clusters)
    sizes = [base] * spec.n_clusters
    sizes[-1] += rem
    parts = []
    for c, size in zip(centers, sizes):
        lo = c * (1.0 - spec.radius_ratio)
        hi = c * (1.0 + spec.radius_ratio)
        parts.append(rng.uniform(lo, hi, size) if spec.radius_ratio > 0 else np.full(size, c))
    return np.concatenate(parts)


class SyntheticSpectralOperator(SpdOperator):
    """Q diag(lam) Q^T with Q applied implicitly.

    Q is a composition of ceil(log2 n) layers, each rotating floor(n/2)
    random disjoint index pairs by random angles, followed by a random-sign
    diagonal.  One apply costs O(n log n) and the eigenvalues are known
    exactly, so A^{-1}, A^{+-1/2} and the condition number are exact.
    """

    def __init__(self, eigenvalues: np.ndarray, seed: int = 0, spec: SpectrumSpec | None = None):
        lam = np.asarray(eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("eigenvalues must be a nonempty 1-D array")
        if lam.min() <= 0:
            raise ValueError("all eigenvalues must be positive")
        super().__init__(lam.size)
        self.lam = lam
        self.seed = int(seed)
        self.spec = spec
        n = self.n
        rng = np.random.default_rng(seed)
        n_layers = max(int(math.ceil(math.log2(n))), 0) if n > 1 else 0
        self._layers = []
        for _ in range(n_layers):
            perm = rng.permutation(n)
            npairs = n // 2
            ia = perm[:npairs]
            ib = perm[npairs:2 * npairs]
            theta = rng.uniform(0.0, 2.0 * math.pi, npairs)
            self._layers.append((ia, ib, np.cos(theta), np.sin(theta)))
        self._signs = rng.choice([-1.0, 1.0], n)

    @staticmethod
    def _bcast(coeff, w):
        return coeff if w.ndim == 1 else coeff[:, None]

    # Q = R_{m-1} ... R_0 D  with D the sign diagonal.
    def _q_apply(self, w):
        w = w * self._bcast(self._signs, w)
        for ia, ib, c, s in self._layers:
            a = w[ia].copy()
            b = w[ib]
            c, s = self._bcast(c, w), self._bcast(s, w)
            w[ia] = c * a - s * b
            w[ib] = s * a + c * b
        return w

    def _qt_apply(self, w):
        w = w.copy()
        for ia, ib, c, s in reversed(self._layers):
            a = w[ia].copy()
            b = w[ib]
            c, s = self._bcast(c, w), self._bcast(s, w)
            w[ia] = c * a + s * b
            w[ib] = -s * a + c * b
        return w * self._bcast(self._signs, w)

    def _apply_eigenfunction(self, v, f):
        w = self._qt_apply(np.array(v, dtype=float))
        w = w * self._bcast(f(self.lam), w)
        return self._q_apply(w)

    def apply(self, v):
        return self._apply_eigenfunction(self._check_vec(v), lambda lam: lam)

    def apply_inverse(self, v):
        """Exact A^{-1} v."""
        return self._apply_eigenfunction(self._check_vec(v), lambda lam: 1.0 / lam)

    def apply_inv_sqrt(self, v):
        return self._apply_eigenfunction(self._check_vec(v), lambda lam: 1.0 / np.sqrt(lam))

    def apply_sqrt(self, v):
        return self._apply_eigenfunction(self._check_vec(v), np.sqrt)

    @property
    def spectral_access(self):
        return True

    def eigenvalues(self):
        return self.lam.copy()

    def cond(self):
        # Exact by construction, never estimated.
        return float(self.lam.max() / self.lam.min())

    def densify(self):
        return self._apply_eigenfunction(np.eye(self.n), lambda lam: lam)


def generate_spd(spec: SpectrumSpec) -> SyntheticSpectralOperator:
    """Build the synthetic SPD operator described by ``spec``.

    Deterministic for a fixed seed: the eigenvalue draw and the rotation
    layers both derive from ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    lam = _spectrum_values(spec, rng)
    # Rotation layers use an offset stream so that spectra of equal length
    # share no draws with the eigenvalues.
    return SyntheticSpectralOperator(lam, seed=spec.seed + 0x5EED, spec=spec)


class ShiftedOperator(SpdOperator):
    """A + sigma * I around a base operator (sigma >= 0 preserves SPD)."""

    def __init__(self, base: SpdOperator, sigma: float):
        super().__init__(base.n)
        self.base = base
        self.sigma = float(sigma)

    def apply(self, v):
        v = self._check_vec(v)
        return self.base.apply(v) + self.sigma * v

    def densify(self):
        return self.base.densify() + self.sigma * np.eye(self.n)


def shift_operator(op: SpdOperator, sigma: float) -> SpdOperator:
    """Return A + sigma*I, keeping exact spectral access when A has it."""
    if sigma == 0.0:
        return op
    if isinstance(op, SyntheticSpectralOperator):
        shifted = SyntheticSpectralOperator.__new__(SyntheticSpectralOperator)
        SpdOperator.__init__(shifted, op.n)
        shifted.lam = op.lam + sigma
        if shifted.lam.min() <= 0:
            raise ValueError("shift makes the operator indefinite")
        shifted.seed = op.seed
        shifted.spec = None
        shifted._layers = op._layers
        shifted._signs = op._signs
        return shifted
    return ShiftedOperator(op, sigma)


# ---------------------------------------------------------------------------
# Matrix Market I/O (coordinate, real, symmetric)
# ---------------------------------------------------------------------------

def load_matrix_market(path) -> SparseSpdOperator:
    """Read a coordinate real symmetric ``.mtx`` file into a sparse operator.

    Entries may be stored in either triangle; they are folded canonically to
    the lower triangle and mirrored into explicit symmetric CSR storage.
    Conflicting duplicate entries (same position, different value) are
    rejected.
    """
    with open(path, "r") as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError(f"{path}: missing MatrixMarket header")
        tokens = header.split()
        if len(tokens) < 5:
            raise ValueError(f"{path}: malformed MatrixMarket header: {header.strip()!r}")
        _, obj, fmt, field, symmetry = (t.lower() for t in tokens[:5])
        if obj != "matrix" or fmt != "coordinate":
            raise ValueError(f"{path}: expected 'matrix coordinate', got '{obj} {fmt}'")
        if field not in ("real", "integer"):
            raise ValueError(f"{path}: expected real entries, got field '{field}'")
        if symmetry != "symmetric":
            raise ValueError(f"{path}: expected symmetric storage, got '{symmetry}'")

        line = fh.readline()
        while line.strip().startswith("%") or not line.strip():
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: missing size line")
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}: malformed size line {line.strip()!r}")
        nrows, ncols, nnz = (int(p) for p in parts)
        if nrows != ncols:
            raise ValueError(f"{path}: matrix is not square ({nrows}x{ncols})")

        seen: dict[tuple[int, int], float] = {}
        count = 0
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}: malformed entry line {line!r}")
            try:
                i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ValueError(f"{path}: cannot parse entry line {line!r}") from exc
            if not (1 <= i <= nrows and 1 <= j <= ncols):
                raise ValueError(f"{path}: entry ({i},{j}) out of bounds")
            if i < j:
                i, j = j, i  # fold to lower triangle
            key = (i - 1, j - 1)
            if key in seen and seen[key] != val:
                raise ValueError(
                    f"{path}: conflicting duplicate entry at ({i},{j}): "
                    f"{seen[key]} vs {val}"
                )
            seen[key] = val
            count += 1
        if count != nnz:
            raise ValueError(f"{path}: header promised {nnz} entries, found {count}")

    rows, cols, vals = [], [], []
    for (i, j), val in seen.items():
        rows.append(i)
        cols.append(j)
        vals.append(val)
        if i != j:
            rows.append(j)
            cols.append(i)
            vals.append(val)
    a = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    return SparseSpdOperator(a.tocsr())


def save_matrix_market(path, a: np.ndarray, comment: str = "") -> None:
    """Write a dense symmetric matrix as coordinate real symmetric ``.mtx``."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    entries = [(i, j, a[i, j]) for i in range(n) for j in range(i + 1) if a[i, j] != 0.0]
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        if comment:
            fh.write(f"% {comment}\n")
        fh.write(f"{n} {n} {len(entries)}\n")
        for i, j, val in entries:
            fh.write(f"{i + 1} {j + 1} {val!r}\n")


# ---------------------------------------------------------------------------
# Block-Jacobi preconditioning
# ---------------------------------------------------------------------------

def _block_bounds(n: int, n_blocks: int):
    base, rem = divmod(n, n_blocks)
    bounds = []
    lo = 0
    for b in range(n_blocks):
        size = base + (1 if b < rem else 0)
        bounds.append((lo, lo + size))
        lo += size
    return bounds


def _diag_block(op: SpdOperator, lo: int, hi: int) -> np.ndarray:
    if isinstance(op, DenseSpdOperator):
        return op.a[lo:hi, lo:hi].copy()
    if isinstance(op, SparseSpdOperator):
        return op.a[lo:hi, lo:hi].toarray()
    # generic fallback: probe with unit vectors
    block = np.zeros((hi - lo, hi - lo))
    e = np.zeros(op.n)
    for j in range(lo, hi):
        e[j] = 1.0
        block[:, j - lo] = op.apply(e)[lo:hi]
        e[j] = 0.0
    return block


class BlockJacobiOperator(SpdOperator):
    """Symmetrically preconditioned operator M^{-1/2} A M^{-1/2}.

    M is the block diagonal of A over contiguous, near-equal blocks; each
    block's inverse square root comes from its dense eigendecomposition.
    The symmetric split keeps the preconditioned operator SPD.  Use
    :meth:`to_preconditioned_rhs` / :meth:`solution_to_original` to map the
    right-hand side and the computed solution between variable sets.
    """

    def __init__(self, base: SpdOperator, n_blocks: int):
        if n_blocks > base.n:
            raise ValueError(f"n_blocks={n_blocks} exceeds dimension {base.n}")
        super().__init__(base.n)
        self.base = base
        self.n_blocks = int(n_blocks)
        self._bounds = _block_bounds(base.n, n_blocks)
        self._factors = []
        for idx, (lo, hi) in enumerate(self._bounds):
            block = _diag_block(base, lo, hi)
            w, u = np.linalg.eigh(block)
            if w.min() <= 0:
                raise np.linalg.LinAlgError(
                    f"diagonal block {idx} (rows {lo}:{hi}) is not positive definite"
                )
            self._factors.append((u, 1.0 / np.sqrt(w)))

    def apply_m_inv_sqrt(self, v: np.ndarray) -> np.ndarray:
        """Apply M^{-1/2} blockwise."""
        v = self._check_vec(v)
        out = np.empty_like(v)
        for (lo, hi), (u, winv) in zip(self._bounds, self._factors):
            out[lo:hi] = u @ ((u.T @ v[lo:hi]) * winv)
        return out

    def apply(self, v):
        return self.apply_m_inv_sqrt(self.base.apply(self.apply_m_inv_sqrt(v)))

    def to_preconditioned_rhs(self, b: np.ndarray) -> np.ndarray:
        """Map b to the preconditioned system's right-hand side M^{-1/2} b."""
        return self.apply_m_inv_sqrt(b)

    def solution_to_original(self, y: np.ndarray) -> np.ndarray:
        """Map a preconditioned solution y back to x = M^{-1/2} y."""
        return self.apply_m_inv_sqrt(y)

    def densify(self):
        minvh = np.column_stack([self.apply_m_inv_sqrt(col) for col in np.eye(self.n)])
        return minvh @ self.base.densify() @ minvh


def make_block_jacobi(op: SpdOperator, spec: PrecondSpec) -> SpdOperator:
    """Wrap ``op`` per the preconditioner spec (identity for kind='none')."""
    if spec.kind == "none":
        return op
    return BlockJacobiOperator(op, spec.n_blocks)
