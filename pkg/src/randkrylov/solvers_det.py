"""Deterministic Krylov solvers for SPD systems.

:func:`fom_solve` runs the Arnoldi process with modified Gram-Schmidt and, at
every iteration j, solves the projected j x j upper-Hessenberg system
H_j rho = beta e_1 to produce the iterate x_j = x_0 + V_j rho.  The residual
of that iterate is l2-orthogonal to the Krylov subspace K_j (the
orthogonal-projection property), which for SPD operators makes x_j the
energy-norm-optimal element of x_0 + K_j.

:func:`lanczos_solve` is the short-recurrence variant: for symmetric
operators the projected matrix is tridiagonal, so new basis vectors are
orthogonalized only against the previous two; the whole basis is still stored
for the solve step.  :func:`cg_solve` is the classical conjugate-gradient
recurrence with one matvec and three inner products per iteration.

All solvers return per-iteration instrumentation in an :class:`IterationTrace`
and the Krylov data (basis, projected matrix) in a :class:`KrylovState`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .operators import SpdOperator

__all__ = [
    "KrylovState",
    "IterationTrace",
    "fom_solve",
    "lanczos_solve",
    "cg_solve",
    "ritz_values",
    "solve_hessenberg",
]

# h_{j+1,j} below this fraction of ||A v_j|| (deterministic) or ||Omega A v_j||
# (randomized) signals that the Krylov subspace stopped growing.
BREAKDOWN_RTOL = 1e-14


@dataclass
class KrylovState:
    """Basis and projected matrix produced by an Arnoldi-type sweep.

    V has k+1 columns (k after a terminal breakdown), H is (k+1) x k upper
    Hessenberg with exact zeros below the first subdiagonal, and S = Omega V
    is present only for sketched runs.  ``beta`` is the initial residual norm
    used on the projected right-hand side (sketched norm for sketched runs).
    """

    V: np.ndarray
    H: np.ndarray
    S: np.ndarray | None
    beta: float
    k: int
    breakdown: bool = False


@dataclass
class IterationTrace:
    """Per-iteration instrumentation; entry i describes iteration i+1.

    Only ``residual_norm`` is always filled.  Absent diagnostics stay None
    (whole array) or NaN (single entries); they are never silently
    zero-filled.  For the conjugate-gradient style solvers, ``gamma_k`` is
    the step length of the iteration and ``delta_k`` the direction-mixing
    coefficient used to *build* that iteration's search direction (NaN for
    the first iteration, which uses the raw residual).
    """

    residual_norm: list = field(default_factory=list)
    a_norm_error: list | None = None
    sketched_residual_norm: list | None = None
    alpha_k: list | None = None
    beta_k: list | None = None
    bound_quasi1: list | None = None
    bound_quasi2: list | None = None
    s_k1: list | None = None
    gamma_k: list | None = None
    delta_k: list | None = None
    eps_tilde_k: list | None = None
    sketched_p_norm: list | None = None
    iterates: list | None = None
    residual_vectors: list | None = None
    directions: list | None = None
    status: str = "running"

    @property
    def niter(self) -> int:
        return len(self.residual_norm)

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "breakdown")


def solve_hessenberg(h: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve h x = rhs for square upper-Hessenberg h by Givens QR.

    O(k^2); refactored on every call.  Raises ``numpy.linalg.LinAlgError``
    when h is numerically singular.
    """
    h = np.asarray(h, dtype=float)
    k = h.shape[0]
    r = h.copy()
    g = np.asarray(rhs, dtype=float).copy()
    for j in range(k - 1):
        a, b = r[j, j], r[j + 1, j]
        if b == 0.0:
            continue
        rad = math.hypot(a, b)
        c, s = a / rad, b / rad
        rj = r[j, j:].copy()
        r[j, j:] = c * rj + s * r[j + 1, j:]
        r[j + 1, j:] = -s * rj + c * r[j + 1, j:]
        gj = g[j]
        g[j] = c * gj + s * g[j + 1]
        g[j + 1] = -s * gj + c * g[j + 1]
    x = np.zeros(k)
    tiny = 1e-14 * max(np.abs(r).max(), 1e-300)
    for i in range(k - 1, -1, -1):
        d = r[i, i]
        if abs(d) <= tiny:
            raise np.linalg.LinAlgError("projected Hessenberg system is numerically singular")
        x[i] = (g[i] - r[i, i + 1:] @ x[i + 1:]) / d
    return x


def ritz_values(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of a small square Hessenberg matrix (shifted QR iteration).

    Complex conjugate pairs are permitted; limited to k <= 500.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {h.shape}")
    if h.shape[0] > 500:
        raise ValueError(f"ritz_values is limited to k <= 500, got {h.shape[0]}")
    try:
        return np.linalg.eigvals(h)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"QR eigenvalue iteration did not converge: {exc}") from exc


def _prepare(op: SpdOperator, b, x0, k_max):
    b = np.asarray(b, dtype=float)
    if b.shape != (op.n,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({op.n},)")
    x0 = np.zeros(op.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x0.shape != (op.n,):
        raise ValueError(f"initial guess has shape {x0.shape}, expected ({op.n},)")
    k_max = op.n if k_max is None else int(k_max)
    if not (1 <= k_max <= op.n):
        raise ValueError(f"k_max must lie in [1, n]={op.n}, got {k_max}")
    return b, x0, k_max


def _a_norm_error(op, x_exact, x):
    e = x_exact - x
    return math.sqrt(max(float(e @ op.apply(e)), 0.0))


def fom_solve(op: SpdOperator, b, x0=None, k_max=None, tol=1e-8, x_exact=None,
              keep_iterates=True):
    """Arnoldi solver with full modified Gram-Schmidt orthogonalization.

    Stops when ||r_j|| <= tol * ||r_0||, at k_max, or on a terminal breakdown
    (h_{j+1,j} <= 1e-14 ||A v_j||, meaning the solution lies in the current
    subspace).  Returns ``(x, KrylovState, IterationTrace)``.  Passing
    ``x_exact`` fills the energy-norm error per iteration.
    """
    b, x0, k_max = _prepare(op, b, x0, k_max)
    n = op.n
    trace = IterationTrace(s_k1=[])
    if x_exact is not None:
        trace.a_norm_error = []
    if keep_iterates:
        trace.iterates = []

    r0 = b - op.apply(x0)
    beta = float(np.linalg.norm(r0))
    if beta == 0.0:
        trace.status = "converged"
        state = KrylovState(V=np.zeros((n, 0)), H=np.zeros((1, 0)), S=None, beta=0.0, k=0)
        return x0, state, trace

    V = np.zeros((n, k_max + 1))
    H = np.zeros((k_max + 1, k_max))
    V[:, 0] = r0 / beta
    x = x0
    j = 0
    breakdown = False
    trace.status = "maxit"
    for j in range(1, k_max + 1):
        z = op.apply(V[:, j - 1])
        az_norm = float(np.linalg.norm(z))
        for i in range(j):
            hij = float(V[:, i] @ z)
            H[i, j - 1] = hij
            z -= hij * V[:, i]
        hnext = float(np.linalg.norm(z))
        H[j, j - 1] = hnext
        breakdown = hnext <= BREAKDOWN_RTOL * az_norm
        if not breakdown:
            V[:, j] = z / hnext

        rhs = np.zeros(j)
        rhs[0] = beta
        rho = solve_hessenberg(H[:j, :j], rhs)
        x = x0 + V[:, :j] @ rho
        r = b - op.apply(x)
        rn = float(np.linalg.norm(r))
        trace.residual_norm.append(rn)
        trace.s_k1.append(hnext * rho[j - 1] / beta)
        if x_exact is not None:
            trace.a_norm_error.append(_a_norm_error(op, x_exact, x))
        if keep_iterates:
            trace.iterates.append(x.copy())
        if rn <= tol * beta:
            trace.status = "converged"
            break
        if breakdown:
            trace.status = "breakdown"
            break

    ncols = j if breakdown else j + 1
    state = KrylovState(V=V[:, :ncols], H=H[:j + 1, :j], S=None, beta=beta, k=j,
                        breakdown=breakdown)
    return x, state, trace


def lanczos_solve(op: SpdOperator, b, x0=None, k_max=None, tol=1e-8, x_exact=None,
                  keep_iterates=True):
    """Short-recurrence Arnoldi for symmetric operators.

    New directions are orthogonalized only against the two latest basis
    vectors; the subdiagonal coefficient from the previous iteration is
    reused as the superdiagonal entry, and entries above the superdiagonal
    are never computed (they stay exactly zero).  The full basis is still
    stored for the solve step.  No reorthogonalization is performed, so
    orthogonality degrades over long runs exactly as the classical recurrence
    does.
    """
    b, x0, k_max = _prepare(op, b, x0, k_max)
    n = op.n
    trace = IterationTrace(s_k1=[])
    if x_exact is not None:
        trace.a_norm_error = []
    if keep_iterates:
        trace.iterates = []

    r0 = b - op.apply(x0)
    beta = float(np.linalg.norm(r0))
    if beta == 0.0:
        trace.status = "converged"
        state = KrylovState(V=np.zeros((n, 0)), H=np.zeros((1, 0)), S=None, beta=0.0, k=0)
        return x0, state, trace

    V = np.zeros((n, k_max + 1))
    H = np.zeros((k_max + 1, k_max))
    V[:, 0] = r0 / beta
    x = x0
    j = 0
    breakdown = False
    trace.status = "maxit"
    for j in range(1, k_max + 1):
        z = op.apply(V[:, j - 1])
        az_norm = float(np.linalg.norm(z))
        if j >= 2:
            hprev = H[j - 1, j - 2]
            H[j - 2, j - 1] = hprev
            z -= hprev * V[:, j - 2]
        hdiag = float(V[:, j - 1] @ z)
        H[j - 1, j - 1] = hdiag
        z -= hdiag * V[:, j - 1]
        hnext = float(np.linalg.norm(z))
        H[j, j - 1] = hnext
        breakdown = hnext <= BREAKDOWN_RTOL * az_norm
        if not breakdown:
            V[:, j] = z / hnext

        rhs = np.zeros(j)
        rhs[0] = beta
        rho = solve_hessenberg(H[:j, :j], rhs)
        x = x0 + V[:, :j] @ rho
        r = b - op.apply(x)
        rn = float(np.linalg.norm(r))
        trace.residual_norm.append(rn)
        trace.s_k1.append(hnext * rho[j - 1] / beta)
        if x_exact is not None:
            trace.a_norm_error.append(_a_norm_error(op, x_exact, x))
        if keep_iterates:
            trace.iterates.append(x.copy())
        if rn <= tol * beta:
            trace.status = "converged"
            break
        if breakdown:
            trace.status = "breakdown"
            break

    ncols = j if breakdown else j + 1
    state = KrylovState(V=V[:, :ncols], H=H[:j + 1, :j], S=None, beta=beta, k=j,
                        breakdown=breakdown)
    return x, state, trace


def cg_solve(op: SpdOperator, b, x0=None, k_max=None, tol=1e-8, x_exact=None,
             keep_iterates=True, keep_vectors=False):
    """Conjugate gradients: one matvec and three inner products per iteration.

    Residual convention r = b - A x; the step length is
    gamma = <r, p> / <A p, p> and the next direction is
    p' = r' + delta p with delta = -<r', A p> / <p, A p>, which keeps the
    directions A-conjugate.  Raises ``numpy.linalg.LinAlgError`` when
    <A p, p> <= 0 (loss of positive definiteness).
    """
    b, x0, k_max = _prepare(op, b, x0, k_max)
    trace = IterationTrace(gamma_k=[], delta_k=[])
    if x_exact is not None:
        trace.a_norm_error = []
    if keep_iterates:
        trace.iterates = []
    if keep_vectors:
        trace.residual_vectors = []
        trace.directions = []

    x = x0.copy()
    r = b - op.apply(x)
    rn0 = float(np.linalg.norm(r))
    if rn0 == 0.0:
        trace.status = "converged"
        return x, trace
    p = r.copy()
    delta_used = math.nan
    trace.status = "maxit"
    for _ in range(k_max):
        ap = op.apply(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise np.linalg.LinAlgError(
                f"<A p, p> = {pap:.3e} <= 0: operator is not positive definite"
            )
        gamma = float(r @ p) / pap
        if keep_vectors:
            trace.residual_vectors.append(r.copy())
            trace.directions.append(p.copy())
        x = x + gamma * p
        r_new = r - gamma * ap
        delta = -float(r_new @ ap) / pap
        trace.gamma_k.append(gamma)
        trace.delta_k.append(delta_used)
        delta_used = delta
        p = r_new + delta * p
        r = r_new
        rn = float(np.linalg.norm(r))
        trace.residual_norm.append(rn)
        if x_exact is not None:
            trace.a_norm_error.append(_a_norm_error(op, x_exact, x))
        if keep_iterates:
            trace.iterates.append(x.copy())
        if rn <= tol * rn0:
            trace.status = "converged"
            break
    return x, trace
