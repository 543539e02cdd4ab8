"""Randomized orthogonal projection solvers.

:func:`rfom_solve` is the sketched Arnoldi solver: the Krylov basis is
orthonormalized in the sketched inner product <Omega., Omega.> instead of the
l2 one, so the projection step runs on ell-dimensional sketches.  The
produced iterates satisfy the sketched orthogonality condition
(Omega V_k)^T Omega r_k = 0: the residual is sketched-orthogonal to the
Krylov subspace.  While the sketch embeds the growing subspace, the basis
cannot break down before the subspace saturates and the projected matrix H_k
stays nonsingular; a numerically singular H_k therefore indicates an
embedding failure and is raised as such.

:func:`arcg_solve` replaces every inner product of the conjugate-gradient
recurrence by its sketched counterpart.  It enforces only local sketched
orthogonality (not the full sketched projection condition), which makes it an
approximation of CG: cheap, one synchronization fewer in distributed
settings, and reliable on smoothly decaying spectra, but subject to slow-down
or divergence on strongly clustered ill-conditioned spectra.  A divergence
detector aborts once the sketched residual grows by 1e6 over its initial
value.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .operators import SpdOperator
from .sketch import SketchOperator
from .solvers_det import (BREAKDOWN_RTOL, IterationTrace, KrylovState, _a_norm_error,
                          _prepare, solve_hessenberg)

__all__ = ["rfom_solve", "arcg_solve", "optional_ls_coeffs"]


def optional_ls_coeffs(s_basis: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Projection coefficients argmin_c ||s_basis c - p|| by Householder QR.

    Alternative to the sketched modified Gram-Schmidt sweep; both agree when
    the sketched basis has exactly orthonormal columns, and the least-squares
    route is the more robust one when it does not.  Raises on a rank-deficient
    sketched basis.
    """
    s_basis = np.asarray(s_basis, dtype=float)
    p = np.asarray(p, dtype=float)
    coeffs, _, rank, _ = scipy.linalg.lstsq(s_basis, p, lapack_driver="gelsy")
    if rank < s_basis.shape[1]:
        raise np.linalg.LinAlgError(
            f"sketched basis is rank deficient (rank {rank} of {s_basis.shape[1]})"
        )
    return coeffs


def rfom_solve(op: SpdOperator, b, x0=None, omega: SketchOperator = None, k_max=None,
               tol=1e-8, x_exact=None, coeffs="mgs", keep_iterates=True):
    """Sketched Arnoldi solver.

    Per iteration: sketch p = Omega A v_j, accumulate the column H[:j, j] by
    modified Gram-Schmidt on the sketches (or by a small least-squares solve
    when ``coeffs='ls'``), apply the whole update to the high-dimensional
    vector at once, and normalize by the *sketched* norm h_{j+1,j} =
    ||Omega z||.  The iterate solves the projected system H_j rho = beta e_1
    with beta = ||Omega r_0||.

    Stops on the sketched relative residual ||Omega r_j|| <= tol * beta, at
    k_max, or at h_{j+1,j} <= 1e-14 ||Omega A v_j|| (solution reached within
    the current subspace).  Returns ``(x, KrylovState, IterationTrace)``.
    """
    if omega is None:
        raise ValueError("rfom_solve requires a sketch operator")
    if omega.n != op.n:
        raise ValueError(f"sketch ambient dimension {omega.n} != operator dimension {op.n}")
    b, x0, k_max = _prepare(op, b, x0, k_max)
    if k_max > omega.ell:
        raise ValueError(f"k_max={k_max} exceeds the sampling size ell={omega.ell}")
    if coeffs not in ("mgs", "ls"):
        raise ValueError(f"coeffs must be 'mgs' or 'ls', got {coeffs!r}")
    n = op.n
    trace = IterationTrace(s_k1=[], sketched_residual_norm=[])
    if x_exact is not None:
        trace.a_norm_error = []
    if keep_iterates:
        trace.iterates = []

    r0 = b - op.apply(x0)
    sr0 = omega.apply(r0)
    beta = float(np.linalg.norm(sr0))
    if beta == 0.0:
        trace.status = "converged"
        state = KrylovState(V=np.zeros((n, 0)), H=np.zeros((1, 0)),
                            S=np.zeros((omega.ell, 0)), beta=0.0, k=0)
        return x0, state, trace

    V = np.zeros((n, k_max + 1))
    S = np.zeros((omega.ell, k_max + 1))
    H = np.zeros((k_max + 1, k_max))
    V[:, 0] = r0 / beta
    S[:, 0] = sr0 / beta
    x = x0
    j = 0
    breakdown = False
    trace.status = "maxit"
    for j in range(1, k_max + 1):
        z = op.apply(V[:, j - 1])
        p = omega.apply(z)
        p_norm0 = float(np.linalg.norm(p))
        if coeffs == "mgs":
            for i in range(j):
                hij = float(S[:, i] @ p)
                H[i, j - 1] = hij
                p -= hij * S[:, i]
        else:
            H[:j, j - 1] = optional_ls_coeffs(S[:, :j], p)
        z -= V[:, :j] @ H[:j, j - 1]
        s_next = omega.apply(z)
        hnext = float(np.linalg.norm(s_next))
        H[j, j - 1] = hnext
        breakdown = hnext <= BREAKDOWN_RTOL * p_norm0
        if not breakdown:
            V[:, j] = z / hnext
            S[:, j] = s_next / hnext

        rhs = np.zeros(j)
        rhs[0] = beta
        try:
            rho = solve_hessenberg(H[:j, :j], rhs)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                f"projected matrix singular at iteration {j}; the sketch no longer "
                f"embeds the Krylov subspace ({exc})"
            ) from exc
        x = x0 + V[:, :j] @ rho
        r = b - op.apply(x)
        trace.residual_norm.append(float(np.linalg.norm(r)))
        srn = float(np.linalg.norm(omega.apply(r)))
        trace.sketched_residual_norm.append(srn)
        trace.s_k1.append(hnext * rho[j - 1] / beta)
        if x_exact is not None:
            trace.a_norm_error.append(_a_norm_error(op, x_exact, x))
        if keep_iterates:
            trace.iterates.append(x.copy())
        if srn <= tol * beta:
            trace.status = "converged"
            break
        if breakdown:
            trace.status = "breakdown"
            break

    ncols = j if breakdown else j + 1
    state = KrylovState(V=V[:, :ncols], H=H[:j + 1, :j], S=S[:, :ncols], beta=beta, k=j,
                        breakdown=breakdown)
    return x, state, trace


def arcg_solve(op: SpdOperator, b, x0=None, omega: SketchOperator = None, eta=1e-8,
               k_max=None, x_exact=None, resketch_every=50, fresh_p_sketch=True,
               stop_on_sketched_b=False, keep_iterates=True, keep_vectors=False):
    """Conjugate gradients with sketched inner products.

    Coefficients: delta_k = ||Omega r_k||^2 / ||Omega r_{k-1}||^2 mixes the
    previous direction, gamma_k = ||Omega r_k||^2 / <Omega A p_k, Omega p_k>
    is the step length (with r = b - A x and x_{k+1} = x_k + gamma_k p_k this
    reduces exactly to CG when the sketch is the identity).  Stops when
    ||Omega r_k|| < eta ||b|| (or eta ||Omega b|| with
    ``stop_on_sketched_b=True``) or at k_max.

    The sketched residual is updated by the recurrence
    Omega r' = Omega r - gamma Omega A p and re-sketched freshly every
    ``resketch_every`` iterations to bound drift (pass 1 to sketch freshly on
    every iteration).  ``fresh_p_sketch`` selects whether Omega p_k is a
    fresh sketch or the recurrence Omega r_k + delta_k Omega p_{k-1}.

    The trace records, per iteration, the sketched-quotient deviation
    eps_tilde_k = max(|gamma_k <p,Ap>/||r||^2 - 1|, |delta_k ||r_-||^2/||r||^2 - 1|)
    measured against the true (unsketched) inner products, plus ||Omega p_k||
    for the energy-drop bound.  ``trace.status`` reports 'converged', 'maxit',
    'diverged' (sketched residual grew by 1e6) or 'breakdown' (sketched
    curvature vanished).
    """
    if omega is None:
        raise ValueError("arcg_solve requires a sketch operator")
    if omega.n != op.n:
        raise ValueError(f"sketch ambient dimension {omega.n} != operator dimension {op.n}")
    b, x0, k_max = _prepare(op, b, x0, k_max)
    if resketch_every < 1:
        raise ValueError("resketch_every must be >= 1")
    trace = IterationTrace(gamma_k=[], delta_k=[], eps_tilde_k=[],
                           sketched_p_norm=[], sketched_residual_norm=[])
    if x_exact is not None:
        trace.a_norm_error = []
    if keep_iterates:
        trace.iterates = []
    if keep_vectors:
        trace.residual_vectors = []
        trace.directions = []

    x = x0.copy()
    r = b - op.apply(x)
    sr = omega.apply(r)
    srn = float(np.linalg.norm(sr))
    srn0 = srn
    stop_scale = float(np.linalg.norm(omega.apply(b))) if stop_on_sketched_b \
        else float(np.linalg.norm(b))
    if srn == 0.0:
        trace.status = "converged"
        return x, trace
    p = r.copy()
    sp = sr.copy()
    rn_true = float(np.linalg.norm(r))
    k = 0
    trace.status = "maxit"
    while k < k_max:
        if srn < eta * stop_scale:
            trace.status = "converged"
            break
        if srn > 1e6 * srn0:
            trace.status = "diverged"
            break
        if k >= 1:
            delta = srn**2 / srn_prev**2
            p = r + delta * p
            sp = omega.apply(p) if fresh_p_sketch else sr + delta * sp
        else:
            delta = math.nan
        ap = op.apply(p)
        sap = omega.apply(ap)
        curv = float(sap @ sp)
        if curv == 0.0 or not math.isfinite(curv):
            trace.status = "breakdown"
            break
        gamma = srn**2 / curv
        if keep_vectors:
            trace.residual_vectors.append(r.copy())
            trace.directions.append(p.copy())

        # sketched-quotient deviation against true inner products
        rn_prev_true = rn_true
        pap_true = float(p @ ap)
        dev_gamma = abs(gamma * pap_true / rn_prev_true**2 - 1.0)
        dev_delta = abs(delta * (float(np.linalg.norm(r)) ** 2 and 1.0) - 1.0)  # placeholder

        x = x + gamma * p
        r = r - gamma * ap
        rn_true = float(np.linalg.norm(r))
        if k >= 1:
            dev_delta = abs(delta * rn_prevprev_true**2 / rn_prev_true**2 - 1.0)
            eps_tilde = max(dev_gamma, dev_delta)
        else:
            eps_tilde = dev_gamma
        rn_prevprev_true = rn_prev_true

        srn_prev = srn
        k += 1
        if k % resketch_every == 0:
            sr = omega.apply(r)
        else:
            sr = sr - gamma * sap
        srn = float(np.linalg.norm(sr))

        trace.gamma_k.append(gamma)
        trace.delta_k.append(delta)
        trace.eps_tilde_k.append(eps_tilde)
        trace.sketched_p_norm.append(float(np.linalg.norm(sp)))
        trace.sketched_residual_norm.append(srn)
        trace.residual_norm.append(rn_true)
        if x_exact is not None:
            trace.a_norm_error.append(_a_norm_error(op, x_exact, x))
        if keep_iterates:
            trace.iterates.append(x.copy())
    return x, trace
