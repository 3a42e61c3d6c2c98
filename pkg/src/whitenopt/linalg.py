"""Dense linear-algebra kernels for matrix-whitening optimizers.

Symmetric eigendecomposition (cyclic Jacobi), fractional matrix powers,
Newton-Schulz orthogonalization, an exact orthogonalization oracle built on
the eigensolver, and a brute-force whitening oracle for small problems.
Everything operates on dense 2-D float64 arrays and is deterministic:
identical input bytes give identical output bytes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Jacobi sweep control: off-diagonal threshold is relative to ||A||_F, and the
# sweep cap bounds work on adversarial inputs.  A rotation is skipped when its
# pivot is below thresh/n, which keeps the residual under the threshold.
JACOBI_TOL_SCALE = 1e-12
JACOBI_MAX_SWEEPS = 100

# Relative cutoff under which an eigenvalue is treated as exactly zero when a
# negative power would otherwise blow it up (rank-deficient inputs).
NULL_REL_TOL = 1e-12

# Newton-Schulz schedule.  The first iterations use the aggressive quintic
# constants (fast inflation of small singular values; fixed point 1.101, does
# not converge on its own), the rest use the convergent quintic
# x * (15 - 10 x^2 + 3 x^4) / 8 whose fixed point is exactly 1.
NS_INFLATE_COEFFS = (3.4445, -4.7750, 2.0315)
NS_POLISH_COEFFS = (15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0)
NS_INFLATE_ITERS = 3
NS_NORM_EPS = 1e-7

# Gram-route singular values cannot be resolved below sqrt(machine eps), about
# 1.5e-8 relative, so the null cutoff sits well above that floor.  It equals
# NULL_REL_TOL on the Gram eigenvalue scale, which keeps svd_orthogonalize and
# the matrix_power_sym whitening routes dropping identical directions.
SVD_NULL_TOL = 1e-6


class SymEigen(NamedTuple):
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are sorted descending; eigenvectors holds the matching
    unit-norm eigenvectors as columns, sign-canonicalized so the entry of
    largest magnitude in each column is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains non-finite entries")
    return a


def _check_square(a: np.ndarray, name: str) -> np.ndarray:
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def _jacobi(sym: np.ndarray, warm_start: np.ndarray | None):
    """Cyclic Jacobi diagonalization with round-robin pivot ordering.

    Each sweep visits every off-diagonal pair exactly once, as n-1 rounds of
    n/2 disjoint pivots applied simultaneously.  The order is fixed, so the
    result is deterministic for identical input.
    """
    n = sym.shape[0]
    m = n + (n % 2)
    A = np.zeros((m, m))
    A[:n, :n] = sym
    V = np.eye(m)
    if warm_start is not None:
        rot = warm_start.T @ sym @ warm_start
        A[:n, :n] = 0.5 * (rot + rot.T)
        V[:n, :n] = warm_start
    fro = np.sqrt(np.sum(sym * sym))
    thresh = JACOBI_TOL_SCALE * fro
    pivot_cut = thresh / max(m, 1)
    if n == 1 or fro == 0.0:
        return np.diag(A)[:n].copy(), V[:n, :n].copy()

    others = np.arange(1, m)
    half = m // 2
    for _ in range(JACOBI_MAX_SWEEPS):
        sq = A * A
        np.fill_diagonal(sq, 0.0)
        if np.sqrt(sq.sum()) <= thresh:
            break
        rotated = False
        for r in range(m - 1):
            ring = np.concatenate(([0], others[r:], others[:r]))
            p_idx = ring[:half]
            q_idx = ring[m - 1 : half - 1 : -1]
            apq = A[p_idx, q_idx]
            active = np.abs(apq) > pivot_cut
            if not active.any():
                continue
            rotated = True
            p_idx = p_idx[active]
            q_idx = q_idx[active]
            apq = apq[active]
            app = A[p_idx, p_idx]
            aqq = A[q_idx, q_idx]
            tau = (aqq - app) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t[tau == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cp = A[:, p_idx]
            cq = A[:, q_idx]
            A[:, p_idx] = c * cp - s * cq
            A[:, q_idx] = s * cp + c * cq
            rp = A[p_idx, :]
            rq = A[q_idx, :]
            A[p_idx, :] = c[:, None] * rp - s[:, None] * rq
            A[q_idx, :] = s[:, None] * rp + c[:, None] * rq
            vp = V[:, p_idx]
            vq = V[:, q_idx]
            V[:, p_idx] = c * vp - s * vq
            V[:, q_idx] = s * vp + c * vq
        if not rotated:
            break
    return np.diag(A)[:n].copy(), V[:n, :n].copy()


def sym_eigh(a, warm_start: np.ndarray | None = None) -> SymEigen:
    """Eigendecompose a symmetric matrix by cyclic Jacobi sweeps.

    The input is symmetrized as (A + A^T)/2 before decomposition.  Passing a
    previously computed orthonormal basis as ``warm_start`` rotates into that
    basis first, which cuts sweeps when the input drifted only slightly; the
    result is still a deterministic function of (input, warm_start).

    Returns a SymEigen with descending eigenvalues.
    """
    a = _check_square(a, "a")
    sym = 0.5 * (a + a.T)
    w, v = _jacobi(sym, warm_start)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]
    lead = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[lead, np.arange(v.shape[1])])
    signs[signs == 0.0] = 1.0
    return SymEigen(w * 1.0, v * signs)


def matrix_power_sym(a, power: float, eps: float = 0.0) -> np.ndarray:
    """Return Q diag(max(lambda, eps)^power) Q^T for symmetric PSD input.

    With eps = 0 and a negative power, eigenvalues at or below
    NULL_REL_TOL * max|lambda| contribute zero instead of overflowing, so
    rank-deficient inputs whiten only on their range.  Eigenvalues below
    -1e-6 * max|lambda| raise instead of being clamped.
    """
    a = _check_square(a, "a")
    if eps < 0.0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    eig = sym_eigh(a)
    w = eig.eigenvalues
    q = eig.eigenvectors
    scale = float(np.max(np.abs(w)))
    if w[-1] < -1e-6 * scale:
        raise FloatingPointError(
            f"matrix has negative eigenvalue {w[-1]:.3e} beyond PSD tolerance"
        )
    lam = np.maximum(w, eps)
    if power < 0.0:
        null = lam <= NULL_REL_TOL * scale
        safe = np.where(null, 1.0, lam)
        coeff = np.where(null, 0.0, safe**power)
    else:
        coeff = np.maximum(lam, 0.0) ** power
    out = (q * coeff) @ q.T
    return 0.5 * (out + out.T)


def newton_schulz_orthogonalize(g, iters: int = 5) -> np.ndarray:
    """Drive the singular values of g toward 1 by quintic iteration.

    The input is scaled by 1/(||G||_F + 1e-7); wide orientation is enforced by
    transposing tall inputs and transposing back.  The first
    NS_INFLATE_ITERS iterations use the aggressive constants, later ones the
    convergent polynomial, so the error against the exact orthogonalization
    is nonincreasing from the third iteration on.
    """
    g = as_matrix(g, "g")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if not np.any(g):
        return np.zeros_like(g)
    tall = g.shape[0] > g.shape[1]
    x = g.T.copy() if tall else g.copy()
    x /= np.sqrt(np.sum(x * x)) + NS_NORM_EPS
    for k in range(iters):
        a, b, c = NS_INFLATE_COEFFS if k < NS_INFLATE_ITERS else NS_POLISH_COEFFS
        gram = x @ x.T
        x = a * x + (b * gram + c * (gram @ gram)) @ x
    return x.T if tall else x


def svd_orthogonalize(g) -> np.ndarray:
    """Exact orthogonalization U V^T via eigendecomposition of the Gram matrix.

    Singular values at or below SVD_NULL_TOL * sigma_max are treated as zero
    and their directions map to zero rather than an arbitrary rotation, the
    same cutoff matrix_power_sym applies on the Gram eigenvalue scale.
    """
    g = as_matrix(g, "g")
    if not np.any(g):
        return np.zeros_like(g)
    rows, cols = g.shape
    if rows <= cols:
        gram = g @ g.T
    else:
        gram = g.T @ g
    eig = sym_eigh(gram)
    sv = np.sqrt(np.maximum(eig.eigenvalues, 0.0))
    keep = sv > SVD_NULL_TOL * sv[0]
    inv = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 0.0)
    q = eig.eigenvectors
    core = (q * inv) @ q.T
    if rows <= cols:
        return core @ g
    return g @ core


def singular_value_spread(g) -> tuple[float, float]:
    """Return (max, mean) singular value over all min(rows, cols) values.

    Zeros count toward the mean.  Raises on an all-zero matrix, whose spread
    is undefined.
    """
    g = as_matrix(g, "g")
    if not np.any(g):
        raise ValueError("singular-value spread undefined for zero matrix")
    rows, cols = g.shape
    gram = g @ g.T if rows <= cols else g.T @ g
    sv = np.sqrt(np.maximum(sym_eigh(gram).eigenvalues, 0.0))
    return float(sv[0]), float(sv.mean())


def brute_force_whiten(g, cov, eps: float = 1e-12) -> np.ndarray:
    """Whiten a flattened gradient by cov^(-1/2) via full eigendecomposition.

    This is the oracle that Kronecker-factored preconditioning is compared
    against; cov must be the (mn x mn) covariance of sample gradients with
    mn <= 64 so the full decomposition stays cheap.  Eigenvalues are damped
    by max(lambda, eps) before the inverse square root.
    """
    vec = np.asarray(g, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"g must be a 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError("g contains non-finite entries")
    cov = _check_square(cov, "cov")
    if cov.shape[0] != vec.size:
        raise ValueError(
            f"cov shape {cov.shape} does not match vector length {vec.size}"
        )
    if vec.size > 64:
        raise ValueError(f"brute-force whitening limited to mn <= 64, got {vec.size}")
    eig = sym_eigh(cov)
    scale = float(np.max(np.abs(eig.eigenvalues))) if vec.size else 0.0
    if eig.eigenvalues[-1] < -1e-6 * scale:
        raise FloatingPointError("covariance has negative eigenvalue beyond tolerance")
    lam = np.maximum(eig.eigenvalues, eps)
    null = lam <= 0.0
    safe = np.where(null, 1.0, lam)
    coeff = np.where(null, 0.0, safe**-0.5)
    q = eig.eigenvectors
    return (q * coeff) @ (q.T @ vec)
