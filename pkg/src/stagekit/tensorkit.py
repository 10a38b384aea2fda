"""Dense-tensor kernel: mode-n unfolding and products, symmetric eigendecomposition.

Tensors are 64-bit real numpy arrays in row-major order throughout. The
eigensolver is a self-contained cyclic Jacobi iteration so that fitted
multilinear models are exactly reproducible run to run.
"""

import numpy as np


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding to a matrix of shape (shape[mode], rest).

    Columns enumerate the remaining modes in ascending order with the
    lowest-numbered mode varying slowest (row-major over the remaining axes).
    """
    x = np.asarray(x)
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode must be in [0, {x.ndim}), got {mode}")
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)


def fold(mat: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold` for the given full tensor shape."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode must be in [0, {len(shape)}), got {mode}")
    rest = [s for i, s in enumerate(shape) if i != mode]
    mat = np.asarray(mat)
    if mat.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix of shape {mat.shape} does not fold into {shape} along mode {mode}"
        )
    return np.moveaxis(mat.reshape([shape[mode]] + rest), 0, mode)


def mode_product(x: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``x`` along ``mode`` by the matrix ``u``.

    Equivalent to folding ``u @ unfold(x, mode)``; the result's shape equals
    ``x.shape`` with ``shape[mode]`` replaced by ``u.shape[0]``.
    """
    x = np.asarray(x)
    u = np.asarray(u)
    if u.ndim != 2:
        raise ValueError(f"mode_product needs a matrix, got ndim={u.ndim}")
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode must be in [0, {x.ndim}), got {mode}")
    if u.shape[1] != x.shape[mode]:
        raise ValueError(
            f"matrix with {u.shape[1]} columns cannot contract tensor mode {mode} "
            f"of size {x.shape[mode]}"
        )
    moved = np.moveaxis(x, mode, 0)
    out = np.tensordot(u, moved, axes=([1], [0]))
    return np.moveaxis(out, 0, mode)


def multi_mode_product(x: np.ndarray, mats, modes, transpose: bool = False) -> np.ndarray:
    """Apply :func:`mode_product` for each (matrix, mode) pair in sequence.

    With ``transpose=True`` each matrix is transposed first, which maps a
    projection back toward the original space when the rows are orthonormal.
    """
    out = np.asarray(x)
    for u, mode in zip(mats, modes):
        out = mode_product(out, u.T if transpose else u, mode)
    return out


_JACOBI_SWEEPS = 100
_JACOBI_TOL = 1e-12
_SYM_RTOL = 1e-10


def _offdiag_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def sym_eig_desc(a: np.ndarray):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Cyclic Jacobi rotations run until the off-diagonal Frobenius norm drops
    below 1e-12 of the input norm (at most 100 sweeps). Each eigenvector is
    signed so that its largest-magnitude entry (first such entry on ties) is
    positive, making the decomposition deterministic.

    Returns:
        (eigenvalues, eigenvectors): a 1-D array sorted descending and a
        matrix whose column ``i`` is the unit eigenvector for eigenvalue ``i``.

    Raises:
        ValueError: non-square input, or asymmetry above 1e-10 relative.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    norm = float(np.sqrt(np.sum(a * a)))
    asym = float(np.sqrt(np.sum((a - a.T) ** 2)))
    if asym > _SYM_RTOL * max(norm, 1.0):
        raise ValueError(
            f"matrix is not symmetric: asymmetry {asym:.3e} exceeds "
            f"{_SYM_RTOL:.0e} relative"
        )

    n = a.shape[0]
    work = (a + a.T) / 2.0
    vecs = np.eye(n)
    if n > 1 and norm > 0.0:
        tol = _JACOBI_TOL * norm
        for _ in range(_JACOBI_SWEEPS):
            if _offdiag_norm(work) < tol:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = work[p, q]
                    if apq == 0.0:
                        continue
                    tau = (work[q, q] - work[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                    else:
                        t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = t * c
                    col_p, col_q = work[:, p].copy(), work[:, q].copy()
                    work[:, p] = c * col_p - s * col_q
                    work[:, q] = s * col_p + c * col_q
                    row_p, row_q = work[p, :].copy(), work[q, :].copy()
                    work[p, :] = c * row_p - s * row_q
                    work[q, :] = s * row_p + c * row_q
                    work[p, q] = 0.0
                    work[q, p] = 0.0
                    vec_p, vec_q = vecs[:, p].copy(), vecs[:, q].copy()
                    vecs[:, p] = c * vec_p - s * vec_q
                    vecs[:, q] = s * vec_p + c * vec_q

    values = np.diag(work).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vecs = vecs[:, order]
    sign_at = np.argmax(np.abs(vecs), axis=0)
    flips = vecs[sign_at, np.arange(n)] < 0.0
    vecs[:, flips] *= -1.0
    return values, vecs
