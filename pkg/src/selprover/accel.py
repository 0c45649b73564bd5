"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Everything the prover does at scale reduces to a small algebra over dense
float64 matrices: Gaussian kernel tables, fused min-score fact sweeps, and
max-min (tropical-like) products used to compose proof branches.  Each kernel
here has two implementations selected by ``USE_NUMBA``:

* numba ``@njit`` loops (default when numba imports cleanly), and
* a vectorized numpy fallback, enabled by setting ``SELPROVER_NUMBA=0``.

Both paths produce identical results up to floating-point summation order;
``benchmarks/bench_kernels.py`` times them side by side.

Score convention used throughout: proof scores live in (0, 1], and 0.0 means
"no path".  Max-reductions therefore initialize to 0.0, and fused sweeps mark
dead entries with -1.0 so callers can distinguish them at any threshold.
"""

from __future__ import annotations

import math
import os

import numpy as np


def _env_wants_numba() -> bool:
    raw = os.environ.get("SELPROVER_NUMBA", "").strip().lower()
    if raw in ("0", "false", "no", "off"):
        return False
    return True


try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        return wrap

    prange = range  # type: ignore[assignment]

# Module-level switch, resolved once at import.  Tests flip it directly to
# exercise both paths in one process.
USE_NUMBA = HAVE_NUMBA and _env_wants_numba()


def set_threads(n: int) -> None:
    """Bound the numba thread pool. No-op on the numpy path."""
    if HAVE_NUMBA and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


# ---------------------------------------------------------------------------
# pairwise Gaussian kernel table
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _kernel_matrix_nb(A, B):  # pragma: no cover - compiled
    n = A.shape[0]
    m = B.shape[0]
    d = A.shape[1]
    out = np.empty((n, m))
    for i in prange(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                acc += diff * diff
            out[i, j] = math.exp(-acc)
    return out


def _kernel_matrix_np(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    out = np.empty((n, B.shape[0]))
    # chunk rows to keep the (chunk, m, d) temporary bounded
    step = max(1, int(4e6 // max(1, B.size)))
    for i0 in range(0, n, step):
        i1 = min(n, i0 + step)
        diff = A[i0:i1, None, :] - B[None, :, :]
        out[i0:i1] = np.exp(-np.einsum("ijk,ijk->ij", diff, diff))
    return out


def kernel_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """exp(-||a_i - b_j||^2) for every row pair. Shapes (n,d),(m,d) -> (n,m)."""
    A = _f64(np.atleast_2d(A))
    B = _f64(np.atleast_2d(B))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dim mismatch: {A.shape} vs {B.shape}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if USE_NUMBA:
        return _kernel_matrix_nb(A, B)
    return _kernel_matrix_np(A, B)


# ---------------------------------------------------------------------------
# fused fact sweep: min(prefix, pred-sim, arg sims) + threshold + bottleneck arg
# ---------------------------------------------------------------------------

_NO_ARG = np.zeros(0)


@njit(cache=True)
def _sweep_scores_nb(prefix, psim, a1sim, a2sim, has1, has2, threshold, exclude):  # pragma: no cover
    F = psim.shape[0]
    scores = np.empty(F)
    which = np.empty(F, np.int8)
    for f in range(F):
        if f == exclude:
            scores[f] = -1.0
            which[f] = -1
            continue
        best = prefix
        w = 0
        v = psim[f]
        if v < best:
            best = v
            w = 1
        if has1:
            v = a1sim[f]
            if v < best:
                best = v
                w = 2
        if has2:
            v = a2sim[f]
            if v < best:
                best = v
                w = 3
        if best < threshold:
            scores[f] = -1.0
            which[f] = -1
        else:
            scores[f] = best
            which[f] = w
    return scores, which


def _sweep_scores_np(prefix, psim, a1sim, a2sim, has1, has2, threshold, exclude):
    F = psim.shape[0]
    rows = [np.full(F, prefix), psim]
    rows.append(a1sim if has1 else np.full(F, np.inf))
    rows.append(a2sim if has2 else np.full(F, np.inf))
    stack = np.stack(rows)
    scores = stack.min(axis=0)
    which = stack.argmin(axis=0).astype(np.int8)  # argmin takes the first on ties
    dead = scores < threshold
    if 0 <= exclude < F:
        dead[exclude] = True
    scores[dead] = -1.0
    which[dead] = -1
    return scores, which


def sweep_scores(prefix: float, psim: np.ndarray, a1sim, a2sim,
                 threshold: float, exclude: int = -1):
    """Score one goal against a fact block in a single fused pass.

    ``psim`` holds the predicate-kernel value per fact; ``a1sim``/``a2sim``
    hold argument-kernel values, or None for a free-variable position (free
    variables bind strictly and contribute no kernel factor).  Returns
    ``(scores, which)`` where dead entries (below ``threshold`` or at index
    ``exclude``) score -1.0, and ``which`` marks the bottleneck factor:
    0 carried prefix, 1 predicate, 2 first argument, 3 second argument,
    with ties resolved toward the earliest factor.
    """
    psim = _f64(psim)
    has1 = a1sim is not None
    has2 = a2sim is not None
    a1 = _f64(a1sim) if has1 else _NO_ARG
    a2 = _f64(a2sim) if has2 else _NO_ARG
    fn = _sweep_scores_nb if USE_NUMBA else _sweep_scores_np
    return fn(float(prefix), psim, a1, a2, has1, has2, float(threshold), int(exclude))


# ---------------------------------------------------------------------------
# grouped max reductions
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scatter_max_nb(keys, vals, size):  # pragma: no cover - compiled
    out = np.zeros(size)
    for i in range(keys.shape[0]):
        v = vals[i]
        k = keys[i]
        if v > out[k]:
            out[k] = v
    return out


def _scatter_max_np(keys, vals, size):
    out = np.zeros(size)
    np.maximum.at(out, keys, vals)
    return out


def scatter_max(keys: np.ndarray, vals: np.ndarray, size: int) -> np.ndarray:
    """out[k] = max of vals where keys == k, 0.0 where a key never occurs."""
    keys = _i64(keys)
    vals = _f64(vals)
    fn = _scatter_max_nb if USE_NUMBA else _scatter_max_np
    return fn(keys, vals, int(size))


@njit(cache=True)
def _strict_group_nb(psim, soft_idx, grp_idx, Kc):  # pragma: no cover - compiled
    C = Kc.shape[0]
    F = psim.shape[0]
    out = np.zeros((C, C))
    for f in range(F):
        p = psim[f]
        s = soft_idx[f]
        z = grp_idx[f]
        for x in range(C):
            v = Kc[x, s]
            if p < v:
                v = p
            if v > out[x, z]:
                out[x, z] = v
    return out


def _strict_group_np(psim, soft_idx, grp_idx, Kc):
    C = Kc.shape[0]
    F = psim.shape[0]
    out = np.zeros((C, C))
    if F == 0:
        return out
    cand = np.minimum(psim[None, :], Kc[:, soft_idx])  # (C, F)
    rows = np.broadcast_to(np.arange(C)[:, None], (C, F))
    cols = np.broadcast_to(grp_idx[None, :], (C, F))
    np.maximum.at(out, (rows, cols), cand)
    return out


def strict_group(psim: np.ndarray, soft_idx: np.ndarray, grp_idx: np.ndarray,
                 Kc: np.ndarray) -> np.ndarray:
    """Fact table keyed by a strictly bound argument.

    out[x, z] = max over facts f with grp_idx[f] == z of
    min(psim[f], Kc[x, soft_idx[f]]).  Rows x range over candidate constants
    substituted into the soft position; columns z over the constants a free
    variable binds to.  Missing groups stay at 0.0.
    """
    fn = _strict_group_nb if USE_NUMBA else _strict_group_np
    return fn(_f64(psim), _i64(soft_idx), _i64(grp_idx), _f64(Kc))


# ---------------------------------------------------------------------------
# max-min products
# ---------------------------------------------------------------------------


@njit(cache=True)
def _maxmin_matvec_nb(M, v):  # pragma: no cover - compiled
    n = M.shape[0]
    m = M.shape[1]
    out = np.zeros(n)
    for i in range(n):
        best = 0.0
        for j in range(m):
            t = M[i, j]
            if v[j] < t:
                t = v[j]
            if t > best:
                best = t
        out[i] = best
    return out


def _maxmin_matvec_np(M, v):
    if M.shape[1] == 0:
        return np.zeros(M.shape[0])
    return np.maximum(np.minimum(M, v[None, :]).max(axis=1), 0.0)


def maxmin_matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """out[i] = max_j min(M[i,j], v[j]), floored at the no-path score 0.0."""
    fn = _maxmin_matvec_nb if USE_NUMBA else _maxmin_matvec_np
    return fn(_f64(M), _f64(v))


@njit(cache=True)
def _maxmin_vecmat_nb(v, M):  # pragma: no cover - compiled
    n = M.shape[0]
    m = M.shape[1]
    out = np.zeros(m)
    for i in range(n):
        vi = v[i]
        for j in range(m):
            t = M[i, j]
            if vi < t:
                t = vi
            if t > out[j]:
                out[j] = t
    return out


def _maxmin_vecmat_np(v, M):
    if M.shape[0] == 0:
        return np.zeros(M.shape[1])
    return np.maximum(np.minimum(v[:, None], M).max(axis=0), 0.0)


def maxmin_vecmat(v: np.ndarray, M: np.ndarray) -> np.ndarray:
    """out[j] = max_i min(v[i], M[i,j]), floored at 0.0."""
    fn = _maxmin_vecmat_nb if USE_NUMBA else _maxmin_vecmat_np
    return fn(_f64(v), _f64(M))


@njit(cache=True, parallel=True)
def _maxmin_matmat_nb(A, B):  # pragma: no cover - compiled
    n = A.shape[0]
    kk = A.shape[1]
    m = B.shape[1]
    out = np.zeros((n, m))
    for i in prange(n):
        row = np.zeros(m)
        for k in range(kk):
            a = A[i, k]
            for j in range(m):
                t = B[k, j]
                if a < t:
                    t = a
                if t > row[j]:
                    row[j] = t
        for j in range(m):
            out[i, j] = row[j]
    return out


def _maxmin_matmat_np(A, B):
    n, kk = A.shape
    m = B.shape[1]
    out = np.zeros((n, m))
    if kk == 0:
        return out
    step = max(1, int(4e6 // max(1, kk * m)))
    for i0 in range(0, n, step):
        i1 = min(n, i0 + step)
        out[i0:i1] = np.minimum(A[i0:i1, :, None], B[None, :, :]).max(axis=1)
    return np.maximum(out, 0.0)


def maxmin_matmat(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Max-min product: out[i,j] = max_k min(A[i,k], B[k,j]), floored at 0.0."""
    A = _f64(A)
    B = _f64(B)
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"inner dim mismatch: {A.shape} vs {B.shape}")
    fn = _maxmin_matmat_nb if USE_NUMBA else _maxmin_matmat_np
    return fn(A, B)


def warmup() -> None:
    """Trigger jit compilation of every kernel on tiny inputs."""
    if not USE_NUMBA:
        return
    E = np.zeros((2, 3))
    kernel_matrix(E, E)
    psim = np.array([0.5, 0.9])
    idx = np.array([0, 1])
    Kc = np.eye(2)
    sweep_scores(1.0, psim, psim, None, 0.1, -1)
    scatter_max(idx, psim, 2)
    strict_group(psim, idx, idx, Kc)
    maxmin_matvec(Kc, psim)
    maxmin_vecmat(psim, Kc)
    maxmin_matmat(Kc, Kc)
