"""Hot numeric kernels with two interchangeable backends.

The compiled (numba) backend is used by default when numba imports cleanly.
Set ``AISEVAL_BACKEND=numpy`` to force the pure-numpy/python fallback, or
``AISEVAL_BACKEND=numba`` to fail loudly if numba is unavailable.  The two
backends implement the same algorithms (the sampling path is bit-identical;
the weight reductions agree to floating-point roundoff) and every seeded run
is reproducible within a backend.  ``benchmarks/bench_kernels.py`` compares
their speed.
"""
from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("AISEVAL_BACKEND", "auto").lower()

if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(f"AISEVAL_BACKEND must be 'numba' or 'numpy', got {_REQUESTED!r}")

HAS_NUMBA = False
if _REQUESTED in ("auto", "numba"):
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise


# ---------------------------------------------------------------------------
# Pure implementations.  The numba branch compiles these same functions; the
# numpy branch keeps the loop versions only where no vectorization exists
# (alias table construction), and swaps in vectorized equivalents elsewhere.
# ---------------------------------------------------------------------------

def _alias_setup_loop(probs):
    # Walker's alias method: pair each under-full cell with an over-full one.
    n = probs.shape[0]
    q = np.zeros(n, dtype=np.float64)
    j = np.zeros(n, dtype=np.int64)
    smaller = np.empty(n, dtype=np.int64)
    larger = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for k in range(n):
        q[k] = n * probs[k]
        if q[k] < 1.0:
            smaller[ns] = k
            ns += 1
        else:
            larger[nl] = k
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        nl -= 1
        small = smaller[ns]
        large = larger[nl]
        j[small] = large
        q[large] = q[large] - (1.0 - q[small])
        if q[large] < 1.0:
            smaller[ns] = large
            ns += 1
        else:
            larger[nl] = large
            nl += 1
    # Leftovers are within rounding of 1; treat as certain.
    for k in range(ns):
        q[smaller[k]] = 1.0
    for k in range(nl):
        q[larger[k]] = 1.0
    return j, q


def _alias_draw_loop(j, q, u_cell, u_accept, out):
    n = u_cell.shape[0]
    m = q.shape[0]
    for i in range(n):
        cell = int(u_cell[i] * m)
        if cell >= m:
            cell = m - 1
        if u_accept[i] < q[cell]:
            out[i] = cell
        else:
            out[i] = j[cell]
    return out


def _det_weights_loop(gid, block, obs_label, norm, floored, post, out):
    # v(x) = sum_y max(|Dg l(x,y)|, eps*1{l!=0}) * pi(y|x); point-mass pi for
    # observed items, per-block posterior otherwise.
    m = gid.shape[0]
    n_class = norm.shape[1]
    for i in range(m):
        g = gid[i]
        y_obs = obs_label[i]
        if y_obs >= 0:
            a = norm[g, y_obs]
            b = floored[g, y_obs]
            out[i] = a if a > b else b
        else:
            k = block[i]
            acc = 0.0
            for y in range(n_class):
                a = norm[g, y]
                b = floored[g, y]
                t = a if a > b else b
                acc += t * post[k, y]
            out[i] = acc
    return out


def _stoch_weights_loop(gid, block, norm_sq, floored, pred, out):
    # v(x) = sqrt(sum_y max(|Dg l|^2, eps*1{l!=0}) * p_hat(y|k)).
    m = gid.shape[0]
    n_class = norm_sq.shape[1]
    for i in range(m):
        g = gid[i]
        k = block[i]
        acc = 0.0
        for y in range(n_class):
            a = norm_sq[g, y]
            b = floored[g, y]
            t = a if a > b else b
            acc += t * pred[k, y]
        out[i] = np.sqrt(acc)
    return out


def _simplex_mode_row(c_vec, x, floor):
    # Rowwise maximizer of sum c_i*log(x_i) over the floored simplex; see
    # oracle_model.simplex_modes for the reference (vectorized) version.
    b = c_vec.shape[0]
    active = np.empty(b, dtype=np.bool_)
    any_pos = False
    all_pos = True
    for i in range(b):
        active[i] = c_vec[i] > 0.0
        if active[i]:
            any_pos = True
        else:
            all_pos = False
    if all_pos:
        total = 0.0
        for i in range(b):
            total += c_vec[i]
        for i in range(b):
            x[i] = c_vec[i] / total
        return
    if not any_pos:
        top = 0
        best = c_vec[0]
        for i in range(1, b):
            if c_vec[i] > best:
                best = c_vec[i]
                top = i
        for i in range(b):
            active[i] = False
        active[top] = True
    for _ in range(b):
        cnt = 0
        total = 0.0
        for i in range(b):
            if active[i]:
                cnt += 1
                total += c_vec[i]
        budget = 1.0 - floor * (b - cnt)
        if total > 0.0:
            scale = budget / total
            for i in range(b):
                x[i] = c_vec[i] * scale if active[i] else floor
        else:
            for i in range(b):
                x[i] = budget if active[i] else floor
        newly = False
        for i in range(b):
            if active[i] and x[i] < floor:
                active[i] = False
                newly = True
        if not newly:
            break
    s = 0.0
    for i in range(b):
        if not active[i] or x[i] < floor:
            x[i] = floor
        s += x[i]
    for i in range(b):
        x[i] /= s


def _em_loop_impl(alpha, beta, obs_counts, unobs_counts, level_offsets,
                  branching, depth, theta, branch, psi, pi,
                  post_alpha, post_beta, tol, max_iter, floor):
    # Warm-started EM for the tree-structured label model: theta, branch,
    # psi, pi are updated in place and must enter mutually consistent.
    # Loop order mirrors the vectorized fallback so both backends agree to
    # roundoff.  Returns the number of iterations executed.
    C = theta.shape[0]
    K = obs_counts.shape[0]
    n_nodes = branch.shape[1]
    counts = np.empty((K, C))
    node_sums = np.empty((n_nodes, C))
    theta_old = np.empty(C)
    branch_old = np.empty((C, n_nodes))
    coef = np.empty(C)
    row = np.empty(branching)
    out_row = np.empty(branching)
    iters = 0
    for _ in range(max_iter):
        iters += 1
        # E-step: expected per-block class counts under the current fit.
        for k in range(K):
            for c in range(C):
                counts[k, c] = obs_counts[k, c] + unobs_counts[k] * pi[k, c]
        for c in range(C):
            s = 0.0
            for k in range(K):
                s += counts[k, c]
            post_alpha[c] = alpha[c] + s
        lo_leaf = level_offsets[depth]
        for k in range(K):
            for c in range(C):
                node_sums[lo_leaf + k, c] = counts[k, c]
        for level in range(depth - 1, -1, -1):
            lo = level_offsets[level]
            n_l = level_offsets[level + 1] - lo
            child_lo = level_offsets[level + 1]
            for g in range(n_l):
                for c in range(C):
                    s = 0.0
                    for j in range(branching):
                        s += node_sums[child_lo + g * branching + j, c]
                    node_sums[lo + g, c] = s
        for c in range(C):
            for v in range(n_nodes):
                post_beta[c, v] = beta[c, v] + node_sums[v, c]
        # M-step: per-node modes.
        for c in range(C):
            theta_old[c] = theta[c]
            for v in range(n_nodes):
                branch_old[c, v] = branch[c, v]
        for c in range(C):
            coef[c] = post_alpha[c] - 1.0
        _simplex_mode_row(coef, theta, floor)
        for level in range(1, depth + 1):
            lo = level_offsets[level]
            n_groups = (level_offsets[level + 1] - lo) // branching
            for c in range(C):
                for g in range(n_groups):
                    base = lo + g * branching
                    for j in range(branching):
                        row[j] = post_beta[c, base + j] - 1.0
                    _simplex_mode_row(row, out_row, floor)
                    for j in range(branching):
                        branch[c, base + j] = out_row[j]
        # Refresh psi (path products) and the per-block posterior.
        for c in range(C):
            for k in range(K):
                p = 1.0
                for level in range(1, depth + 1):
                    span = branching ** (depth - level)
                    node = level_offsets[level] + k // span
                    p *= branch[c, node]
                psi[c, k] = p
        for k in range(K):
            total = 0.0
            for c in range(C):
                pi[k, c] = psi[c, k] * theta[c]
                total += pi[k, c]
            if total <= 0.0:
                total = 1.0
            for c in range(C):
                pi[k, c] /= total
        delta = 0.0
        for c in range(C):
            d = abs(theta[c] - theta_old[c])
            if d > delta:
                delta = d
            for v in range(n_nodes):
                d = abs(branch[c, v] - branch_old[c, v])
                if d > delta:
                    delta = d
        if delta < tol:
            break
    return iters


def _det_weights_numpy(gid, block, obs_label, norm, floored, post, out):
    mx = np.maximum(norm, floored)
    v = np.einsum("ic,ic->i", mx[gid], post[block])
    observed = obs_label >= 0
    if observed.any():
        v[observed] = mx[gid[observed], obs_label[observed]]
    out[:] = v
    return out


def _stoch_weights_numpy(gid, block, norm_sq, floored, pred, out):
    mx = np.maximum(norm_sq, floored)
    np.sqrt(np.einsum("ic,ic->i", mx[gid], pred[block]), out=out)
    return out


def _alias_draw_numpy(j, q, u_cell, u_accept, out):
    m = q.shape[0]
    cell = (u_cell * m).astype(np.int64)
    np.clip(cell, 0, m - 1, out=cell)
    accept = u_accept < q[cell]
    out[:] = np.where(accept, cell, j[cell])
    return out


if HAS_NUMBA:
    BACKEND = "numba"
    alias_setup = njit(cache=True)(_alias_setup_loop)
    alias_draw = njit(cache=True)(_alias_draw_loop)
    det_weights = njit(cache=True)(_det_weights_loop)
    stoch_weights = njit(cache=True)(_stoch_weights_loop)
    _simplex_mode_row = njit(cache=True)(_simplex_mode_row)
    em_loop = njit(cache=True)(_em_loop_impl)
else:
    BACKEND = "numpy"
    alias_setup = _alias_setup_loop
    alias_draw = _alias_draw_numpy
    det_weights = _det_weights_numpy
    stoch_weights = _stoch_weights_numpy
    em_loop = None  # oracle_model falls back to its vectorized fit


class AliasSampler:
    """O(1)-per-draw sampler over a finite discrete distribution.

    Built once per stage from the proposal vector; draws consume two uniforms
    per sample from the caller's generator so that seeded runs are exactly
    reproducible under either backend.
    """

    def __init__(self, probs: np.ndarray):
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        total = probs.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("cannot build a sampler from a zero or non-finite mass vector")
        self.alias, self.accept = alias_setup(probs / total)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        if n == 0:
            return out
        u = rng.random(2 * n)
        return alias_draw(self.alias, self.accept, u[:n], u[n:], out)
