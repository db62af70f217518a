"""Primary projection, orthogonal residual, and the strided dual-exchange
secondary basis.

The secondary basis b2 is never searched over freely: for each micro-block
it is b1 permuted by a strided pairing with per-pair sign flips, which keeps
<b1, b2> = 0 exactly in integer arithmetic regardless of the signs chosen.
The search only picks, per micro-block, the stride and the analytically
optimal signs that best align b2 with the local orthogonal residual.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class PrimaryProjection:
    """Nearest-lattice projection of one block plus its normalization."""

    b1_codes: np.ndarray
    s_norm: float
    b1_values: np.ndarray


@dataclass(frozen=True)
class MicroBlockBasis:
    """Chosen exchange for one micro-block.

    eta holds +1/-1 per pair (+1 encodes as bit 0 in the file format);
    alignment is the achieved inner product <b2_micro, r_micro>.
    """

    stride: int
    eta: np.ndarray
    pairing: tuple
    alignment: float


@dataclass(frozen=True)
class MacroBasis:
    micro: tuple
    b2_values: np.ndarray


@lru_cache(maxsize=None)
def _pairing_cached(G, s):
    visited = [False] * G
    pairs = []
    for start in range(G):
        if visited[start]:
            continue
        cycle = []
        k = start
        while not visited[k]:
            visited[k] = True
            cycle.append(k)
            k = (k + s) % G
        # Alternating edges along the cycle; an odd cycle leaves its last
        # visited index unpaired.
        for t in range(0, len(cycle) - 1, 2):
            pairs.append((cycle[t], cycle[t + 1]))
    return tuple(pairs)


def pairing_for_stride(G, s, allow_ragged=False):
    """Deterministic disjoint pairs (i, j=(i+s) mod G) covering {0..G-1}.

    Cycles of the permutation i -> i+s are walked from their smallest
    unvisited index taking alternating edges. For power-of-two G every
    cycle has even length and the result is a perfect matching. Ragged
    (odd or non-power-of-two) widths are only legal for the quantizer's
    tail blocks and may leave unpaired indices.
    """
    if G < 2:
        if allow_ragged:
            return ()
        raise DataError(f"pairing needs G >= 2, got {G}")
    if not allow_ragged and (G & (G - 1)) != 0:
        raise DataError(f"G must be a power of two, got {G}")
    if not 1 <= s <= G // 2:
        raise DataError(f"stride {s} out of range [1, {G // 2}]")
    return _pairing_cached(G, s)


def dual_exchange(v, pairing, eta):
    """Apply the pair swap [y_i, y_j] = [-eta*x_j, eta*x_i].

    Works elementwise on any numeric dtype (exact on integers). Unpaired
    indices produce 0, which preserves exact orthogonality.
    """
    v = np.asarray(v)
    out = np.zeros_like(v)
    for (i, j), e in zip(pairing, eta):
        out[i] = -e * v[j]
        out[j] = e * v[i]
    return out


def pair_terms(v, r, pairing):
    """t_p = x_i r_j - x_j r_i per pair; alignment of signs eta is sum(eta*t)."""
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if not pairing:
        return np.zeros(0)
    idx = np.asarray(pairing)
    return v[idx[:, 0]] * r[idx[:, 1]] - v[idx[:, 1]] * r[idx[:, 0]]


def optimal_signs(v, r, pairing):
    """Analytically optimal per-pair signs: eta* = sign(t), with t=0 -> +1.

    Returns (eta, t). The achieved alignment is sum |t|, the maximum of
    sum(eta*t) over all sign choices.
    """
    t = pair_terms(v, r, pairing)
    eta = np.where(t >= 0, 1, -1).astype(np.int8)
    return eta, t


def alignment_of(v, r, pairing, eta):
    """Alignment sum(eta_p * t_p), evaluated pairwise in pairing order."""
    t = pair_terms(v, r, pairing)
    return float((np.asarray(eta, dtype=np.float64) * t).sum())


def project_primary(w_proc, spec, s_norm=None):
    """Nearest-lattice codes of w_proc / s_norm.

    s_norm defaults to max|w_proc|; an all-zero block gets s_norm = 1.
    Values outside [-1, 1] after normalization are clamped by nearest().
    """
    w_proc = np.asarray(w_proc, dtype=np.float64)
    if not np.isfinite(w_proc).all():
        raise DataError("project_primary input contains NaN or infinite values")
    if s_norm is None:
        s_norm = float(np.abs(w_proc).max()) if w_proc.size else 0.0
    if s_norm <= 0:
        s_norm = 1.0
    codes = spec.nearest_codes(w_proc / s_norm)
    return PrimaryProjection(codes, float(s_norm), spec.values[codes])


def residual(w_proc, projection):
    """Gram-Schmidt residual r = w - (<w,b1>/||b1||^2) b1; r = w when b1 = 0."""
    w_proc = np.asarray(w_proc, dtype=np.float64)
    b1 = projection.b1_values
    nsq = float((b1 * b1).sum())
    if nsq == 0.0:
        return w_proc.copy()
    coef = float((w_proc * b1).sum()) / nsq
    return w_proc - coef * b1


def micro_slices(width, G):
    """Offsets of micro-blocks inside a macro-block of the given width."""
    return [(a, min(a + G, width)) for a in range(0, width, G)]


def search_basis(b1_values, r_perp, G, ops=None):
    """Reference per-block search: best (stride, signs) per micro-block.

    For each micro-block every stride in [1, g//2] is scored by the
    alignment sum|t| of its analytically optimal signs; the maximal stride
    wins, smallest stride on ties. ops, when given, is a one-element list
    accumulating the number of pair-term evaluations (complexity audit).
    """
    b1_values = np.asarray(b1_values, dtype=np.float64)
    r_perp = np.asarray(r_perp, dtype=np.float64)
    if b1_values.shape != r_perp.shape or b1_values.ndim != 1:
        raise DataError("b1 and residual must be equal-length vectors")
    micros = []
    b2 = np.zeros_like(b1_values)
    for a, b in micro_slices(len(b1_values), G):
        v = b1_values[a:b]
        r = r_perp[a:b]
        g = b - a
        best = None
        for s in range(1, g // 2 + 1):
            pairs = pairing_for_stride(g, s, allow_ragged=True)
            eta, t = optimal_signs(v, r, pairs)
            score = float(np.abs(t).sum())
            if ops is not None:
                ops[0] += len(pairs)
            if best is None or score > best[0]:
                best = (score, s, eta, pairs)
        if best is None:
            micros.append(MicroBlockBasis(1, np.zeros(0, dtype=np.int8), (), 0.0))
            continue
        score, s, eta, pairs = best
        micros.append(MicroBlockBasis(s, eta, pairs, score))
        b2[a:b] = dual_exchange(v, pairs, eta)
    return MacroBasis(tuple(micros), b2)


def search_micro_batch(X, R):
    """Vectorized search over M same-width micro-blocks.

    X, R: [M, g] arrays of b1 values and residuals. Returns
    (strides [M], eta [M, g//2] padded with +1, b2 [M, g]); equivalent to
    running search_basis micro-block by micro-block.
    """
    X = np.asarray(X, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    M, g = X.shape
    max_pairs = g // 2
    eta_out = np.ones((M, max_pairs), dtype=np.int8)
    b2 = np.zeros_like(X)
    if g < 2:
        return np.ones(M, dtype=np.uint8), eta_out, b2
    n_strides = g // 2
    scores = np.empty((n_strides, M))
    pair_arrays = []
    for s in range(1, n_strides + 1):
        P = np.asarray(pairing_for_stride(g, s, allow_ragged=True))
        pair_arrays.append(P)
        if P.size == 0:
            scores[s - 1] = 0.0
            continue
        T = X[:, P[:, 0]] * R[:, P[:, 1]] - X[:, P[:, 1]] * R[:, P[:, 0]]
        scores[s - 1] = np.abs(T).sum(axis=1)
    best = np.argmax(scores, axis=0)
    strides = (best + 1).astype(np.uint8)
    for si in range(n_strides):
        rows = np.nonzero(best == si)[0]
        P = pair_arrays[si]
        if rows.size == 0 or P.size == 0:
            continue
        xi = X[np.ix_(rows, P[:, 0])]
        xj = X[np.ix_(rows, P[:, 1])]
        ri = R[np.ix_(rows, P[:, 0])]
        rj = R[np.ix_(rows, P[:, 1])]
        T = xi * rj - xj * ri
        eta = np.where(T >= 0, 1, -1).astype(np.int8)
        eta_out[rows[:, None], np.arange(len(P))[None, :]] = eta
        b2[np.ix_(rows, P[:, 0])] = -eta * xj
        b2[np.ix_(rows, P[:, 1])] = eta * xi
    return strides, eta_out, b2


def apply_exchange_batch(X, strides, eta_bits):
    """Rebuild b2 for M same-width micro-blocks from stored metadata.

    X: [M, g] b1 values (float or exact ints; b2 inherits the dtype),
    strides: [M], eta_bits: [M, >= g//2] with 1 meaning a flipped pair.
    """
    X = np.asarray(X)
    M, g = X.shape
    b2 = np.zeros_like(X)
    if g < 2:
        return b2
    strides = np.asarray(strides)
    for s in np.unique(strides):
        rows = np.nonzero(strides == s)[0]
        P = np.asarray(pairing_for_stride(g, min(int(s), g // 2),
                                          allow_ragged=True))
        if P.size == 0:
            continue
        eta = 1 - 2 * np.asarray(eta_bits[np.ix_(rows, np.arange(len(P)))],
                                 dtype=X.dtype)
        b2[np.ix_(rows, P[:, 0])] = -eta * X[np.ix_(rows, P[:, 1])]
        b2[np.ix_(rows, P[:, 1])] = eta * X[np.ix_(rows, P[:, 0])]
    return b2


def build_b2(b1, width, G, strides, eta_bits):
    """Rebuild b2 for one row-block from stored (stride, sign) metadata.

    b1 may hold float values or exact int values; b2 inherits the dtype.
    eta_bits is [n_micro, G//2] with 1 meaning a flipped pair.
    """
    b1 = np.asarray(b1)
    b2 = np.zeros_like(b1)
    for mi, (a, b) in enumerate(micro_slices(width, G)):
        g = b - a
        if g < 2:
            continue
        s = int(strides[mi])
        pairs = pairing_for_stride(g, min(s, g // 2), allow_ragged=True)
        eta = 1 - 2 * np.asarray(eta_bits[mi][: len(pairs)], dtype=b1.dtype)
        b2[a:b] = dual_exchange(b1[a:b], pairs, eta)
    return b2
