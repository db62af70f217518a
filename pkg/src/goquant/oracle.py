"""Brute-force verifiers.

These never reuse the analytical shortcuts they are meant to check: signs
and strides are enumerated exhaustively, and the least-squares oracle
solves the full normal equations without assuming orthogonality.
Candidate alignments are evaluated with the same pairwise formula the
analytical path uses (so equality checks are exact), and the winning
candidate is re-audited independently through dual_exchange.
"""

import numpy as np

from . import geometry
from .errors import DataError, NumericError

_EXHAUSTIVE_G_LIMIT = 16


def _check_g(G, big):
    if G > _EXHAUSTIVE_G_LIMIT and not big:
        raise DataError(
            f"exhaustive search over G={G} needs 2^{G // 2} candidates; "
            "pass big=True to allow it"
        )


def exhaustive_sign_search(v, r, stride, big=False):
    """Globally optimal signs for one pairing by full enumeration.

    Returns (eta, best_alignment). Ties resolve to the first candidate.
    """
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    G = len(v)
    _check_g(G, big)
    pairs = geometry.pairing_for_stride(G, stride, allow_ragged=True)
    t = geometry.pair_terms(v, r, pairs)
    P = len(pairs)
    codes = np.arange(1 << P, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(P)[None, :]) & 1
    candidates = (1 - 2 * bits).astype(np.float64)
    alignments = (candidates * t[None, :]).sum(axis=1)
    best = int(np.argmax(alignments)) if P else 0
    eta = candidates[best].astype(np.int8) if P else np.zeros(0, dtype=np.int8)
    value = float(alignments[best]) if P else 0.0
    # Independent audit: rebuild b2 and take the actual inner product.
    audit = float(np.dot(geometry.dual_exchange(v, pairs, eta), r))
    if abs(audit - value) > 1e-12 * max(1.0, abs(value)):
        raise NumericError("oracle self-audit failed: alignment mismatch")
    return eta, value


def exhaustive_stride_search(v, r, big=False):
    """Max over strides x sign patterns. Smallest stride wins ties."""
    v = np.asarray(v, dtype=np.float64)
    G = len(v)
    _check_g(G, big)
    best = None
    for s in range(1, G // 2 + 1):
        eta, value = exhaustive_sign_search(v, r, s, big=big)
        if best is None or value > best[2]:
            best = (s, eta, value)
    if best is None:
        return 1, np.zeros(0, dtype=np.int8), 0.0
    return best


def dense_lstsq_2col(M, y, lam=0.0):
    """Textbook normal-equations solve of min ||Mc - y||^2 + lam ||c||^2.

    Uses extended precision and the explicit 2x2 inverse, with no
    orthogonality shortcut. Singular unregularized systems raise.
    """
    M = np.asarray(M, dtype=np.longdouble)
    y = np.asarray(y, dtype=np.longdouble)
    if M.ndim != 2 or M.shape[1] != 2 or y.shape != (M.shape[0],):
        raise DataError("dense_lstsq_2col expects M [N x 2] and y [N]")
    lam = np.longdouble(lam)
    a = (M[:, 0] * M[:, 0]).sum() + lam
    b = (M[:, 0] * M[:, 1]).sum()
    d = (M[:, 1] * M[:, 1]).sum() + lam
    e1 = (M[:, 0] * y).sum()
    e2 = (M[:, 1] * y).sum()
    det = a * d - b * b
    if det <= np.finfo(np.longdouble).eps * max(a * d, b * b, np.longdouble(1e-300)):
        raise NumericError("singular normal equations; add regularization")
    c1 = (d * e1 - b * e2) / det
    c2 = (a * e2 - b * e1) / det
    return float(c1), float(c2)


def _random_block(rng, spec, G):
    codes = rng.integers(0, spec.n_codes, size=G)
    return spec.int_values[codes], spec.values[codes]


def _check_orthogonality(rng, n_trials, spec, G=32):
    failures = 0
    for _ in range(n_trials):
        v_int, _ = _random_block(rng, spec, G)
        s = int(rng.integers(1, G // 2 + 1))
        pairs = geometry.pairing_for_stride(G, s)
        eta = rng.choice([-1, 1], size=len(pairs))
        v_star = geometry.dual_exchange(v_int, pairs, eta)
        if int(np.dot(v_int.astype(np.int64), v_star.astype(np.int64))) != 0:
            failures += 1
    return failures


def _check_sign_optimality(rng, n_trials, inject_fault=None):
    failures = 0
    for G in (2, 4, 8):
        for trial in range(n_trials):
            v = rng.standard_normal(G)
            r = rng.standard_normal(G)
            for s in range(1, G // 2 + 1):
                pairs = geometry.pairing_for_stride(G, s)
                eta, t = geometry.optimal_signs(v, r, pairs)
                if inject_fault == "sign_flip" and len(t) and trial == 0:
                    eta = eta.copy()
                    eta[int(np.argmax(np.abs(t)))] *= -1
                analytical = geometry.alignment_of(v, r, pairs, eta)
                _, best = exhaustive_sign_search(v, r, s)
                if analytical != best:
                    failures += 1
    return failures


def _check_stride_search(rng, n_trials):
    failures = 0
    from .lattice import get_lattice

    spec = get_lattice("pot", 3)
    for _ in range(n_trials):
        _, v = _random_block(rng, spec, 16)
        w = rng.standard_normal(16)
        proj = geometry.project_primary(w, spec)
        r = geometry.residual(w, proj)
        basis = geometry.search_basis(proj.b1_values, r, 8)
        for mi, (a, b) in enumerate(geometry.micro_slices(16, 8)):
            s, eta, value = exhaustive_stride_search(proj.b1_values[a:b], r[a:b])
            micro = basis.micro[mi]
            if micro.stride != s or micro.alignment != value:
                failures += 1
    return failures


def _check_geo_vs_dense(rng, n_trials):
    from .lattice import get_lattice
    from .solver import solve_geo

    spec = get_lattice("pot", 3)
    worst = 0.0
    for _ in range(n_trials):
        w = rng.standard_normal(32)
        proj = geometry.project_primary(w, spec)
        r = geometry.residual(w, proj)
        basis = geometry.search_basis(proj.b1_values, r, 8)
        b1, b2 = proj.b1_values, basis.b2_values
        if not (b1 * b1).sum() or not (b2 * b2).sum():
            continue
        got = solve_geo(w, b1, b2)
        want = dense_lstsq_2col(np.column_stack([b1, b2]), w)
        num = np.hypot(got.c1 - want[0], got.c2 - want[1])
        den = max(np.hypot(*want), 1e-30)
        worst = max(worst, num / den)
    return worst


def _check_ref_vs_dense(rng, n_trials):
    from .solver import RefDesign, solve_ref

    worst = 0.0
    for _ in range(n_trials):
        A = rng.standard_normal((64, 2))
        y = rng.standard_normal(64)
        got = solve_ref(RefDesign(A, y, 1e-4))
        want = dense_lstsq_2col(A, y, 1e-4)
        num = np.hypot(got.c1 - want[0], got.c2 - want[1])
        den = max(np.hypot(*want), 1e-30)
        worst = max(worst, num / den)
    return worst


def _check_sign_optimality_at(rng, n_trials, G):
    failures = 0
    for _ in range(n_trials):
        v = rng.standard_normal(G)
        r = rng.standard_normal(G)
        for s in range(1, G // 2 + 1):
            pairs = geometry.pairing_for_stride(G, s)
            eta, _ = geometry.optimal_signs(v, r, pairs)
            analytical = geometry.alignment_of(v, r, pairs, eta)
            _, best = exhaustive_sign_search(v, r, s, big=True)
            if analytical != best:
                failures += 1
    return failures


def run_verification(big=False, inject_fault=None, seed=20240817,
                     exhaustive_g=None):
    """Run the oracle suite. Returns a list of (name, passed, detail).

    exhaustive_g adds a full sign enumeration at that micro-block size;
    big=True is shorthand for exhaustive_g=32 (2^16 candidates per stride).
    """
    from .lattice import get_lattice

    rng = np.random.default_rng(seed)
    results = []

    fails = _check_orthogonality(rng, 2000, get_lattice("pot", 3))
    fails += _check_orthogonality(rng, 500, get_lattice("pot", 4))
    results.append(("exact_orthogonality", fails == 0,
                    f"failures={fails}/2500"))

    fails = _check_sign_optimality(rng, 100, inject_fault=inject_fault)
    results.append(("sign_optimality_vs_exhaustive", fails == 0,
                    f"failures={fails}"))

    fails = _check_stride_search(rng, 100)
    results.append(("stride_search_vs_exhaustive", fails == 0,
                    f"failures={fails}"))

    worst = _check_geo_vs_dense(rng, 100)
    results.append(("geo_vs_dense_lstsq", bool(worst <= 1e-10),
                    f"worst_rel={worst:.3e}"))

    worst = _check_ref_vs_dense(rng, 100)
    results.append(("ref_vs_dense_ridge", bool(worst <= 1e-8),
                    f"worst_rel={worst:.3e}"))

    if big and exhaustive_g is None:
        exhaustive_g = 32
    if exhaustive_g is not None:
        n = 3 if exhaustive_g > 16 else 25
        fails = _check_sign_optimality_at(rng, n, exhaustive_g)
        results.append((f"sign_optimality_g{exhaustive_g}_exhaustive",
                        fails == 0, f"failures={fails}"))
    return results
