"""The brute-force oracles and the bundled verification suite."""

import numpy as np
import pytest

from goquant.errors import DataError, NumericError
from goquant.geometry import (alignment_of, optimal_signs, pairing_for_stride,
                              search_basis)
from goquant.oracle import (dense_lstsq_2col, exhaustive_sign_search,
                            exhaustive_stride_search, run_verification)


class TestExhaustiveSignSearch:
    def test_two_element_block(self):
        # single pair: t = v0*r1 - v1*r0 = 2*1 - 1*(-3) = 5 > 0 -> eta +1
        eta, value = exhaustive_sign_search(
            np.array([2.0, 1.0]), np.array([-3.0, 1.0]), 1
        )
        assert eta.tolist() == [1]
        assert value == 5.0

    def test_enumerates_true_optimum(self):
        rng = np.random.default_rng(0)
        v, r = rng.standard_normal((2, 8))
        pairs = pairing_for_stride(8, 3)
        _, value = exhaustive_sign_search(v, r, 3)
        # worst sign pattern is the mirror image; optimum dominates both
        eta_any = np.ones(len(pairs), dtype=np.int8)
        assert value >= alignment_of(v, r, pairs, eta_any)
        assert value >= alignment_of(v, r, pairs, -eta_any)

    def test_matches_analytical(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v, r = rng.standard_normal((2, 16))
            for s in range(1, 9):
                pairs = pairing_for_stride(16, s)
                eta, _ = optimal_signs(v, r, pairs)
                want = alignment_of(v, r, pairs, eta)
                _, got = exhaustive_sign_search(v, r, s)
                assert got == want  # bit-exact, not approximate

    def test_big_gate(self):
        v = np.zeros(32)
        with pytest.raises(DataError):
            exhaustive_sign_search(v, v, 1)
        eta, value = exhaustive_sign_search(v, v, 1, big=True)
        assert value == 0.0

    def test_ragged_block(self):
        v = np.array([1.0, 2.0, 3.0])
        r = np.array([0.5, -0.5, 1.0])
        eta, value = exhaustive_sign_search(v, r, 1)
        assert len(eta) == 1  # one pair, one unpaired index
        assert value == abs(1.0 * -0.5 - 2.0 * 0.5)


class TestExhaustiveStrideSearch:
    def test_agrees_with_search_basis(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            v, r = rng.standard_normal((2, 8))
            s, _, value = exhaustive_stride_search(v, r)
            basis = search_basis(v, r, 8)
            assert s == basis.micro[0].stride
            assert value == basis.micro[0].alignment

    def test_smallest_stride_on_tie(self):
        s, _, value = exhaustive_stride_search(np.ones(4), np.zeros(4))
        assert s == 1 and value == 0.0


class TestDenseLstsq:
    def test_matches_numpy_lstsq(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((64, 2))
        y = rng.standard_normal(64)
        got = dense_lstsq_2col(M, y)
        want, *_ = np.linalg.lstsq(M, y, rcond=None)
        assert np.allclose(got, want, rtol=1e-10)

    def test_ridge_matches_augmented_lstsq(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((32, 2))
        y = rng.standard_normal(32)
        lam = 1e-2
        # ridge as least squares on rows augmented with sqrt(lam) I
        M_aug = np.vstack([M, np.sqrt(lam) * np.eye(2)])
        y_aug = np.concatenate([y, [0.0, 0.0]])
        want, *_ = np.linalg.lstsq(M_aug, y_aug, rcond=None)
        assert np.allclose(dense_lstsq_2col(M, y, lam), want, rtol=1e-10)

    def test_singular_raises(self):
        col = np.ones((6, 1))
        with pytest.raises(NumericError):
            dense_lstsq_2col(np.hstack([col, col]), np.arange(6.0))

    def test_shape_validation(self):
        with pytest.raises(DataError):
            dense_lstsq_2col(np.ones((4, 3)), np.ones(4))


class TestRunVerification:
    def test_all_checks_pass(self):
        results = run_verification()
        assert len(results) >= 5
        assert all(ok for _, ok, _ in results), results

    def test_check_names_stable(self):
        names = [name for name, _, _ in run_verification()]
        assert names == [
            "exact_orthogonality",
            "sign_optimality_vs_exhaustive",
            "stride_search_vs_exhaustive",
            "geo_vs_dense_lstsq",
            "ref_vs_dense_ridge",
        ]

    def test_injected_fault_is_caught(self):
        results = run_verification(inject_fault="sign_flip")
        by_name = {name: ok for name, ok, _ in results}
        assert by_name["sign_optimality_vs_exhaustive"] is False
        # the fault is scoped to one check
        assert by_name["exact_orthogonality"] is True
        assert by_name["geo_vs_dense_lstsq"] is True

    def test_exhaustive_g_appends_check(self):
        results = run_verification(exhaustive_g=4)
        assert results[-1][0] == "sign_optimality_g4_exhaustive"
        assert results[-1][1] is True

    def test_deterministic(self):
        a = run_verification(seed=7)
        b = run_verification(seed=7)
        assert a == b
