import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointrx.ldpc import CodeConfig, ldpc_decode_bp, ldpc_encode, read_alist, syndrome, write_alist

CODE = CodeConfig.ieee80211n()
MICRO = CodeConfig.ieee80211n(lifting=10)
HAMMING = CodeConfig(H=np.array([[1, 1, 0, 1, 1, 0, 0],
                                 [1, 0, 1, 1, 0, 1, 0],
                                 [0, 1, 1, 1, 0, 0, 1]], dtype=np.uint8), name="hamming74")


def gf2_rank(A):
    A = A.copy() % 2
    r = 0
    for c in range(A.shape[1]):
        piv = np.nonzero(A[r:, c])[0]
        if piv.size == 0:
            continue
        A[[r, r + piv[0]]] = A[[r + piv[0], r]]
        for i in np.nonzero(A[:, c])[0]:
            if i != r:
                A[i] ^= A[r]
        r += 1
        if r == A.shape[0]:
            break
    return r


@pytest.mark.parametrize("code,n,k", [(CODE, 648, 486), (MICRO, 240, 180)])
def test_dimensions_and_full_rank(code, n, k):
    assert (code.n, code.k) == (n, k)
    assert code.rate == 0.75
    assert code.H.shape == (n - k, n)
    assert gf2_rank(code.H) == n - k


def test_all_zero_info_gives_all_zero_codeword():
    assert not ldpc_encode(np.zeros(CODE.k, np.uint8), CODE).any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_codewords_satisfy_parity_and_are_systematic(seed):
    u = np.random.default_rng(seed).integers(0, 2, (3, CODE.k), dtype=np.uint8)
    c = ldpc_encode(u, CODE)
    assert not syndrome(c, CODE).any()
    np.testing.assert_array_equal(c[:, CODE.info_positions], u)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 2, (2, CODE.k), dtype=np.uint8)
    c = ldpc_encode(a, CODE) ^ ldpc_encode(b, CODE)
    assert not syndrome(c, CODE).any()
    np.testing.assert_array_equal(c, ldpc_encode(a ^ b, CODE))


def test_encode_rejects_wrong_length():
    with pytest.raises(ValueError):
        ldpc_encode(np.zeros(CODE.k + 1, np.uint8), CODE)


def test_noiseless_decode_in_one_iteration():
    u = np.random.default_rng(1).integers(0, 2, (4, CODE.k), dtype=np.uint8)
    llr = 20.0 * (2.0 * ldpc_encode(u, CODE) - 1)
    bits, ok, iters = ldpc_decode_bp(llr, CODE, return_iterations=True)
    np.testing.assert_array_equal(bits, u)
    assert ok.all() and iters == 1


def test_erasure_does_not_converge():
    bits, ok, iters = ldpc_decode_bp(np.zeros(CODE.n), CODE, return_iterations=True)
    assert not ok and iters == CODE.max_iterations


def test_rejects_non_finite_llrs():
    llr = np.zeros(CODE.n)
    llr[3] = np.nan
    with pytest.raises(ValueError):
        ldpc_decode_bp(llr, CODE)


def ml_decode(llr, code):
    """Exhaustive maximum-likelihood decoding (short codes only)."""
    best, arg = -np.inf, None
    for u in itertools.product([0, 1], repeat=code.k):
        c = ldpc_encode(np.array(u, np.uint8), code)
        score = float(np.sum(np.where(c == 1, llr, 0.0)))
        if score > best:
            best, arg = score, np.array(u, np.uint8)
    return arg


@pytest.mark.parametrize("pos", range(7))
def test_single_weak_flip_is_corrected_like_ml(pos):
    u = np.array([1, 0, 1, 1], np.uint8)
    c = ldpc_encode(u, HAMMING)
    llr = 8.0 * (2.0 * c - 1)
    llr[pos] = -0.5 * np.sign(llr[pos])
    np.testing.assert_array_equal(ml_decode(llr, HAMMING), u)
    bits, ok = ldpc_decode_bp(llr, HAMMING)
    assert ok
    np.testing.assert_array_equal(bits, u)


def test_single_weak_flip_is_corrected_on_long_code():
    rng = np.random.default_rng(5)
    u = rng.integers(0, 2, CODE.k, dtype=np.uint8)
    llr = 10.0 * (2.0 * ldpc_encode(u, CODE) - 1)
    for pos in rng.choice(CODE.n, 10, replace=False):
        bad = llr.copy()
        bad[pos] = -0.3 * np.sign(bad[pos])
        bits, ok = ldpc_decode_bp(bad, CODE)
        assert ok
        np.testing.assert_array_equal(bits, u)


def test_alist_roundtrip(tmp_path):
    path = tmp_path / "code.alist"
    write_alist(MICRO.H, path)
    np.testing.assert_array_equal(read_alist(path), MICRO.H)
    again = CodeConfig.from_alist(path)
    assert (again.n, again.k) == (MICRO.n, MICRO.k)
