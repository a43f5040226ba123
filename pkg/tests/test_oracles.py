"""Serial oracles and generators, each checked against an independent computation."""
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fabsp.miniapps.common import (CsrPattern, assemble, digest, gen_er_matrix, gen_er_rows, gen_indices,
                                   gen_lower_graph_rows, gen_scrambled_triangular, partition)
from fabsp.miniapps.oracles import (is_permutation, is_unit_upper_triangular, serial_histogram,
                                    serial_permute, serial_randperm, serial_toposort, serial_transpose,
                                    triangles_brute_force, triangles_dense)


def dense(mat):
    a = np.zeros((mat.nrows, mat.ncols), dtype=np.int64)
    r, c = mat.entries()
    a[r, c] = 1
    return a


def from_dense(a):
    r, c = np.nonzero(a)
    return CsrPattern.from_entries(a.shape[0], a.shape[1], r, c)


def lower_from_edges(n, edges):
    r = [max(e) for e in edges]
    c = [min(e) for e in edges]
    return CsrPattern.from_entries(n, n, r, c)


matrices = st.integers(1, 12).flatmap(
    lambda n: st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n)
    .map(lambda es: CsrPattern.from_entries(n, n, *zip(*set(es))) if es else
         CsrPattern(n, n, np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))))


def test_histogram_oracle_matches_loop_replay():
    P, U, T = 3, 500, 7
    counts = [0] * (P * T)
    for r in range(P):
        for g in gen_indices(5, r, U, P * T).tolist():
            counts[g] += 1
    assert serial_histogram(5, P, U, T).tolist() == counts


def test_gen_indices_is_per_rank_and_deterministic():
    a = gen_indices(1, 0, 100, 50)
    assert np.array_equal(a, gen_indices(1, 0, 100, 50))
    assert not np.array_equal(a, gen_indices(1, 1, 100, 50))
    assert a.min() >= 0 and a.max() < 50
    assert len(gen_indices(1, 0, 0, 0)) == 0


@settings(max_examples=50, deadline=None)
@given(matrices)
def test_transpose_oracle_matches_dense(mat):
    assert np.array_equal(dense(serial_transpose(mat)), dense(mat).T)


@settings(max_examples=50, deadline=None)
@given(matrices, st.randoms())
def test_permute_oracle_matches_dense(mat, rnd):
    n = mat.nrows
    rp, cp = np.array(rnd.sample(range(n), n)), np.array(rnd.sample(range(n), n))
    a = dense(mat)
    b = np.zeros_like(a)
    for r in range(n):
        for c in range(n):
            b[rp[r], cp[c]] = a[r, c]
    assert np.array_equal(dense(serial_permute(mat, rp, cp)), b)


def test_transpose_examples():
    a = CsrPattern.from_entries(2, 2, [0, 0, 1], [0, 1, 1])
    assert serial_transpose(a) == CsrPattern.from_entries(2, 2, [0, 1, 1], [0, 0, 1])
    eye = from_dense(np.eye(5, dtype=int))
    assert serial_transpose(eye) == eye


@pytest.mark.parametrize("m", [1, 2, 17, 1000])
def test_serial_randperm_is_permutation(m):
    perm, rounds = serial_randperm(3, m, 200)
    assert is_permutation(perm, m) and rounds >= 1
    assert np.array_equal(perm, serial_randperm(3, m, 200)[0])


def test_serial_randperm_round_cap():
    with pytest.raises(RuntimeError):
        serial_randperm(0, 1000, 1)


@pytest.mark.parametrize("seed,n,z", [(0, 1, 3), (1, 10, 3), (2, 200, 10), (3, 500, 1)])
def test_scrambled_triangular_unscrambles(seed, n, z):
    mat, rp, cp = gen_scrambled_triangular(seed, n, z)
    inv_r, inv_c = np.argsort(rp), np.argsort(cp)
    assert is_unit_upper_triangular(mat, inv_r, inv_c)


@pytest.mark.parametrize("seed,n,z", [(0, 1, 3), (4, 50, 4), (5, 1000, 10)])
def test_serial_toposort_output_is_valid(seed, n, z):
    mat, _, _ = gen_scrambled_triangular(seed, n, z)
    rows, cols, complete = serial_toposort(mat)
    assert complete and is_unit_upper_triangular(mat, rows, cols)


def test_serial_toposort_identity_input():
    eye_plus = from_dense(np.triu(np.ones((4, 4), dtype=int)))
    rows, cols, complete = serial_toposort(eye_plus)
    assert complete and is_unit_upper_triangular(eye_plus, rows, cols)


def test_serial_toposort_stalls_on_full_block():
    full = from_dense(np.ones((2, 2), dtype=int))
    assert serial_toposort(full)[2] is False


def test_unit_upper_checker_rejects():
    m = from_dense(np.array([[1, 1], [0, 1]]))
    assert is_unit_upper_triangular(m, np.array([0, 1]), np.array([0, 1]))
    assert not is_unit_upper_triangular(m, np.array([1, 0]), np.array([0, 1]))
    assert not is_unit_upper_triangular(m, np.array([0, 0]), np.array([0, 1]))
    no_diag = from_dense(np.array([[0, 1], [0, 1]]))
    assert not is_unit_upper_triangular(no_diag, np.array([0, 1]), np.array([0, 1]))


def test_triangle_examples():
    k4 = lower_from_edges(4, list(combinations(range(4), 2)))
    assert triangles_dense(k4) == triangles_brute_force(k4) == 4
    p5 = lower_from_edges(5, [(i, i + 1) for i in range(4)])
    assert triangles_dense(p5) == triangles_brute_force(p5) == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 14).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                            .filter(lambda e: e[0] != e[1]), max_size=40))))
def test_dense_triangles_match_enumeration(args):
    n, edges = args
    edges = {(min(e), max(e)) for e in edges}
    assert triangles_dense(lower_from_edges(n, edges)) == triangles_brute_force(lower_from_edges(n, edges))


def test_generators_are_well_formed():
    for r in range(3):
        part = gen_er_rows(7, r, 3, 100, 10)
        part.check()
        low = gen_lower_graph_rows(7, r, 3, 100, 8)
        low.check()
        for l in range(low.nrows_local):
            assert np.all(low.row(l) < low.global_row(l))
    mat = gen_er_matrix(7, 3, 100, 10)
    assert 8 < mat.nnz / mat.nrows < 11


def test_partition_assemble_round_trip():
    mat = gen_er_matrix(2, 4, 25, 5)
    for P in (1, 3, 4, 7):
        assert assemble([partition(mat, r, P) for r in range(P)]) == mat


def test_digest_sensitivity():
    a = np.arange(5)
    assert digest(a) == digest(a.copy())
    assert digest(a) != digest(a[::-1])
    assert digest(a, 1) != digest(a, 2)
    assert digest(np.arange(2), np.arange(3)) != digest(np.arange(3), np.arange(2))
    assert 0 <= digest(a) < 2**64


def test_is_permutation():
    assert is_permutation(np.array([2, 0, 1]), 3)
    assert not is_permutation(np.array([0, 0, 1]), 3)
    assert not is_permutation(np.array([0, 1]), 3)
    assert is_permutation(np.array([], dtype=np.int64), 0)
