import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acsbm.model import (LinkFunction, ModelSpec, ModelValidityError, SparsitySchedule,
                         SubcommunityIndex, boxplus, build_tilde_B, canonical_positions,
                         link_scale_matrix, load_model, model_from_dict, model_to_dict,
                         pair_probability, save_model, subcommunity_index,
                         subcommunity_unindex, validate_spec)

from conftest import DENSE_B, dense_spec, random_spec


# -- link functions -------------------------------------------------------------

@pytest.mark.parametrize("kind", ["identity", "log", "logit", "probit"])
def test_link_round_trip_on_probabilities(kind):
    link = LinkFunction.from_name(kind)
    p = np.linspace(1e-6, 1 - 1e-6, 501)
    np.testing.assert_allclose(link.inverse(link.forward(p)), p, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["identity", "log", "logit", "probit"])
def test_link_inverse_strictly_increasing(kind):
    x = np.linspace(-5, 0, 1001) if kind == "log" else np.linspace(-5, 5, 1001)
    if kind == "identity":
        x = np.linspace(0, 1, 1001)
    assert np.all(np.diff(LinkFunction.from_name(kind).inverse(x)) > 0)


def test_unknown_link():
    with pytest.raises(ValueError, match="unknown link"):
        LinkFunction.from_name("cloglog")


# -- boxplus ------------------------------------------------------------------------

def test_boxplus_scalars():
    assert boxplus([[2.5]], [[-1.0]]).tolist() == [[1.5]]


def test_boxplus_with_scalar_right():
    assert boxplus(np.eye(2), [[2.0]]).tolist() == [[3, 2], [2, 3]]


def test_boxplus_entrywise_formula(rng):
    A = rng.normal(size=(2, 2)); A = A + A.T
    B = rng.normal(size=(3, 3)); B = B + B.T
    out = boxplus(A, B)
    assert out.shape == (6, 6)
    for i, j, s, t in itertools.product(range(2), range(2), range(3), range(3)):
        assert out[i * 3 + s, j * 3 + t] == A[i, j] + B[s, t]
    np.testing.assert_array_equal(out, out.T)


def test_boxplus_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        boxplus(np.ones((2, 3)), np.eye(2))


# -- subcommunity indexing -------------------------------------------------------

def test_index_of_reference_cell():
    idx = SubcommunityIndex(3, (2, 4, 3))
    assert subcommunity_index(1, (1, 1, 1), idx) == 1


def test_index_direct_evaluation():
    idx = SubcommunityIndex(2, (2, 3))
    assert subcommunity_index(2, (2, 3), idx) == 12


def test_index_is_bijection_small():
    idx = SubcommunityIndex(2, (2, 2))
    images = [subcommunity_index(k, z, idx) for k in (1, 2) for z in itertools.product((1, 2), repeat=2)]
    assert sorted(images) == list(range(1, 9))


def test_index_bijection_exhaustive_large():
    idx = SubcommunityIndex(5, (4, 5, 3, 2, 4))  # 2400 cells
    seen = set()
    for k in range(1, idx.K + 1):
        for z in itertools.product(*(range(1, L + 1) for L in idx.levels)):
            seen.add(subcommunity_index(k, z, idx))
    assert seen == set(range(1, idx.size + 1))


def test_index_matches_closed_form():
    # independent evaluation of L~(k-1) + sum_m [prod_{m'>m} L_m'](z_m - 1) + z_M
    idx = SubcommunityIndex(3, (3, 2, 4))
    for k in range(1, 4):
        for z in itertools.product(range(1, 4), range(1, 3), range(1, 5)):
            expect = idx.L_tilde * (k - 1) + sum(
                math.prod(idx.levels[m + 1:]) * (z[m] - 1) for m in range(idx.M - 1)) + z[-1]
            assert subcommunity_index(k, z, idx) == expect


def test_vectorised_index_agrees(rng):
    idx = SubcommunityIndex(3, (2, 3))
    k = rng.integers(1, 4, 50)
    Z = np.column_stack([rng.integers(1, 3, 50), rng.integers(1, 4, 50)])
    expect = [subcommunity_index(int(a), b, idx) for a, b in zip(k, Z)]
    assert idx.index(k, Z).tolist() == expect


@pytest.mark.parametrize("k,z", [(0, (1, 1)), (3, (1, 1)), (1, (0, 1)), (1, (1, 4)), (1, (1,))])
def test_index_out_of_range(k, z):
    with pytest.raises(ValueError):
        subcommunity_index(k, z, SubcommunityIndex(2, (2, 3)))


def test_unindex_examples():
    assert subcommunity_unindex(1, SubcommunityIndex(4, (3, 3, 2))) == (1, (1, 1, 1))
    assert subcommunity_unindex(12, SubcommunityIndex(2, (2, 3))) == (2, (2, 3))


def test_unindex_round_trip_random_specs(rng):
    for _ in range(5):
        idx = SubcommunityIndex(int(rng.integers(1, 5)), tuple(int(v) for v in rng.integers(2, 5, rng.integers(1, 4))))
        for r in range(1, idx.size + 1):
            k, z = subcommunity_unindex(r, idx)
            assert subcommunity_index(k, z, idx) == r


@pytest.mark.parametrize("r", [0, 13])
def test_unindex_out_of_range(r):
    with pytest.raises(ValueError):
        subcommunity_unindex(r, SubcommunityIndex(2, (2, 3)))


@settings(max_examples=50, deadline=None)
@given(K=st.integers(1, 4), levels=st.lists(st.integers(2, 4), min_size=1, max_size=3), data=st.data())
def test_index_round_trip_property(K, levels, data):
    idx = SubcommunityIndex(K, tuple(levels))
    k = data.draw(st.integers(1, K))
    z = tuple(data.draw(st.integers(1, L)) for L in levels)
    assert subcommunity_unindex(subcommunity_index(k, z, idx), idx) == (k, z)


# -- tilde B ----------------------------------------------------------------------

def test_tilde_B_identity_link():
    spec = ModelSpec(1, (2,), [[0.2]], [0.1], "identity", "uniform")
    np.testing.assert_allclose(build_tilde_B(spec, 10, SparsitySchedule()), [[0.3, 0.2], [0.2, 0.3]],
                               rtol=0, atol=1e-15)


def test_tilde_B_log_link_multiplicative():
    spec = ModelSpec(1, (2,), [[math.log(0.1)]], [math.log(2)], "log", "uniform")
    np.testing.assert_allclose(build_tilde_B(spec, 10, SparsitySchedule()), [[0.2, 0.1], [0.1, 0.2]],
                               rtol=1e-14)


def test_tilde_B_log_link_kronecker():
    spec = dense_spec("log")
    expect = np.kron(np.kron(np.exp(DENSE_B), np.exp(-0.7 * np.eye(2))), np.exp(0.1 * np.eye(2)))
    np.testing.assert_allclose(build_tilde_B(spec, 100, SparsitySchedule()), expect, rtol=1e-12)


def test_tilde_B_entrywise_oracle_random(rng):
    for _ in range(30):
        spec = random_spec(rng)
        P = build_tilde_B(spec, 50, SparsitySchedule())
        idx = spec.index
        for r in range(1, idx.size + 1):
            k1, z1 = subcommunity_unindex(r, idx)
            for s in range(1, idx.size + 1):
                k2, z2 = subcommunity_unindex(s, idx)
                eta = spec.B[k1 - 1, k2 - 1] + sum(b for b, a, c in zip(spec.beta, z1, z2) if a == c)
                assert P[r - 1, s - 1] == pytest.approx(float(spec.link.inverse(eta)), abs=1e-15)


def test_log_link_scale_matrix_is_kronecker_of_exps(rng):
    for _ in range(20):
        spec = random_spec(rng, link="log")
        expect = np.exp(spec.B)
        for b, L in zip(spec.beta, spec.levels):
            expect = np.kron(expect, np.exp(b * np.eye(L)))
        np.testing.assert_allclose(np.exp(link_scale_matrix(spec)), expect, rtol=0, atol=1e-12)


def test_sparsity_log_link_scales_probabilities():
    from conftest import sparse_regular_spec
    spec = sparse_regular_spec()
    n = 4000
    alpha = n ** -0.8
    P = build_tilde_B(spec, n, SparsitySchedule(-0.8))
    np.testing.assert_allclose(P, alpha * np.exp(link_scale_matrix(spec)), rtol=1e-12)


def test_sparsity_identity_link_multiplies():
    spec = dense_spec("identity")
    dense = build_tilde_B(spec, 100, SparsitySchedule())
    np.testing.assert_allclose(build_tilde_B(spec, 100, SparsitySchedule(-0.5)), dense / 10, rtol=1e-14)


def test_sparse_spec_invalid_when_dense():
    from conftest import sparse_regular_spec
    spec = sparse_regular_spec()
    with pytest.raises(ModelValidityError, match="subcommunities"):
        build_tilde_B(spec, 10, SparsitySchedule(0.0))


def test_identity_link_out_of_range_names_pair():
    spec = ModelSpec(2, (2,), [[0.9, 0.1], [0.1, 0.2]], [0.2], "identity", "uniform")
    with pytest.raises(ModelValidityError, match=r"subcommunities 1=\(1, \(1,\)\)"):
        build_tilde_B(spec, 10, SparsitySchedule())


def test_pair_probability_matches_lookup(rng):
    spec = random_spec(rng, link="logit")
    P = build_tilde_B(spec, 7, SparsitySchedule())
    idx = spec.index
    assert pair_probability(spec, 1, (1,) * spec.M, 1, (1,) * spec.M) == P[0, 0]
    k2, z2 = subcommunity_unindex(idx.size, idx)
    assert pair_probability(spec, 1, (1,) * spec.M, k2, z2) == P[0, idx.size - 1]


def test_schedule_alpha():
    assert SparsitySchedule().alpha(1000) == 1.0
    assert SparsitySchedule(-0.5).alpha(100) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        SparsitySchedule(0.1)


# -- canonical positions -----------------------------------------------------------

def test_positions_rank_one():
    pos = canonical_positions([[0.5, 0.5], [0.5, 0.5]])
    assert pos.signature == (1, 0)
    np.testing.assert_allclose(pos.X, [[math.sqrt(0.5)], [math.sqrt(0.5)]], atol=1e-15)


def test_positions_indefinite():
    B = np.array([[0, 0.5], [0.5, 0]])
    pos = canonical_positions(B)
    assert pos.signature == (1, 1)
    np.testing.assert_allclose(pos.gram(), B, atol=1e-15)
    np.testing.assert_allclose(pos.X @ pos.I_pq @ pos.X.T, B, atol=1e-15)


def test_positions_gram_random_specs(rng):
    for _ in range(100):
        spec = random_spec(rng)
        P = build_tilde_B(spec, 100, SparsitySchedule())
        pos = canonical_positions(P)
        assert np.linalg.norm(pos.gram() - P) <= 1e-10
        assert sum(pos.signature) == pos.d


def test_positions_drop_zero_eigenvalues():
    # beta = 0 gives rank K
    spec = ModelSpec(2, (3,), [[-1, -2], [-2, -1]], [0.0], "log", "uniform")
    pos = canonical_positions(build_tilde_B(spec, 1, SparsitySchedule()))
    assert pos.d == 2


def test_positions_signs_descending():
    pos = canonical_positions(np.diag([0.1, 0.9, 0.3]) - 0.05)
    assert np.all(np.diff(pos.eigenvalues) <= 0)


# -- validation ---------------------------------------------------------------------

def test_validate_flags_probability_above_one():
    doc = {"K": 2, "levels": [2], "B": [[1.2, 0.1], [0.1, 0.3]], "beta": [0.0], "link": "identity"}
    report = validate_spec(doc)
    assert not report.ok
    assert report.range_violations[0][:2] == (1, 1)


def test_validate_dense_log_spec_clean():
    report = validate_spec(dense_spec("log"))
    assert report.ok and report.exp_B_full_rank and not report.pmf_gaps
    assert report.warnings() == []


def test_validate_pmf_gap():
    pmf = np.full(4, 1 / 3); pmf[2] = 0.0
    spec = ModelSpec(2, (2,), [[-1, -2], [-2, -1]], [0.3], "log", pmf)
    report = validate_spec(spec)
    assert report.pmf_gaps == [(2, (1,))]
    assert any("zero mass" in w for w in report.warnings())


def test_validate_rank_deficient_exp_B():
    report = validate_spec(ModelSpec(2, (2,), [[-1, -1], [-1, -1]], [0.3], "log", "uniform"))
    assert report.exp_B_full_rank is False and report.exp_B_rank == 1


# -- construction and serialisation -----------------------------------------------

def test_spec_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ModelSpec(2, (2,), [[0, 1], [2, 0]], [0.1], "logit", "uniform")
    with pytest.raises(ValueError):
        ModelSpec(2, (1,), np.zeros((2, 2)), [0.1], "logit", "uniform")
    with pytest.raises(ValueError):
        ModelSpec(2, (2,), np.zeros((2, 2)), [0.1], "logit", [0.5, 0.5, 0.5, -0.5])
    with pytest.raises(ValueError):
        ModelSpec(2, (2,), np.zeros((2, 2)), [0.1], "logit", [0.3, 0.3, 0.3, 0.3])
    with pytest.raises(ModelValidityError):
        ModelSpec(1, (2,), [[-0.1]], [0.05], "identity", "uniform")


def test_model_json_round_trip(tmp_path, rng):
    spec = random_spec(rng, link="probit")
    path = tmp_path / "m.json"
    save_model(path, spec, SparsitySchedule(-0.3))
    spec2, sched2 = load_model(path)
    assert sched2.exponent == -0.3
    np.testing.assert_array_equal(spec2.B, spec.B)
    np.testing.assert_array_equal(spec2.attribute_pmf, spec.attribute_pmf)
    assert spec2.link.kind == "probit" and spec2.levels == spec.levels


def test_model_json_uniform_keyword():
    doc = json.loads(json.dumps(model_to_dict(dense_spec())))
    assert doc["pmf"] == "uniform" and doc["alpha_exponent"] == 0.0
    spec, _ = model_from_dict(doc)
    assert spec.attribute_pmf.tolist() == [1 / 12] * 12
