import math

import numpy as np
import pytest

from s4rec import ndtensor as nt
from s4rec.errors import ConfigError, NumericalError
from s4rec.intent import (PrototypeBank, assignment_probs, cluster_loss, hard_assignment,
                          sinkhorn_codes, sinkhorn_oracle)
from oracles import unit_rows


def bank_with(mu):
    b = PrototypeBank(mu.shape[0], mu.shape[1], np.random.default_rng(0), dtype=np.float64)
    b.mu.data[...] = mu
    return b


def test_scores_cosine_identity_and_orthogonal():
    mu = np.eye(3, 4)
    s = bank_with(mu).scores_array(np.eye(3, 4))
    assert np.allclose(np.diag(s), 1.0)
    assert np.allclose(s[~np.eye(3, dtype=bool)], 0.0)


def test_scores_bounded(rng):
    b = PrototypeBank(16, 32, rng, dtype=np.float64)
    s = b.assign_scores(nt.Tensor(unit_rows(rng.normal(size=(50, 32))))).data
    assert np.abs(s).max() <= 1 + 1e-6


def test_prototypes_unit_norm_after_renormalize(rng):
    b = PrototypeBank(8, 16, rng)
    b.mu.data *= 3.0
    b.renormalize()
    assert np.allclose(np.linalg.norm(b.mu.data, axis=1), 1.0, atol=1e-6)


def test_sinkhorn_symmetric_case():
    q = sinkhorn_codes(np.zeros((2, 2)))
    assert np.allclose(q, 0.5)


def test_sinkhorn_converges_to_identity():
    q = sinkhorn_oracle(np.array([[10.0, 0.0], [0.0, 10.0]]), eps=0.05)
    assert np.abs(q - np.eye(2)).max() < 1e-3
    q3 = sinkhorn_codes(np.array([[10.0, 0.0], [0.0, 10.0]]), 0.05, 50)
    assert np.abs(q3 - np.eye(2)).max() < 1e-3


def test_sinkhorn_rows_sum_to_one(rng):
    q = sinkhorn_codes(rng.uniform(-1, 1, size=(64, 8)))
    assert np.allclose(q.sum(axis=1), 1.0)


def test_oracle_marginals(rng):
    for _ in range(5):
        q = sinkhorn_oracle(unit_rows(rng.normal(size=(64, 16))) @ unit_rows(rng.normal(size=(8, 16))).T)
        assert np.abs(q.sum(axis=0) - 8.0).max() <= 1e-6
        assert np.abs(q.sum(axis=1) - 1.0).max() <= 1e-6


def test_more_iterations_move_toward_oracle(rng):
    s = unit_rows(rng.normal(size=(64, 16))) @ unit_rows(rng.normal(size=(8, 16))).T
    ref = sinkhorn_oracle(s)
    errs = [np.abs(sinkhorn_codes(s, 0.05, it) - ref).sum(axis=1).mean() for it in (1, 3, 20)]
    assert errs[0] > errs[1] > errs[2]


def test_sinkhorn_rejects_empty():
    with pytest.raises(ValueError):
        sinkhorn_codes(np.zeros((0, 3)))


def test_sinkhorn_non_finite_raises():
    with pytest.raises(NumericalError):
        sinkhorn_codes(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_cluster_loss_limit_zero():
    mu = np.eye(2, 4)
    b = bank_with(mu)
    z = nt.Tensor(np.eye(2, 4))
    codes = (np.eye(2), np.eye(2))
    loss, _, _ = cluster_loss(z, z, b, tau2=0.01, codes=codes)
    assert float(loss.data) < 1e-12


def test_cluster_loss_gibbs_bound(rng):
    b = PrototypeBank(6, 8, rng, dtype=np.float64)
    za = nt.Tensor(unit_rows(rng.normal(size=(10, 8))))
    zb = nt.Tensor(unit_rows(rng.normal(size=(10, 8))))
    loss, (qa, qb), _ = cluster_loss(za, zb, b, 0.1)

    def entropy(q):
        return -np.sum(q * np.log(np.clip(q, 1e-300, None))) / q.shape[0]
    assert float(loss.data) >= entropy(qa) + entropy(qb) - 1e-9


def test_cluster_loss_uniform_p():
    K = 128
    b = bank_with(np.tile(np.eye(1, 4), (K, 1)))  # identical prototypes -> uniform p
    z = nt.Tensor(unit_rows(np.random.default_rng(0).normal(size=(5, 4))))
    q = np.random.default_rng(1).dirichlet(np.ones(K), size=5)
    loss, _, _ = cluster_loss(z, z, b, 0.1, codes=(q, q))
    assert float(loss.data) == pytest.approx(2 * math.log(K), abs=1e-9)


def test_cluster_loss_codes_detached(rng):
    b = PrototypeBank(4, 8, rng, dtype=np.float64)
    za = nt.parameter(unit_rows(rng.normal(size=(6, 8))))
    zb = nt.parameter(unit_rows(rng.normal(size=(6, 8))))
    loss, codes, _ = cluster_loss(za, zb, b, 0.1)
    frozen, _, _ = cluster_loss(za, zb, b, 0.1, codes=codes)
    g1 = nt.backward(loss, [za, zb, b.mu])
    g2 = nt.backward(frozen, [za, zb, b.mu])
    for p in (za, zb, b.mu):
        assert np.array_equal(g1[p], g2[p])


def test_hard_assignment():
    assert hard_assignment(np.array([[0.1, 0.7, 0.2]]))[0] == 1
    assert hard_assignment(np.array([[0.5, 0.5]]))[0] == 0


def test_hard_assignment_scale_invariant(rng):
    s = rng.normal(size=(20, 5))
    a = hard_assignment(assignment_probs(s, 0.1))
    assert np.array_equal(a, hard_assignment(assignment_probs(3.7 * s, 0.1)))


def test_bank_validation(rng):
    with pytest.raises(ConfigError):
        PrototypeBank(0, 4, rng)
    with pytest.raises(ConfigError):
        PrototypeBank(3, 4, rng, eps=0.0)
