import math

import numpy as np
import pytest

from s4rec import ndtensor as nt
from s4rec.errors import ConfigError
from s4rec.intent import PrototypeBank
from s4rec.objectives import (HeadTailClassifier, LossWeights, adversarial_loss, combine,
                              contrastive_loss, distill_loss, mode_flags, next_item_loss,
                              next_item_targets, teacher_probs)
from oracles import unit_rows


def test_next_item_targets():
    ids = np.array([[0, 0, 3, 4, 5]])
    t, m = next_item_targets(ids)
    assert t.tolist() == [[0, 3, 4, 5, 0]]
    assert m.tolist() == [[False, False, True, True, False]]


def test_next_item_loss_uniform():
    n_items = 37
    table = nt.parameter(np.zeros((n_items + 2, 4)))
    hidden = nt.Tensor(np.random.default_rng(0).normal(size=(2, 3, 4)))
    mask = np.ones((2, 3), dtype=bool)
    loss = next_item_loss(hidden, np.full((2, 3), 5), mask, table, n_items)
    assert float(loss.data) == pytest.approx(math.log(n_items), abs=1e-12)


def test_next_item_loss_two_items():
    table = np.zeros((4, 2))
    table[1] = [1.0, 0.0]  # item 1 logit 1, item 2 logit 0
    hidden = nt.Tensor(np.array([[[1.0, 0.0]]]))
    loss = next_item_loss(hidden, np.array([[1]]), np.array([[True]]), nt.Tensor(table), 2)
    assert float(loss.data) == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert float(loss.data) == pytest.approx(0.3133, abs=1e-4)


def test_next_item_loss_limit():
    table = np.zeros((5, 2))
    table[2] = [1.0, 0.0]
    hidden = nt.Tensor(np.array([[[200.0, 0.0]]]))
    loss = next_item_loss(hidden, np.array([[2]]), np.array([[True]]), nt.Tensor(table), 3)
    assert float(loss.data) < 1e-30


def test_next_item_loss_ignores_pads():
    table = nt.Tensor(np.random.default_rng(0).normal(size=(7, 3)))
    h = np.random.default_rng(1).normal(size=(1, 3, 3))
    t = np.array([[0, 2, 3]])
    m = np.array([[False, True, True]])
    a = float(next_item_loss(nt.Tensor(h), t, m, table, 5).data)
    h[0, 0] = 1e6
    assert float(next_item_loss(nt.Tensor(h), t, m, table, 5).data) == a
    with pytest.raises(ValueError):
        next_item_loss(nt.Tensor(h), t, np.zeros_like(m), table, 5)


def test_contrastive_identical_views():
    z = nt.Tensor(np.tile(unit_rows(np.ones((1, 4))), (2, 1)))
    assert float(contrastive_loss(z, z, 0.1).data) == pytest.approx(math.log(3), abs=1e-12)


def test_contrastive_identical_views_general_b():
    z = nt.Tensor(np.tile(unit_rows(np.ones((1, 4))), (5, 1)))
    assert float(contrastive_loss(z, z, 0.7).data) == pytest.approx(math.log(9), abs=1e-12)


def test_contrastive_separation_limit():
    za = nt.Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert float(contrastive_loss(za, za, 0.1).data) < 1e-8


def test_contrastive_monotone_in_positive_similarity():
    # two pairs; negatives at fixed angle, positive angle shrinking
    vals = []
    for theta in np.linspace(1.2, 0.0, 7):
        za = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        zb = np.array([[math.cos(theta), 0.0, math.sin(theta)], [0.0, math.cos(theta), math.sin(theta)]])
        vals.append(float(contrastive_loss(nt.Tensor(za), nt.Tensor(zb), 0.5).data))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_contrastive_needs_pairs():
    with pytest.raises(ValueError):
        contrastive_loss(nt.Tensor(np.ones((1, 3))), nt.Tensor(np.ones((1, 3))), 0.1)


def bank(mu):
    b = PrototypeBank(*mu.shape, np.random.default_rng(0), dtype=np.float64)
    b.mu.data[...] = mu
    return b


def test_distill_self_entropy():
    rng = np.random.default_rng(0)
    b = bank(unit_rows(rng.normal(size=(5, 6))))
    z = nt.Tensor(unit_rows(rng.normal(size=(4, 6))))
    tail = np.ones(4, dtype=bool)
    loss = float(distill_loss(z, b, 0.5, 0.5, tail).data)
    t = teacher_probs(b.scores_array(z.data), 0.5)
    ent = float(-(t * np.log(t)).sum(axis=1).mean())
    assert loss == pytest.approx(ent, abs=1e-12) and loss >= 0


def test_distill_uniform_teacher():
    rng = np.random.default_rng(1)
    K = 128
    b = bank(unit_rows(rng.normal(size=(K, 8))))
    z = nt.parameter(unit_rows(rng.normal(size=(3, 8))))
    uniform = np.full((3, K), 1.0 / K)
    loss = distill_loss(z, b, 1e6, 1.0, np.ones(3, bool), teacher=uniform)
    assert float(loss.data) == pytest.approx(math.log(K), abs=1e-6)
    # gradient step on the student scores moves it toward uniform
    scores = nt.parameter(b.scores_array(z.data) / 0.1)
    g = nt.backward(nt.soft_cross_entropy(scores, uniform), [scores])[scores]
    p = np.exp(scores.data - scores.data.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    assert np.allclose(g, (p - uniform) / 3)


def test_distill_all_head_zero():
    rng = np.random.default_rng(2)
    b = bank(unit_rows(rng.normal(size=(4, 6))))
    z = nt.parameter(unit_rows(rng.normal(size=(3, 6))))
    loss = distill_loss(z, b, 0.1, 1.0, np.zeros(3, bool))
    assert float(loss.data) == 0.0


def test_distill_only_tail_rows_matter():
    rng = np.random.default_rng(3)
    b = bank(unit_rows(rng.normal(size=(4, 6))))
    z = unit_rows(rng.normal(size=(3, 6)))
    tail = np.array([True, False, True])
    a = float(distill_loss(nt.Tensor(z), b, 0.1, 1.0, tail).data)
    z[1] = unit_rows(rng.normal(size=(1, 6)))[0]
    assert float(distill_loss(nt.Tensor(z), b, 0.1, 1.0, tail).data) == pytest.approx(a, abs=1e-15)


def uniform_classifier(d):
    c = HeadTailClassifier(d, np.random.default_rng(0), np.float64)
    c.params["adv.w2"].data[...] = 0.0
    return c


def test_adversarial_uniform():
    z = nt.Tensor(np.random.default_rng(0).normal(size=(6, 8)))
    loss = adversarial_loss(z, np.array([0, 1, 1, 0, 1, 0]), uniform_classifier(8), 0.1)
    assert float(loss.data) == pytest.approx(math.log(2), abs=1e-12)


def test_adversarial_lambda_zero():
    rng = np.random.default_rng(4)
    z = nt.parameter(rng.normal(size=(5, 8)))
    c = HeadTailClassifier(8, rng, np.float64)
    loss = adversarial_loss(z, np.array([0, 1, 0, 1, 1]), c, 0.0)
    g = nt.backward(loss, [z] + list(c.params.values()))
    assert np.all(g[z] == 0.0)
    assert np.abs(g[c.params["adv.w2"]]).sum() > 0


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
def test_adversarial_reversal_equals_negated_identity(lam):
    rng = np.random.default_rng(5)
    z = nt.parameter(rng.normal(size=(5, 8)))
    c = HeadTailClassifier(8, rng, np.float64)
    y = np.array([0, 1, 0, 1, 1])
    g_rev = nt.backward(adversarial_loss(z, y, c, lam), [z])[z]
    g_id = nt.backward(adversarial_loss(z, y, c, lam, reverse=False), [z])[z]
    assert np.array_equal(g_rev, -lam * g_id)


def test_mode_flags():
    assert mode_flags("sr") == (False, False)
    assert mode_flags("sr_csd") == (True, False)
    assert mode_flags("sr_csd_gr") == (True, True)
    assert mode_flags("full") == (True, True)
    with pytest.raises(ConfigError):
        mode_flags("csd")


def scalar(v):
    return nt.parameter(np.array(v))


def test_combine_zero_weights_is_sr():
    terms = {k: scalar(v) for k, v in dict(l_sr=2.0, l_cluster=3.0, l_contrastive=4.0, l_distill=5.0).items()}
    w = LossWeights(alpha=0.0, beta1=0.0, beta2=0.0)
    assert float(combine(terms, w, "sr_csd").data) == 2.0
    assert float(combine(terms, LossWeights(), "sr").data) == 2.0


def test_combine_unit_weights_sum():
    terms = {k: scalar(v) for k, v in dict(l_sr=1.0, l_cluster=2.0, l_contrastive=3.0,
                                          l_distill=4.0, l_adv=0.5).items()}
    w = LossWeights(alpha=1.0, beta1=1.0, beta2=1.0)
    assert float(combine(terms, w, "full").data) == 10.5
    assert float(combine(terms, w, "sr_csd").data) == 10.0


def test_combine_linear_in_beta2():
    x = nt.parameter(np.array([0.3, -0.2]))
    terms = {"l_sr": nt.reduce_sum(nt.mul(x, x)), "l_distill": nt.reduce_sum(nt.exp(x))}
    base = nt.backward(combine(terms, LossWeights(beta2=0.0), "sr_csd"), [x])[x]
    g1 = nt.backward(combine(terms, LossWeights(beta2=0.2), "sr_csd"), [x])[x] - base
    g2 = nt.backward(combine(terms, LossWeights(beta2=0.4), "sr_csd"), [x])[x] - base
    assert np.allclose(g2, 2 * g1, rtol=1e-12)


def test_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(alpha=-1).validate()
    with pytest.raises(ConfigError):
        LossWeights(tau1=0).validate()
