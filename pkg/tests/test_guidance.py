import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from prgssl import guidance as gd
from prgssl.errors import DegenerateProductError, InvalidParameterError


def normalize_oracle(w, p):
    q = [a * b for a, b in zip(w, p)]
    s = sum(q)
    return [v / s for v in q]


def transition_oracle(C, alpha):
    k = len(C)
    H = []
    for i, row in enumerate(C):
        s = sum(row)
        out = [(v / s if s > 0 else 1.0 / (k - 1)) for v in row]
        out[i] = alpha / (k - 1)
        H.append(out)
    return H


# --- build_transition_matrix ------------------------------------------------

def test_transition_two_classes():
    H = gd.build_transition_matrix([[0, 3], [1, 0]], 1.0)
    assert H.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_transition_zero_matrix():
    H = gd.build_transition_matrix(np.zeros((3, 3)), 0.0)
    assert np.allclose(H, [[0, .5, .5], [.5, 0, .5], [.5, .5, 0]], atol=0)


def test_transition_mixed_rows():
    C = [[0, 4, 0], [0, 0, 0], [2, 2, 0]]
    H = gd.build_transition_matrix(C, 1.0)
    assert H.tolist() == [[.5, 1, 0], [.5, .5, .5], [.5, .5, .5]]
    assert np.allclose(H, transition_oracle(C, 1.0), atol=0)


def test_transition_rejects():
    with pytest.raises(InvalidParameterError):
        gd.build_transition_matrix([[0, 1], [1, 0]], -0.1)
    with pytest.raises(InvalidParameterError):
        gd.build_transition_matrix([[1, 1], [1, 0]], 1.0)


@given(arrays(np.int64, st.tuples(st.integers(2, 8)).map(lambda t: (t[0], t[0])),
              elements=st.integers(0, 50)),
       st.floats(0, 10))
def test_transition_invariants(C, alpha):
    np.fill_diagonal(C, 0)
    H = gd.build_transition_matrix(C, alpha)
    k = len(C)
    assert np.all(np.diag(H) == alpha / (k - 1))
    off = H.sum(axis=1) - np.diag(H)
    assert np.allclose(off, 1.0, atol=1e-9)
    assert np.allclose(H, transition_oracle(C.tolist(), alpha), atol=1e-12)


def test_renormalize_rows_switch():
    H = gd.build_transition_matrix([[0, 1, 1], [1, 0, 1], [1, 1, 0]], 2.0, renormalize_rows=True)
    assert np.allclose(H.sum(axis=1), 1.0)
    assert np.allclose(np.diag(H), 0.5)


# --- class_rescale ----------------------------------------------------------

def test_class_rescale_basic():
    Hp = gd.class_rescale([[1.0, 1.0], [1.0, 1.0]], [30, 10])
    assert np.allclose(Hp[0], [4 / 3, 4], rtol=1e-15)


def test_class_rescale_clamps_zero_counts():
    Hp = gd.class_rescale([[1.0, 1.0], [1.0, 1.0]], [5, 0])
    assert np.allclose(Hp[0], [1.2, 6.0], rtol=1e-15)


def test_class_rescale_uniform_cancels():
    rng = np.random.default_rng(0)
    H = gd.build_transition_matrix(np.triu(rng.integers(0, 5, (4, 4)), 1), 1.0)
    Hp = gd.class_rescale(H, [7, 7, 7, 7])
    assert np.allclose(Hp, 4 * H)
    p = rng.dirichlet(np.ones(4))
    assert np.allclose(gd.prg_rescale(p, 2, Hp), gd.prg_rescale(p, 2, H), atol=1e-12)


def test_class_rescale_keeps_support():
    H = gd.build_transition_matrix([[0, 2, 0], [1, 0, 1], [0, 0, 0]], 1.0)
    Hp = gd.class_rescale(H, [100, 0, 3])
    assert np.array_equal(Hp > 0, H > 0)


# --- prg_rescale ------------------------------------------------------------

def test_prg_constant_row():
    p = np.array([0.2, 0.5, 0.3])
    Hp = np.full((3, 3), 2.5)
    assert np.allclose(gd.prg_rescale(p, 1, Hp), p, atol=1e-15)


def test_prg_worked_example():
    Hp = np.array([[1, 0.5, 2], [1, 1, 1], [1, 1, 1]])
    out = gd.prg_rescale([0.6, 0.3, 0.1], 0, Hp)
    assert np.allclose(out, normalize_oracle([1, 0.5, 2], [0.6, 0.3, 0.1]), atol=1e-15)
    assert np.allclose(out, [0.63158, 0.15789, 0.21053], atol=1e-5)


def test_prg_one_hot():
    Hp = np.array([[1, 3], [0.5, 2]])
    assert gd.prg_rescale([0.0, 1.0], 0, Hp).tolist() == [0.0, 1.0]


def test_prg_steps_uses_matrix_power():
    Hp = np.array([[1.0, 2.0], [0.5, 1.0]])
    p = np.array([0.3, 0.7])
    H3 = Hp @ Hp @ Hp
    assert np.allclose(gd.prg_rescale(p, 1, Hp, steps=3), normalize_oracle(H3[1], p))


def test_prg_degenerate():
    Hp = np.array([[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(DegenerateProductError):
        gd.prg_rescale([0.0, 1.0], 0, Hp)
    assert gd.prg_rescale([0.0, 1.0], 0, Hp, on_degenerate="fallback").tolist() == [0.0, 1.0]
    out, bad = gd.prg_rescale_batch(np.array([[0.0, 1.0], [0.5, 0.5]]), [0, 0], Hp)
    assert bad.tolist() == [True, False]
    assert out[0].tolist() == [0.0, 1.0]


def test_prg_rejects_bad_guide():
    with pytest.raises(InvalidParameterError):
        gd.prg_rescale([0.5, 0.5], 2, np.ones((2, 2)))
    with pytest.raises(InvalidParameterError):
        gd.prg_rescale([0.5, 0.5], 0, np.ones((2, 2)), steps=0)


def test_batch_matches_scalar():
    rng = np.random.default_rng(1)
    k = 6
    Hp = rng.random((k, k))
    P = rng.dirichlet(np.ones(k), size=50)
    guide = rng.integers(0, k, 50)
    out, bad = gd.prg_rescale_batch(P, guide, Hp)
    assert not bad.any()
    for b in range(50):
        assert np.allclose(out[b], gd.prg_rescale(P[b], int(guide[b]), Hp), atol=1e-15)


prob = st.integers(2, 12).flatmap(
    lambda k: arrays(np.float64, k, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-3))


@settings(max_examples=300)
@given(prob, st.data())
def test_prg_simplex_and_support(p, data):
    p = p / p.sum()
    k = len(p)
    Hp = data.draw(arrays(np.float64, (k, k), elements=st.floats(0.01, 100)))
    g = data.draw(st.integers(0, k - 1))
    out = gd.prg_rescale(p, g, Hp)
    assert np.all(out >= 0) and abs(out.sum() - 1) <= 1e-9
    assert np.all(out[p == 0] == 0)


def test_alpha_monotone():
    rng = np.random.default_rng(2)
    C = rng.integers(0, 5, (5, 5))
    np.fill_diagonal(C, 0)
    p = rng.dirichlet(np.ones(5))
    g = int(np.argmax(p))
    vals = [gd.prg_rescale(p, g, gd.class_rescale(gd.build_transition_matrix(C, a), [3, 4, 5, 6, 7]))[g]
            for a in (0.0, 0.5, 1.0, 2.0, 10.0)]
    assert all(x < y for x, y in zip(vals, vals[1:]))


# --- eta family -------------------------------------------------------------

def test_eta_identity():
    p = np.array([0.1, 0.2, 0.7])
    assert np.allclose(gd.eta_rescale(p, gd.RectifyingWeights(np.ones(3))), p)


def test_eta_uniform_scaling():
    assert np.allclose(gd.eta_rescale([0.3, 0.7], gd.RectifyingWeights(np.array([2.0, 2.0]))), [0.3, 0.7])


def test_eta_support_restriction():
    assert gd.eta_rescale([0.4, 0.6], gd.RectifyingWeights(np.array([1.0, 0.0]))).tolist() == [1.0, 0.0]


def test_eta_excluded_passthrough():
    assert gd.eta_rescale([0.4, 0.6], gd.RectifyingWeights(np.zeros(2), True)) is None


def test_confidence_eta_accepts():
    w = gd.confidence_eta([0.97, 0.03], 0.95)
    assert not w.excluded
    assert np.allclose(w.eta, [1 / 0.97, 0])
    assert np.allclose(gd.eta_rescale([0.97, 0.03], w), [1, 0])


def test_confidence_eta_rejects():
    w = gd.confidence_eta([0.6, 0.4], 0.95)
    assert w.excluded and not w.eta.any()


def test_confidence_eta_tie():
    w = gd.confidence_eta([0.5, 0.5], 0.5)
    assert w.eta.tolist() == [2.0, 0.0]


def test_distribution_alignment_eta():
    assert np.allclose(gd.distribution_alignment_eta([0.2, 0.8], [0.2, 0.8]).eta, 1.0)
    assert np.allclose(gd.distribution_alignment_eta([0.5, 0.5], [0.8, 0.2]).eta, [0.625, 2.5])
    assert np.allclose(gd.distribution_alignment_eta([1, 0], [0.5, 0.5]).eta, [2, 0])
    assert np.isfinite(gd.distribution_alignment_eta([0.5, 0.5], [1.0, 0.0]).eta).all()


# --- gradient identity ------------------------------------------------------

def ce_of_logits(o, target):
    o = o - o.max()
    logp = o - np.log(np.exp(o).sum())
    return -np.sum(target * logp)


def fd_grad(o, target, h=1e-5):
    g = np.zeros_like(o)
    for c in range(len(o)):
        e = np.zeros_like(o)
        e[c] = h
        g[c] = (ce_of_logits(o + e, target) - ce_of_logits(o - e, target)) / (2 * h)
    return g


def test_gradient_stationary():
    p = np.array([0.2, 0.8])
    assert not gd.rescaled_ce_gradient(p, p).any()


def test_gradient_two_classes():
    p, pt = np.array([0.5, 0.5]), np.array([0.8, 0.2])
    assert np.allclose(gd.rescaled_ce_gradient(p, pt), [-0.3, 0.3])
    assert np.allclose(fd_grad(np.log(p), pt), [-0.3, 0.3], atol=1e-8)


def test_gradient_factored_form_agrees():
    rng = np.random.default_rng(4)
    for _ in range(200):
        k = int(rng.integers(2, 10))
        C = rng.integers(0, 6, (k, k))
        np.fill_diagonal(C, 0)
        L = rng.integers(0, 30, k)
        H = gd.build_transition_matrix(C, rng.uniform(0, 3))
        p = rng.dirichlet(np.ones(k))
        g = int(np.argmax(p))
        pt = gd.prg_rescale(p, g, gd.class_rescale(H, L))
        assert np.allclose(gd.rescaled_ce_gradient_factored(p, H[g], L),
                           gd.rescaled_ce_gradient(p, pt), atol=1e-12)
