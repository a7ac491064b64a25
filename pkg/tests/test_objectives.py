import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from star_zsl import tensor as T
from star_zsl.errors import ContractError, DimensionError
from star_zsl.objectives import LossWeights, gce, mpce, sce, total
from star_zsl.tensor import Parameter, Tensor


def naive_ce(logits, target):
    top = max(logits)
    return -(logits[target] - top - math.log(sum(math.exp(v - top) for v in logits)))


def naive_mpce(parts, f_si, labels, known):
    b, k, _ = parts.shape
    acc = 0.0
    for i in range(b):
        for e in range(k):
            logits = [float(parts[i, e] @ f_si[e, a]) for a in known]
            acc += naive_ce(logits, known.index(labels[i]))
    return acc / (b * k)


def naive_sce(f_si, f_cn):
    k, a, _ = f_si.shape
    acc = 0.0
    for e in range(k):
        for c in range(a):
            acc += naive_ce([float(f_si[e, c] @ f_cn[j]) for j in range(a)], c)
    return acc / (k * a)


def naive_gce(f_v, labels, f_cn, known):
    acc = 0.0
    for i in range(f_v.shape[0]):
        acc += naive_ce([float(f_v[i] @ f_cn[a]) for a in known], known.index(labels[i]))
    return acc / f_v.shape[0]


def _logit_vectors(logits):
    """Latent/embedding pairs whose dot products are exactly ``logits``."""
    n = len(logits)
    return np.array(logits, dtype=np.float64)[None], np.eye(n)


# ---------------------------------------------------------------- closed forms


def test_mpce_two_categories(f64):
    v, si = _logit_vectors([2.0, 0.0])
    loss = mpce(Tensor(v[None]), Tensor(si[None]), [0], [0, 1]).item()
    assert abs(loss - math.log1p(math.exp(-2))) < 1e-12
    assert abs(loss - 0.1269) < 5e-5


def test_mpce_two_parts(f64):
    parts = np.array([[[2.0, 0.0], [0.0, 0.0]]])
    si = np.stack([np.eye(2), np.eye(2)])
    loss = mpce(Tensor(parts), Tensor(si), [0], [0, 1]).item()
    assert abs(loss - (math.log1p(math.exp(-2)) + math.log(2)) / 2) < 1e-12
    assert abs(loss - 0.4100) < 5e-5


def test_mpce_identical_side_info_gives_log_known(f64, rng):
    row = rng.normal(size=6)
    si = np.tile(row, (2, 5, 1))
    loss = mpce(Tensor(rng.normal(size=(4, 2, 6))), Tensor(si), [0, 2, 3, 2], [0, 2, 3]).item()
    assert loss == pytest.approx(math.log(3), abs=1e-12)


def test_mpce_only_known_columns(f64):
    # unknown category 1 scores highest but is not a candidate
    parts = np.array([[[1.0, 9.0, 0.0]]])
    loss = mpce(Tensor(parts), Tensor(np.eye(3)[None]), [0], [0, 2]).item()
    assert abs(loss - math.log1p(math.exp(-1))) < 1e-12


def test_sce_equal_logits(f64):
    loss = sce(Tensor(np.zeros((1, 3, 4))), Tensor(np.ones((3, 4)))).item()
    assert abs(loss - math.log(3)) < 1e-12
    assert abs(loss - 1.0986) < 5e-5


def test_sce_dominant_diagonal(f64):
    base = 10 * np.eye(3)
    loss = sce(Tensor(base[None]), Tensor(base)).item()
    assert abs(loss + math.log(math.exp(100) / (math.exp(100) + 2))) < 1e-12
    assert loss < 1e-40


def test_gce_closed_forms(f64):
    v, cn = _logit_vectors([0.0, 0.0])
    assert abs(gce(Tensor(v), [0], Tensor(cn), [0, 1]).item() - math.log(2)) < 1e-12
    v, cn = _logit_vectors([5.0, -5.0])
    loss = gce(Tensor(v), [0], Tensor(cn), [0, 1]).item()
    assert abs(loss - math.log1p(math.exp(-10))) < 1e-15
    assert abs(loss - 4.54e-5) < 5e-8


def test_gce_shift_invariance(f64, rng):
    f_v = rng.normal(size=(3, 4))
    cn = np.concatenate([np.eye(4), np.ones((1, 4))])
    base = gce(Tensor(f_v), [0, 1, 4], Tensor(cn), [0, 1, 4]).item()
    # every name gets an extra unit coordinate, so setting it to c on one sample adds c to that row's logits
    cn_aug = np.concatenate([cn, np.ones((5, 1))], axis=1)
    for c in (-7.0, 0.5, 30.0):
        shifted = np.concatenate([f_v, np.full((3, 1), 0.0)], axis=1)
        shifted[1, -1] = c
        assert abs(gce(Tensor(shifted), [0, 1, 4], Tensor(cn_aug), [0, 1, 4]).item() - base) < 1e-9


def test_label_outside_known_is_contract_error(rng):
    with pytest.raises(ContractError):
        mpce(Tensor(rng.normal(size=(1, 1, 3))), Tensor(np.eye(3)[None]), [1], [0, 2])
    with pytest.raises(ContractError):
        gce(Tensor(rng.normal(size=(1, 3))), [1], Tensor(np.eye(3)), [0, 2])
    with pytest.raises(ContractError):
        mpce(Tensor(rng.normal(size=(1, 1, 3))), Tensor(np.eye(3)[None]), [0], [0])


def test_shape_mismatches(rng):
    with pytest.raises(DimensionError):
        sce(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 5))))
    with pytest.raises(DimensionError):
        mpce(Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((3, 3, 3))), [0], [0, 1])
    with pytest.raises(DimensionError):
        gce(Tensor(np.zeros((2, 3))), [0], Tensor(np.eye(3)), [0, 1])


# ---------------------------------------------------------------- randomized oracles


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(3, 6), st.integers(0, 2**31))
def test_losses_match_naive(b, k, a, seed):
    r = np.random.default_rng(seed)
    d = 5
    known = sorted(r.choice(a, size=2 + r.integers(0, a - 1), replace=False).tolist())
    labels = r.choice(known, size=b).tolist()
    parts, f_si, f_cn = r.normal(size=(b, k, d)) * 2, r.normal(size=(k, a, d)), r.normal(size=(a, d))
    f_v = parts.sum(1)
    with T.default_dtype(np.float64):
        lm = mpce(Tensor(parts), Tensor(f_si), labels, known).item()
        ls = sce(Tensor(f_si), Tensor(f_cn)).item()
        lg = gce(Tensor(f_v), labels, Tensor(f_cn), known).item()
    assert abs(lm - naive_mpce(parts, f_si, labels, known)) <= 1e-12
    assert abs(ls - naive_sce(f_si, f_cn)) <= 1e-12
    assert abs(lg - naive_gce(f_v, labels, f_cn, known)) <= 1e-12
    assert min(lm, ls, lg) >= 0 and all(map(math.isfinite, (lm, ls, lg)))


def test_sce_random_two_parts_five_categories(f64, rng):
    f_si, f_cn = rng.normal(size=(2, 5, 7)), rng.normal(size=(5, 7))
    assert abs(sce(Tensor(f_si), Tensor(f_cn)).item() - naive_sce(f_si, f_cn)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 2**31))
def test_mpce_row_shift_invariance(c, seed):
    """Shifting every logit of one (sample, part) row by c leaves the loss unchanged."""
    r = np.random.default_rng(seed)
    parts = r.normal(size=(3, 2, 4))
    si = np.concatenate([r.normal(size=(2, 4, 4)), np.ones((2, 4, 1))], axis=2)
    aug = np.concatenate([parts, np.zeros((3, 2, 1))], axis=2)
    with T.default_dtype(np.float64):
        base = mpce(Tensor(aug), Tensor(si), [0, 1, 3], [0, 1, 3]).item()
        aug[1, 0, -1] = c
        assert abs(mpce(Tensor(aug), Tensor(si), [0, 1, 3], [0, 1, 3]).item() - base) <= 1e-9


# ---------------------------------------------------------------- total


def test_total_arithmetic():
    assert total(0.5, 1.0, 2.0).item() == pytest.approx(0.8, abs=1e-7)
    assert total(0.5, 1.0, 2.0, LossWeights(0, 0)).item() == pytest.approx(0.5, abs=0)
    assert total(0.0, 0.0, 0.0).item() == 0.0
    assert LossWeights() == LossWeights(0.1, 0.1)
    with pytest.raises(ContractError):
        LossWeights(-0.1, 0.1)


def test_total_gradients_reach_every_term(f64):
    a, b, c = (Parameter(np.array(v), n) for v, n in ((0.5, "a"), (1.0, "b"), (2.0, "c")))
    T.backward(total(a, b, c, LossWeights(0.3, 0.7)))
    assert (float(a.grad), float(b.grad), float(c.grad)) == (1.0, 0.3, 0.7)


def test_disabled_terms_are_skipped():
    assert total(None, 1.0, None, LossWeights(0.5, 0.1)).item() == 0.5
