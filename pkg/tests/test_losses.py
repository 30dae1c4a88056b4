"""Objective functions checked against independent slow-path oracles.

Every reference below recomputes the quantity with plain Python loops and
math-library scalars — no shared code with the implementations under test.
"""

import math

import numpy as np
import pytest

import emoalign.tensor as T
from emoalign.errors import ConfigError, ContractError, DomainError
from emoalign.losses import (ArcFaceConfig, acpt_cls_loss, acpt_loss,
                             acpt_rank_loss, arcface_loss, contrastive_loss,
                             cosine_sim, predict_zero_shot)
from emoalign.rng import Xoshiro256StarStar
from emoalign.tensor import Tensor, backward, finite_diff_check


# -- slow reference implementations -------------------------------------------

def _lse(vals):
    m = max(vals)
    return m + math.log(sum(math.exp(v - m) for v in vals))


def _bf_contrastive(a, t, tau):
    n = a.shape[0]
    total = 0.0
    for i in range(n):
        row = [float(a[i] @ t[j]) / tau for j in range(n)]
        col = [float(t[i] @ a[j]) / tau for j in range(n)]
        total += -(row[i] - _lse(row)) - (col[i] - _lse(col))
    return total / (2 * n)


def _bf_cls(te, ce, labels, omega):
    tot = 0.0
    for i in range(te.shape[0]):
        logits = [float(te[i] @ ce[j]) / omega for j in range(ce.shape[0])]
        tot += -(logits[labels[i]] - _lse(logits))
    return tot / te.shape[0]


def _bf_rank(te, ce, labels):
    tot = 0.0
    for i in range(te.shape[0]):
        sp = float(te[i] @ ce[labels[i]])
        for j in range(ce.shape[0]):
            if j != labels[i]:
                tot += max(0.0, 1.0 - sp + float(te[i] @ ce[j]))
    return tot


def _bf_arcface(f, w, labels, s, margin):
    tot = 0.0
    for i in range(f.shape[0]):
        fi = f[i] / math.sqrt(float(f[i] @ f[i]))
        logits = []
        for j in range(w.shape[0]):
            wj = w[j] / math.sqrt(float(w[j] @ w[j]))
            cosv = float(fi @ wj)
            if j == labels[i]:
                theta = math.acos(min(1.0, max(-1.0, cosv)))
                logits.append(s * math.cos(theta + margin))
            else:
                logits.append(s * cosv)
        tot += -(logits[labels[i]] - _lse(logits))
    return tot / f.shape[0]


def _unit_rows(rng, n, d):
    x = rng.normal(n * d).reshape(n, d)
    return x / np.sqrt((x * x).sum(axis=1, keepdims=True))


def _log_tau(tau):
    return Tensor(np.array([math.log(tau)]), requires_grad=True)


# -- similarity primitives -----------------------------------------------------

def test_cosine_sim_worked_values():
    assert cosine_sim([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_sim([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert cosine_sim([3, 4], [4, 3]) == pytest.approx(24 / 25, abs=1e-12)
    with pytest.raises(DomainError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


def test_predict_zero_shot_rules():
    classes = np.array([[0.8, 0.6], [0.6, 0.8], [1.0, 0.0]])
    assert predict_zero_shot(np.array([1.0, 0.0]), classes) == 2
    assert predict_zero_shot(np.array([0.37, 0.0]), classes) == 2  # scale invariant
    assert predict_zero_shot(classes[1], classes) == 1  # self-similarity wins
    dup = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert predict_zero_shot(np.array([2.0, 0.1]), dup) == 0  # tie -> lowest id
    with pytest.raises(DomainError):
        predict_zero_shot(np.zeros(2), classes)


# -- contrastive loss ------------------------------------------------------------

def test_contrastive_single_pair_is_zero():
    T.clear_tape()
    a = Tensor(np.array([[0.6, 0.8]]))
    loss = contrastive_loss(a, a, _log_tau(1.0))
    assert abs(loss.item()) < 1e-12


def test_contrastive_identity_pair_worked_value():
    T.clear_tape()
    a = Tensor(np.eye(2))
    loss = contrastive_loss(a, a, _log_tau(1.0))
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-9)


def test_contrastive_matches_brute_force():
    rng = Xoshiro256StarStar(11)
    for k in range(20):
        n = 2 + k % 5
        a = _unit_rows(rng, n, 8)
        t = _unit_rows(rng, n, 8)
        tau = 0.07 if k % 2 else 1.0
        T.clear_tape()
        got = contrastive_loss(Tensor(a), Tensor(t), _log_tau(tau)).item()
        assert got == pytest.approx(_bf_contrastive(a, t, tau), abs=1e-12)


def test_contrastive_symmetry_and_lower_bound():
    rng = Xoshiro256StarStar(12)
    for n in (2, 4, 7):
        a = _unit_rows(rng, n, 8)
        t = _unit_rows(rng, n, 8)
        T.clear_tape()
        fwd = contrastive_loss(Tensor(a), Tensor(t), _log_tau(1.0)).item()
        rev = contrastive_loss(Tensor(t), Tensor(a), _log_tau(1.0)).item()
        assert fwd == pytest.approx(rev, abs=1e-12)
        bound = math.log(1 + (n - 1) * math.exp(-2.0))
        assert fwd >= bound - 1e-12
        assert fwd > 0.0


def test_contrastive_permutation_invariance():
    rng = Xoshiro256StarStar(13)
    a = _unit_rows(rng, 6, 8)
    t = _unit_rows(rng, 6, 8)
    perm = np.array([3, 0, 5, 1, 4, 2])
    T.clear_tape()
    base = contrastive_loss(Tensor(a), Tensor(t), _log_tau(0.5)).item()
    shuf = contrastive_loss(Tensor(a[perm]), Tensor(t[perm]), _log_tau(0.5)).item()
    assert base == pytest.approx(shuf, abs=1e-12)


def test_contrastive_temperature_is_clamped():
    rng = Xoshiro256StarStar(14)
    a = _unit_rows(rng, 4, 8)
    t = _unit_rows(rng, 4, 8)
    T.clear_tape()
    tiny = contrastive_loss(Tensor(a), Tensor(t), _log_tau(1e-9)).item()
    assert tiny == pytest.approx(_bf_contrastive(a, t, 1e-3), abs=1e-10)


def test_contrastive_shape_mismatch_rejected():
    with pytest.raises(ContractError):
        contrastive_loss(Tensor(np.eye(2)), Tensor(np.eye(3)), _log_tau(1.0))


def test_contrastive_gradients():
    rng = Xoshiro256StarStar(15)
    a = _unit_rows(rng, 4, 6)
    t = _unit_rows(rng, 4, 6)
    lt = _log_tau(0.3)
    r = finite_diff_check(lambda x: contrastive_loss(x, Tensor(t), lt),
                          Tensor(a), name="contrastive/audio")
    assert r.passed, str(r)
    r = finite_diff_check(lambda x: contrastive_loss(Tensor(a), x, lt),
                          Tensor(t), name="contrastive/text")
    assert r.passed, str(r)
    r = finite_diff_check(lambda x: contrastive_loss(Tensor(a), Tensor(t), x),
                          _log_tau(0.3), name="contrastive/log_tau")
    assert r.passed, str(r)


# -- prompt-tuning objectives ----------------------------------------------------

def test_cls_single_class_is_zero():
    T.clear_tape()
    te = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    ce = Tensor(np.array([[0.3, 0.4]]))
    assert abs(acpt_cls_loss(te, ce, [0, 0], omega=1.0).item()) < 1e-12


def test_cls_worked_value():
    T.clear_tape()
    te = Tensor(np.array([[1.0, 0.0]]))
    ce = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    got = acpt_cls_loss(te, ce, [0], omega=1.0).item()
    assert got == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-9)


def test_cls_matches_brute_force():
    rng = Xoshiro256StarStar(21)
    for k in range(20):
        te = _unit_rows(rng, 8, 8)
        ce = _unit_rows(rng, 4, 8)
        labels = (rng.integers(8) % 4).astype(np.int64)
        T.clear_tape()
        got = acpt_cls_loss(Tensor(te), Tensor(ce), labels).item()
        assert got == pytest.approx(_bf_cls(te, ce, labels, 0.07), abs=1e-12)


def test_cls_rejects_bad_labels_and_omega():
    te = Tensor(np.eye(2))
    ce = Tensor(np.eye(2))
    with pytest.raises(ContractError):
        acpt_cls_loss(te, ce, [0, 2])
    with pytest.raises(ContractError):
        acpt_cls_loss(te, ce, [0])
    with pytest.raises(ConfigError):
        acpt_cls_loss(te, ce, [0, 1], omega=0.0)


def test_rank_worked_values():
    T.clear_tape()
    te = Tensor(np.array([[1.0, 0.0]]))
    ce = Tensor(np.array([[0.9, 0.0], [0.2, 0.0]]))
    assert acpt_rank_loss(te, ce, [0]).item() == pytest.approx(0.3, abs=1e-12)
    # all pairwise margins satisfied -> exactly zero
    ce2 = Tensor(np.array([[1.0, 0.0], [-0.5, 0.0]]))
    assert acpt_rank_loss(te, ce2, [0]).item() == 0.0


def test_rank_single_row_has_three_hinge_terms():
    rng = Xoshiro256StarStar(22)
    te = _unit_rows(rng, 1, 8)
    ce = _unit_rows(rng, 4, 8)
    label = [2]
    sims = te @ ce.T
    by_hand = sum(max(0.0, 1.0 - sims[0, 2] + sims[0, j]) for j in range(4) if j != 2)
    T.clear_tape()
    got = acpt_rank_loss(Tensor(te), Tensor(ce), label).item()
    assert got == pytest.approx(by_hand, abs=1e-12)
    assert got == pytest.approx(_bf_rank(te, ce, label), abs=1e-12)


def test_rank_matches_brute_force_and_zero_iff_margins():
    rng = Xoshiro256StarStar(23)
    for k in range(20):
        te = _unit_rows(rng, 6, 8)
        ce = _unit_rows(rng, 4, 8)
        labels = (rng.integers(6) % 4).astype(np.int64)
        T.clear_tape()
        got = acpt_rank_loss(Tensor(te), Tensor(ce), labels).item()
        want = _bf_rank(te, ce, labels)
        assert got == pytest.approx(want, abs=1e-12)
        sims = te @ ce.T
        pos = sims[np.arange(6), labels][:, None]
        neg_mask = np.ones_like(sims, bool)
        neg_mask[np.arange(6), labels] = False
        satisfied = bool(((pos - sims)[neg_mask] >= 1.0).all())
        assert (got == 0.0) == satisfied


def test_rank_scaled_anchors_reach_zero():
    # margins CAN be met with non-unit anchors; zero loss is attainable
    te = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    ce = Tensor(np.array([[2.0, 0.0], [0.0, 2.0]]))
    assert acpt_rank_loss(te, ce, [0, 1]).item() == 0.0


def test_acpt_is_exact_sum_of_parts():
    rng = Xoshiro256StarStar(24)
    te = _unit_rows(rng, 5, 8)
    ce = _unit_rows(rng, 4, 8)
    labels = (rng.integers(5) % 4).astype(np.int64)
    T.clear_tape()
    whole = acpt_loss(Tensor(te), Tensor(ce), labels).item()
    parts = (acpt_cls_loss(Tensor(te), Tensor(ce), labels).item()
             + acpt_rank_loss(Tensor(te), Tensor(ce), labels).item())
    assert whole == pytest.approx(parts, abs=1e-12)


def test_acpt_permutation_invariance():
    rng = Xoshiro256StarStar(25)
    te = _unit_rows(rng, 6, 8)
    ce = _unit_rows(rng, 4, 8)
    labels = (rng.integers(6) % 4).astype(np.int64)
    perm = np.array([4, 1, 5, 0, 2, 3])
    T.clear_tape()
    base = acpt_loss(Tensor(te), Tensor(ce), labels).item()
    shuf = acpt_loss(Tensor(te[perm]), Tensor(ce), labels[perm]).item()
    # ranking part is a sum and the cls part a mean; both are order-free
    assert base == pytest.approx(shuf, abs=1e-12)


def _away_from_hinge(rng, m, c, d, slack=5e-3):
    """Random instance whose every pairwise hinge argument is away from 0."""
    while True:
        te = _unit_rows(rng, m, c * 0 + d)
        ce = _unit_rows(rng, c, d)
        labels = (rng.integers(m) % c).astype(np.int64)
        sims = te @ ce.T
        pos = sims[np.arange(m), labels][:, None]
        arg = 1.0 - pos + sims
        mask = np.ones_like(arg, bool)
        mask[np.arange(m), labels] = False
        if np.abs(arg[mask]).min() > slack:
            return te, ce, labels


def test_acpt_gradients():
    rng = Xoshiro256StarStar(26)
    te, ce, labels = _away_from_hinge(rng, 4, 3, 6)
    r = finite_diff_check(lambda x: acpt_loss(x, Tensor(ce), labels),
                          Tensor(te), name="acpt/text")
    assert r.passed, str(r)
    r = finite_diff_check(lambda x: acpt_loss(Tensor(te), x, labels),
                          Tensor(ce), name="acpt/anchors")
    assert r.passed, str(r)


# -- margin classification --------------------------------------------------------

def test_arcface_worked_value():
    T.clear_tape()
    f = Tensor(np.array([[1.0, 0.0]]))
    cfg = ArcFaceConfig(weights=Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])),
                        scale=2.0, margin=0.5)
    got = arcface_loss(f, cfg, [0]).item()
    want = math.log(1 + math.exp(-2 * math.cos(0.5)))
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(0.1595, abs=1e-4)


def test_arcface_margin_zero_is_plain_cross_entropy():
    rng = Xoshiro256StarStar(31)
    f = rng.normal(5 * 8).reshape(5, 8)
    w = rng.normal(4 * 8).reshape(4, 8)
    labels = (rng.integers(5) % 4).astype(np.int64)
    T.clear_tape()
    got = arcface_loss(Tensor(f), ArcFaceConfig(weights=Tensor(w), scale=1.0,
                                                margin=0.0), labels).item()
    fn = f / np.sqrt((f * f).sum(axis=1, keepdims=True))
    wn = w / np.sqrt((w * w).sum(axis=1, keepdims=True))
    cos = fn @ wn.T
    plain = np.mean([-(cos[i, labels[i]] - _lse(list(cos[i]))) for i in range(5)])
    assert got == pytest.approx(plain, abs=1e-9)


def test_arcface_matches_brute_force():
    rng = Xoshiro256StarStar(32)
    for k in range(20):
        f = rng.normal(6 * 8).reshape(6, 8) * 1.7   # not unit norm on purpose
        w = rng.normal(4 * 8).reshape(4, 8)
        labels = (rng.integers(6) % 4).astype(np.int64)
        T.clear_tape()
        got = arcface_loss(Tensor(f), ArcFaceConfig(weights=Tensor(w)), labels).item()
        assert got == pytest.approx(_bf_arcface(f, w, labels, 16.0, 0.2), abs=1e-10)


def test_arcface_monotone_in_margin():
    rng = Xoshiro256StarStar(33)
    found = 0
    while found < 5:
        f = _unit_rows(rng, 1, 8)
        w = _unit_rows(rng, 4, 8)
        cos = (f @ w.T)[0]
        label = int(np.argmax(cos))
        if math.acos(min(1.0, cos[label])) + 0.5 >= math.pi:
            continue
        losses = []
        for m in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
            T.clear_tape()
            losses.append(arcface_loss(
                Tensor(f), ArcFaceConfig(weights=Tensor(w), margin=m), [label]).item())
        assert all(b > a for a, b in zip(losses, losses[1:])), losses
        found += 1


def test_arcface_permutation_invariance():
    rng = Xoshiro256StarStar(34)
    f = rng.normal(6 * 8).reshape(6, 8)
    w = rng.normal(4 * 8).reshape(4, 8)
    labels = (rng.integers(6) % 4).astype(np.int64)
    perm = np.array([5, 2, 0, 4, 1, 3])
    T.clear_tape()
    base = arcface_loss(Tensor(f), ArcFaceConfig(weights=Tensor(w)), labels).item()
    shuf = arcface_loss(Tensor(f[perm]), ArcFaceConfig(weights=Tensor(w)),
                        labels[perm]).item()
    assert base == pytest.approx(shuf, abs=1e-12)


def test_arcface_config_validation():
    w = Tensor(np.eye(3))
    with pytest.raises(ConfigError):
        ArcFaceConfig(weights=w, scale=0.0)
    with pytest.raises(ConfigError):
        ArcFaceConfig(weights=w, margin=-0.1)
    with pytest.raises(ConfigError):
        ArcFaceConfig(weights=w, margin=math.pi / 2)
    with pytest.raises(ContractError):
        arcface_loss(Tensor(np.eye(3)), ArcFaceConfig(weights=Tensor(np.eye(2))), [0, 1, 0])
    with pytest.raises(ContractError):
        arcface_loss(Tensor(np.eye(3)), ArcFaceConfig(weights=w), [0, 3, 0])


def _away_from_arccos_boundary(rng, b, c, d, lim=0.999):
    while True:
        f = rng.normal(b * d).reshape(b, d)
        w = rng.normal(c * d).reshape(c, d)
        fn = f / np.sqrt((f * f).sum(axis=1, keepdims=True))
        wn = w / np.sqrt((w * w).sum(axis=1, keepdims=True))
        if np.abs(fn @ wn.T).max() < lim:
            return f, w


def test_arcface_gradients():
    rng = Xoshiro256StarStar(35)
    f, w = _away_from_arccos_boundary(rng, 4, 3, 6)
    labels = (rng.integers(4) % 3).astype(np.int64)
    r = finite_diff_check(
        lambda x: arcface_loss(x, ArcFaceConfig(weights=Tensor(w)), labels),
        Tensor(f), name="arcface/features")
    assert r.passed, str(r)
    r = finite_diff_check(
        lambda x: arcface_loss(Tensor(f), ArcFaceConfig(weights=x), labels),
        Tensor(w), name="arcface/weights")
    assert r.passed, str(r)
