"""Finite-difference verification suite for the autodiff layer and the losses.

Every differentiable operation and every training objective is checked
against central finite differences (h = 1e-5) on small random instances.
Inputs are resampled away from non-smooth points — relu/max/clamp corners,
hinge boundaries, |cos| near 1 — because the two-sided difference quotient
straddles the corner there and measures the wrong one-sided slope.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError
from .losses import (ArcFaceConfig, acpt_cls_loss, acpt_loss, acpt_rank_loss,
                     arcface_loss, contrastive_loss)
from .rng import Xoshiro256StarStar, derive_seed
from .tensor import GradCheckReport, Tensor, finite_diff_check

H = 1e-5
REL_TOL = 1e-4
KINK_SLACK = 1e-3
COS_LIMIT = 0.999

LOSS_NAMES = ("contrastive_loss", "acpt_cls_loss", "acpt_rank_loss",
              "acpt_loss", "arcface_loss")


def _randn(rng: Xoshiro256StarStar, *shape: int) -> np.ndarray:
    return rng.normal(int(np.prod(shape))).reshape(shape)


def _randn_away_from_zero(rng: Xoshiro256StarStar, *shape: int,
                          slack: float = KINK_SLACK) -> np.ndarray:
    """Standard normals with every element at least ``slack`` from zero."""
    x = _randn(rng, *shape)
    small = np.abs(x) < slack
    x[small] = np.sign(x[small] + (x[small] == 0)) * (slack * 2.0)
    return x


def _randn_distinct(rng: Xoshiro256StarStar, *shape: int, axis: int = -1,
                    slack: float = KINK_SLACK) -> np.ndarray:
    """Normals whose top-two values along ``axis`` differ by more than ``slack``.

    Keeps max-reduction checks away from argmax ties, where the derivative
    is one-sided.
    """
    while True:
        x = _randn(rng, *shape)
        s = np.sort(x, axis=axis)
        gap = np.take(s, -1, axis=axis) - np.take(s, -2, axis=axis)
        if np.all(gap > 2.0 * slack):
            return x


def _unit_rows(rng: Xoshiro256StarStar, n: int, d: int) -> np.ndarray:
    x = _randn(rng, n, d)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


CaseFn = Callable[[Xoshiro256StarStar], GradCheckReport]


def _check(name: str, f: Callable[[Tensor], Tensor], x: np.ndarray) -> GradCheckReport:
    return finite_diff_check(f, Tensor(np.asarray(x, dtype=np.float64)),
                             h=H, rel_tol=REL_TOL, name=name)


# -- per-op cases ----------------------------------------------------------------
# Each case differentiates a scalar reduction of the op under test with
# respect to one input, holding the others fixed.  Reductions multiply by a
# fixed random matrix first where a plain sum would make the gradient
# constant and hide indexing mistakes.

def _op_cases(rng: Xoshiro256StarStar) -> list[GradCheckReport]:
    reports: list[GradCheckReport] = []
    mix34 = Tensor(_randn(rng, 3, 4))
    mix45 = Tensor(_randn(rng, 4, 5))

    def weighted(y: Tensor, w: Tensor) -> Tensor:
        return (y * w).sum()

    a34 = _randn(rng, 3, 4)
    b34 = _randn(rng, 3, 4)
    v4 = _randn(rng, 4)

    reports.append(_check("add.lhs", lambda x: weighted(T.add(x, Tensor(b34)), mix34), a34))
    reports.append(_check("add.rhs", lambda x: weighted(T.add(Tensor(a34), x), mix34), b34))
    reports.append(_check("sub.lhs", lambda x: weighted(T.sub(x, Tensor(b34)), mix34), a34))
    reports.append(_check("sub.rhs", lambda x: weighted(T.sub(Tensor(a34), x), mix34), b34))
    reports.append(_check("negate", lambda x: weighted(T.negate(x), mix34), a34))
    reports.append(_check("mul.lhs", lambda x: weighted(T.mul(x, Tensor(b34)), mix34), a34))
    reports.append(_check("mul.rhs", lambda x: weighted(T.mul(Tensor(a34), x), mix34), b34))
    reports.append(_check("mul.broadcast_scalar",
                          lambda x: weighted(T.mul(Tensor(a34), x), mix34), _randn(rng, 1)))
    reports.append(_check("scale", lambda x: weighted(T.scale(x, -1.7), mix34), a34))
    reports.append(_check("reciprocal",
                          lambda x: weighted(T.reciprocal(x), mix34),
                          _randn_away_from_zero(rng, 3, 4, slack=0.5)))

    w45 = _randn(rng, 4, 5)
    reports.append(_check("matmul.lhs", lambda x: weighted(T.matmul(x, Tensor(w45)), mix34 @ mix45), a34))
    reports.append(_check("matmul.rhs", lambda x: weighted(T.matmul(Tensor(a34), x), mix34 @ mix45), w45))
    reports.append(_check("transpose", lambda x: weighted(T.transpose(x), mix34.transpose()), a34))
    mix26 = Tensor(_randn(rng, 2, 6))
    reports.append(_check("reshape", lambda x: weighted(T.reshape(x, 2, 6), mix26), a34))

    reports.append(_check("sum.all", lambda x: T.tensor_sum(x), a34))
    mix_c4 = Tensor(_randn(rng, 4))
    reports.append(_check("sum.axis0",
                          lambda x: weighted(T.tensor_sum(x, axis=0), mix_c4), a34))
    mix31 = Tensor(_randn(rng, 3, 1))
    reports.append(_check("sum.axis1_keepdims",
                          lambda x: weighted(T.tensor_sum(x, axis=1, keepdims=True), mix31), a34))
    reports.append(_check("mean.all", lambda x: T.tensor_mean(x), a34))
    mix_r3 = Tensor(_randn(rng, 3))
    reports.append(_check("mean.axis1",
                          lambda x: weighted(T.tensor_mean(x, axis=1), mix_r3), a34))
    reports.append(_check("max.all", lambda x: T.tensor_max(x),
                          _randn_distinct(rng, 12, axis=0).reshape(3, 4)))
    reports.append(_check("max.axis1",
                          lambda x: weighted(T.tensor_max(x, axis=1), mix_r3),
                          _randn_distinct(rng, 3, 4, axis=1)))

    reports.append(_check("exp", lambda x: weighted(T.exp(x), mix34), a34 * 0.5))
    reports.append(_check("log", lambda x: weighted(T.log(x), mix34),
                          np.abs(a34) + 0.5))
    reports.append(_check("sqrt", lambda x: weighted(T.sqrt(x), mix34),
                          np.abs(a34) + 0.5))
    reports.append(_check("relu", lambda x: weighted(T.relu(x), mix34),
                          _randn_away_from_zero(rng, 3, 4)))

    lo, hi = -0.6, 0.8
    xc = _randn(rng, 3, 4)
    xc[np.abs(xc - lo) < KINK_SLACK] += 3.0 * KINK_SLACK
    xc[np.abs(xc - hi) < KINK_SLACK] += 3.0 * KINK_SLACK
    reports.append(_check("clamp", lambda x: weighted(T.clamp(x, lo, hi), mix34), xc))

    c_other = Tensor(_randn(rng, 2, 4))
    mix54 = Tensor(_randn(rng, 5, 4))
    reports.append(_check("concat.first",
                          lambda x: weighted(T.concat([x, c_other], axis=0), mix54), a34))
    reports.append(_check("concat.second",
                          lambda x: weighted(T.concat([Tensor(a34), x], axis=0), mix54),
                          _randn(rng, 2, 4)))
    mix32 = Tensor(_randn(rng, 3, 2))
    reports.append(_check("narrow",
                          lambda x: weighted(T.narrow(x, 1, 1, 3), mix32), a34))
    mix35 = Tensor(_randn(rng, 3, 5))
    reports.append(_check("expand_last",
                          lambda x: weighted(T.expand_last(x, 5), mix35),
                          _randn(rng, 3, 1)))
    reports.append(_check("add_rowvec.matrix",
                          lambda x: weighted(T.add_rowvec(x, Tensor(v4)), mix34), a34))
    reports.append(_check("add_rowvec.vector",
                          lambda x: weighted(T.add_rowvec(Tensor(a34), x), mix34), v4))

    reports.append(_check("l2_normalize",
                          lambda x: weighted(T.l2_normalize(x), mix34), a34))
    reports.append(_check("softmax", lambda x: weighted(T.softmax(x), mix34), a34))
    reports.append(_check("log_softmax", lambda x: weighted(T.log_softmax(x), mix34), a34))

    gamma, beta = _randn(rng, 4) * 0.3 + 1.0, _randn(rng, 4) * 0.2
    mixln = Tensor(_randn(rng, 3, 4))
    reports.append(_check("layer_norm.x",
                          lambda x: weighted(T.layer_norm(x, Tensor(gamma), Tensor(beta)), mixln), a34))
    reports.append(_check("layer_norm.gamma",
                          lambda g: weighted(T.layer_norm(Tensor(a34), g, Tensor(beta)), mixln), gamma))
    reports.append(_check("layer_norm.beta",
                          lambda b: weighted(T.layer_norm(Tensor(a34), Tensor(gamma), b), mixln), beta))

    ximg = _randn(rng, 2, 5, 4, 2)
    wconv = _randn(rng, 9 * 2, 3)
    mixc = Tensor(_randn(rng, 2, 5, 4, 3))
    reports.append(_check("conv3x3.input",
                          lambda x: weighted(T.conv3x3(x, Tensor(wconv)), mixc), ximg))
    reports.append(_check("conv3x3.weights",
                          lambda w: weighted(T.conv3x3(Tensor(ximg), w), mixc), wconv))
    xpool = _randn(rng, 2, 6, 4, 3)
    mixp = Tensor(_randn(rng, 2, 3, 2, 3))
    reports.append(_check("avgpool2",
                          lambda x: weighted(T.avgpool2(x), mixp), xpool))
    return reports


# -- loss cases --------------------------------------------------------------


def _contrastive_inputs(rng: Xoshiro256StarStar, n: int = 5, d: int = 6):
    return _unit_rows(rng, n, d), _unit_rows(rng, n, d), np.array([-1.1])


def _acpt_inputs(rng: Xoshiro256StarStar, m: int = 6, c: int = 4, d: int = 5):
    """Rows, anchors, and labels with every ranking hinge away from its corner.

    The hinge argument for row i and wrong class k is
    1 - sim(i, y_i) + sim(i, k); resample until all of them clear the slack.
    """
    labels = np.arange(m) % c
    while True:
        rows = _unit_rows(rng, m, d)
        anchors = _unit_rows(rng, c, d)
        sims = rows @ anchors.T
        pos = sims[np.arange(m), labels][:, None]
        slack = 1.0 - pos + sims
        slack[np.arange(m), labels] = 1.0  # own-class term is excluded from the hinge
        if np.all(np.abs(slack) > 2.0 * KINK_SLACK):
            return rows, anchors, labels


def _arcface_inputs(rng: Xoshiro256StarStar, b: int = 6, c: int = 4, d: int = 5):
    labels = np.arange(b) % c
    while True:
        feats = _randn(rng, b, d)
        w = _randn(rng, c, d)
        fu = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        wu = w / np.linalg.norm(w, axis=1, keepdims=True)
        if np.all(np.abs(fu @ wu.T) < COS_LIMIT):
            return feats, w, labels


def _loss_cases(rng: Xoshiro256StarStar) -> list[GradCheckReport]:
    reports: list[GradCheckReport] = []

    au, tx, lt = _contrastive_inputs(rng)
    reports.append(_check("contrastive_loss.audio",
                          lambda x: contrastive_loss(x, Tensor(tx), Tensor(lt)), au))
    reports.append(_check("contrastive_loss.text",
                          lambda x: contrastive_loss(Tensor(au), x, Tensor(lt)), tx))
    reports.append(_check("contrastive_loss.log_tau",
                          lambda x: contrastive_loss(Tensor(au), Tensor(tx), x), lt))

    rows, anchors, labels = _acpt_inputs(rng)
    reports.append(_check("acpt_cls_loss.rows",
                          lambda x: acpt_cls_loss(x, Tensor(anchors), labels), rows))
    reports.append(_check("acpt_cls_loss.anchors",
                          lambda x: acpt_cls_loss(Tensor(rows), x, labels), anchors))
    reports.append(_check("acpt_rank_loss.rows",
                          lambda x: acpt_rank_loss(x, Tensor(anchors), labels), rows))
    reports.append(_check("acpt_rank_loss.anchors",
                          lambda x: acpt_rank_loss(Tensor(rows), x, labels), anchors))
    reports.append(_check("acpt_loss.rows",
                          lambda x: acpt_loss(x, Tensor(anchors), labels), rows))
    reports.append(_check("acpt_loss.anchors",
                          lambda x: acpt_loss(Tensor(rows), x, labels), anchors))

    feats, w, alabels = _arcface_inputs(rng)
    reports.append(_check("arcface_loss.features",
                          lambda x: arcface_loss(x, ArcFaceConfig(weights=Tensor(w),
                                                                  scale=4.0, margin=0.3),
                                                 alabels), feats))
    reports.append(_check("arcface_loss.weights",
                          lambda x: arcface_loss(Tensor(feats),
                                                 ArcFaceConfig(weights=x, scale=4.0, margin=0.3),
                                                 alabels), w))
    return reports


def run_suite(seed: int = 0) -> list[GradCheckReport]:
    """Run every gradient check once and return the per-case reports."""
    reports = _op_cases(Xoshiro256StarStar(derive_seed(seed, 71, 0)))
    reports += _loss_cases(Xoshiro256StarStar(derive_seed(seed, 71, 1)))
    names = [r.name for r in reports]
    if len(set(names)) != len(names):
        raise ContractError("gradcheck: duplicate case names")
    return reports


def suite_passed(reports: list[GradCheckReport]) -> bool:
    return all(r.passed for r in reports)
