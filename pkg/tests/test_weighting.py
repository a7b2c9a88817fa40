import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auxseg.tensor import Tensor
from auxseg.weighting import WeightingStrategy, combine_fixed, combine_ftwb, combine_twb


def losses(ls, ld, grad=False):
    return Tensor(ls, requires_grad=grad), Tensor(ld, requires_grad=grad)


def ema_closed_form(raws, beta):
    """lam_t = beta^(t-1) r_1 + sum_{k>=2} (1-beta) beta^(t-k) r_k."""
    t = len(raws)
    return beta ** (t - 1) * raws[0] + sum((1 - beta) * beta ** (t - k) * raws[k - 1]
                                           for k in range(2, t + 1))


def test_fixed_values():
    assert combine_fixed(*losses(0.5, 2.0), 400, 1).total.item() == 202.0
    assert combine_fixed(*losses(1.0, 1.0), 1000, 1).total.item() == 1001.0
    with pytest.raises(ValueError):
        combine_fixed(*losses(1.0, 1.0), 0, 1)


def test_twb_swaps_losses():
    r = combine_twb(*losses(0.5, 2.0))
    assert (r.lambda_seg, r.lambda_depth) == (2.0, 0.5)
    assert r.total.item() == 2.0


def test_ftwb_values():
    r = combine_ftwb(*losses(2.0, 3.0))
    assert (r.lambda_seg, r.lambda_depth) == (6.0, 2.0)
    assert r.total.item() == 18.0


def test_ftwb_below_twb_exactly_when_seg_loss_below_one():
    for ls in (0.2, 0.9, 1.0, 1.5, 3.0):
        t = combine_twb(*losses(ls, 0.7)).total.item()
        f = combine_ftwb(*losses(ls, 0.7)).total.item()
        if ls < 1:
            assert f < t
        elif ls == 1:
            assert f == pytest.approx(t)
        else:
            assert f > t


pos = st.floats(1e-3, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(pos, pos)
def test_total_identities(ls, ld):
    assert combine_twb(*losses(ls, ld)).total.item() == pytest.approx(2 * ls * ld, rel=1e-12)
    assert combine_ftwb(*losses(ls, ld)).total.item() == pytest.approx((ls + 1) * ls * ld, rel=1e-12)


@pytest.mark.parametrize("combine", [combine_twb, combine_ftwb])
def test_detached_gradient_relation(combine):
    ls, ld = 0.7, 1.9
    a, b = losses(ls, ld, grad=True)
    combine(a, b, detached=True).total.backward()
    c, d = losses(ls, ld, grad=True)
    combine(c, d, detached=False).total.backward()
    # detached: grads are the weights themselves
    if combine is combine_twb:
        assert (a.grad, b.grad) == (pytest.approx(ld), pytest.approx(ls))
        assert a.grad == pytest.approx(0.5 * c.grad, rel=1e-12)
        assert b.grad == pytest.approx(0.5 * d.grad, rel=1e-12)
    else:
        assert a.grad == pytest.approx(ls * ld) and b.grad == pytest.approx(ls)
        assert c.grad == pytest.approx((2 * ls + 1) * ld, rel=1e-12)
        assert d.grad == pytest.approx((ls + 1) * ls, rel=1e-12)


def test_loss_validation():
    with pytest.raises(ValueError):
        combine_twb(*losses(-0.1, 1.0))
    with pytest.raises(FloatingPointError):
        combine_ftwb(*losses(np.nan, 1.0))


def test_ema_two_steps():
    s = WeightingStrategy("twb", ema_beta=0.5)
    s.step(*losses(1.0, 1.0))
    r = s.step(*losses(1.0, 1.2))
    assert r.lambda_seg == pytest.approx(1.1, abs=1e-15)


def test_ema_hand_trace():
    s = WeightingStrategy("twb", ema_beta=0.9)
    depth_losses = [1.0, 0.5, 0.8, 0.2, 0.4]
    lam = None
    for ld in depth_losses:
        r = s.step(*losses(0.3, ld))
        lam = ld if lam is None else 0.9 * lam + 0.1 * ld
        assert r.lambda_seg == pytest.approx(lam, abs=1e-15)


@pytest.mark.parametrize("beta", [0.5, 0.9, 0.99])
def test_ema_matches_closed_form(beta):
    raws = list(np.random.default_rng(int(beta * 100)).uniform(0.1, 3.0, size=40))
    s = WeightingStrategy("twb", ema_beta=beta)
    for t, r in enumerate(raws, start=1):
        got = s.step(*losses(0.5, r)).lambda_seg
        assert got == pytest.approx(ema_closed_form(raws[:t], beta), abs=1e-12)
        assert min(raws[:t]) - 1e-12 <= got <= max(raws[:t]) + 1e-12


def test_reset_forgets_history():
    s = WeightingStrategy("ftwb", ema_beta=0.9)
    s.step(*losses(1.0, 5.0))
    s.reset()
    assert s.step(*losses(1.0, 2.0)).lambda_seg == 2.0


def test_fixed_strategy_ignores_ema():
    s = WeightingStrategy("fixed", 400, 1, ema_beta=0.9)
    for ld in (0.1, 5.0):
        r = s.step(*losses(0.5, ld))
        assert (r.lambda_seg, r.lambda_depth) == (400.0, 1.0)


def test_strategy_validation():
    with pytest.raises(ValueError):
        WeightingStrategy("uncertainty")
    with pytest.raises(ValueError):
        WeightingStrategy("twb", ema_beta=1.0)
    with pytest.raises(ValueError):
        WeightingStrategy.fixed(-1.0)
