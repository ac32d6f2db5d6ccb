import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from reco.errors import ContractError, DegeneratePairError, NumericError, ParameterError, StateError
from reco.losses import (
    Role,
    global_loss,
    infonce,
    infonce_from_logits,
    interpolate_features,
    local_loss,
    similarity_distribution,
    total_loss,
)

from conftest import unit_rows
from oracles import central_difference, global_loop, infonce_loop, local_loop, relative_error

E1 = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
E2 = torch.tensor([[0.0, 1.0]], dtype=torch.float64)

# mpmath, 30 digits: log(1 + e^-5)
INFONCE_HAND = 0.00671534848911806861641668773256
# mpmath: KL(softmax(25, 0) || softmax(10, 0))
GLOBAL_HAND = 0.0000453986770097628103347205790283


def test_infonce_hand_value():
    assert float(infonce(E1, E1, E2, 0.2)) == pytest.approx(INFONCE_HAND, abs=1e-12)
    assert infonce_loop(E1.numpy(), E1.numpy(), E2.numpy(), 0.2) == pytest.approx(INFONCE_HAND, abs=1e-12)


def test_infonce_symmetric_logits_is_log2():
    v = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    v_hat = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
    neg = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
    assert float(infonce(v, v_hat, neg, 0.2)) == pytest.approx(math.log(2), abs=1e-12)


def test_infonce_matches_loop_and_is_nonnegative(gen):
    for _ in range(20):
        v, v_hat, neg = unit_rows(gen, 5, 8), unit_rows(gen, 5, 8), unit_rows(gen, 11, 8)
        got = float(infonce(v, v_hat, neg, 0.2))
        assert got >= 0
        assert got == pytest.approx(infonce_loop(v.numpy(), v_hat.numpy(), neg.numpy(), 0.2), rel=1e-10)


def test_infonce_nonnegative_many_random(gen):
    for _ in range(1000):
        v, v_hat, neg = unit_rows(gen, 2, 4), unit_rows(gen, 2, 4), unit_rows(gen, 3, 4)
        assert float(infonce(v, v_hat, neg, 0.2)) >= 0


def test_infonce_errors():
    with pytest.raises(ParameterError):
        infonce(E1, E1, E2, 0.0)
    with pytest.raises(ContractError):
        infonce(2 * E1, E1, E2, 0.2)
    with pytest.raises(StateError):
        infonce(E1, E1, torch.zeros(0, 2, dtype=torch.float64), 0.2)


def test_softmax_two_negatives():
    dist = similarity_distribution(E1, torch.cat([E1, E2]), 0.1)
    p = dist.probabilities[0]
    assert float(p[0]) == pytest.approx(0.999954602131297565605495223767201, abs=1e-12)
    assert float(p[1]) == pytest.approx(4.54e-5, rel=1e-3)


def test_constant_logits_give_uniform(gen):
    v = E1
    neg = torch.tensor([[0.0, 1.0], [0.0, -1.0], [0.0, 1.0]], dtype=torch.float64)
    p = similarity_distribution(v, neg, 0.07).probabilities
    assert torch.allclose(p, torch.full_like(p, 1 / 3), atol=1e-15)


def test_sharpening_increases_max_probability(gen):
    v, neg = unit_rows(gen, 4, 8), unit_rows(gen, 10, 8)
    prev = similarity_distribution(v, neg, 1.0).probabilities.max(dim=1).values
    for tau in (0.5, 0.2, 0.1, 0.04):
        cur = similarity_distribution(v, neg, tau).probabilities.max(dim=1).values
        assert (cur > prev).all()
        prev = cur


def test_distribution_rows_sum_to_one_and_target_detached(gen):
    v = unit_rows(gen, 4, 8).requires_grad_(True)
    neg = unit_rows(gen, 10, 8)
    tgt = similarity_distribution(v, neg, 0.04, Role.TARGET)
    onl = similarity_distribution(v, neg, 0.1, Role.ONLINE)
    assert torch.allclose(tgt.probabilities.sum(1), torch.ones(4, dtype=torch.float64), atol=1e-6)
    assert not tgt.log_probs.requires_grad
    assert onl.log_probs.requires_grad


def test_global_hand_value():
    bank = torch.cat([E1, E2])
    got = float(global_loss(E1, E1, bank, 0.1, 0.04))
    assert got == pytest.approx(GLOBAL_HAND, abs=1e-12)
    assert global_loop(E1.numpy(), E1.numpy(), bank.numpy(), 0.1, 0.04) == pytest.approx(GLOBAL_HAND, abs=1e-12)


def test_global_zero_for_identical_inputs(gen):
    v, neg = unit_rows(gen, 6, 8), unit_rows(gen, 20, 8)
    assert abs(float(global_loss(v, v, neg, 0.1, 0.1))) < 1e-12


def test_global_matches_loop_and_gibbs(gen):
    for _ in range(1000):
        v, vb, neg = unit_rows(gen, 2, 4), unit_rows(gen, 2, 4), unit_rows(gen, 5, 4)
        assert float(global_loss(v, vb, neg, 0.1, 0.04)) >= -1e-12
    v, vb, neg = unit_rows(gen, 3, 8), unit_rows(gen, 3, 8), unit_rows(gen, 9, 8)
    assert float(global_loss(v, vb, neg, 0.1, 0.04)) == pytest.approx(
        global_loop(v.numpy(), vb.numpy(), neg.numpy(), 0.1, 0.04), rel=1e-9
    )


def test_global_direction_is_target_first(gen):
    v, vb, neg = unit_rows(gen, 4, 8), unit_rows(gen, 4, 8), unit_rows(gen, 16, 8)
    forward = float(global_loss(v, vb, neg, 0.1, 0.04))
    reverse = global_loop(vb.numpy(), v.numpy(), neg.numpy(), 0.04, 0.1)
    assert forward == pytest.approx(global_loop(v.numpy(), vb.numpy(), neg.numpy(), 0.1, 0.04), rel=1e-9)
    assert abs(forward - reverse) > 1e-3


def test_entropy_gap_grows_as_target_sharpens(gen):
    v, neg = unit_rows(gen, 4, 8), unit_rows(gen, 16, 8)

    def entropy(d):
        return -(d.probabilities * d.log_probs).sum(1)

    h_online = entropy(similarity_distribution(v, neg, 0.1))
    gaps = [h_online - entropy(similarity_distribution(v, neg, t)) for t in (0.2, 0.1, 0.07, 0.04, 0.01)]
    for a, b in zip(gaps, gaps[1:]):
        assert (b > a).all()


def test_interpolate_features_values():
    e1 = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
    e2 = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
    assert torch.equal(interpolate_features(e1, e2, 1.0), e1)
    assert torch.equal(interpolate_features(e1, e2, 0.0), e2)
    mid = interpolate_features(e1, e2, 0.5)
    assert torch.allclose(mid, torch.tensor([2**-0.5, 2**-0.5, 0.0], dtype=torch.float64), atol=1e-15)
    out = interpolate_features(e1[:2], e2[:2], 0.3)
    assert float(out[0]) == pytest.approx(0.393919298579167669948004018646109, abs=1e-12)
    assert float(out[1]) == pytest.approx(0.919145030018057896545342710174237, abs=1e-12)


def test_interpolate_features_endpoints_exact_for_float32(gen):
    a = unit_rows(gen, 8, 16, torch.float32)
    b = unit_rows(gen, 8, 16, torch.float32)
    assert torch.equal(interpolate_features(a, b, 1.0), a)
    assert torch.equal(interpolate_features(a, b, 0.0), b)


def test_interpolate_features_degenerate():
    e1 = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    with pytest.raises(DegeneratePairError):
        interpolate_features(e1, -e1, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_interpolate_features_unit_norm(seed, r):
    g = torch.Generator().manual_seed(seed)
    a, b = unit_rows(g, 3, 8), unit_rows(g, 3, 8)
    out = interpolate_features(a, b, r)
    assert torch.allclose(out.norm(dim=1), torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_interpolate_features_is_detached(gen):
    a = unit_rows(gen, 3, 8).requires_grad_(True)
    b = unit_rows(gen, 3, 8).requires_grad_(True)
    assert not interpolate_features(a, b, 0.4).requires_grad


def test_local_loss_examples():
    assert float(local_loss(E1, E1, E1, 0.2)) == pytest.approx(0.0, abs=1e-15)
    assert float(local_loss(E1, E1, E2, 0.2)) == pytest.approx(-5.0, abs=1e-12)
    # conventional form adds the positive to the normaliser
    assert float(local_loss(E1, E1, E2, 0.2, positive_in_denominator=True)) == pytest.approx(INFONCE_HAND, abs=1e-12)


def test_local_loss_matches_loop(gen):
    vm, vt, neg = unit_rows(gen, 4, 8), unit_rows(gen, 4, 8), unit_rows(gen, 16, 8)
    assert float(local_loss(vm, vt, neg, 0.2)) == pytest.approx(local_loop(vm.numpy(), vt.numpy(), neg.numpy(), 0.2), rel=1e-10)


def test_local_loss_no_gradient_into_target(gen):
    vm = unit_rows(gen, 4, 8).requires_grad_(True)
    vt = unit_rows(gen, 4, 8).requires_grad_(True)
    neg = unit_rows(gen, 16, 8).requires_grad_(True)
    local_loss(vm, vt, neg, 0.2).backward()
    assert vt.grad is None
    assert neg.grad is None
    assert vm.grad is not None


def test_local_loss_ratio_mismatch():
    with pytest.raises(ContractError):
        local_loss(E1, E1, E2, 0.2, pixel_ratio=[0.75], feature_ratio=[0.7])
    with pytest.raises(StateError):
        local_loss(E1, E1, torch.zeros(0, 2, dtype=torch.float64))


def test_total_loss():
    b = total_loss(0.5, 0.2, 0.1, 1.0, 2.0)
    assert float(b.total) == pytest.approx(0.9, abs=1e-15)
    assert float(total_loss(0.5, 0.2, 0.1, 0.0, 0.0).total) == 0.5
    for lam in (0.0, 1.0, 3.0):
        assert float(total_loss(0.5, 0.2, 0.1, lam, 0.0).total) == pytest.approx(0.5 + 0.2 * lam, abs=1e-15)
        assert float(total_loss(0.5, 0.2, 0.1, 0.0, lam).total) == pytest.approx(0.5 + 0.1 * lam, abs=1e-15)
    with pytest.raises(NumericError, match="global"):
        total_loss(0.5, float("nan"), 0.1)
    with pytest.raises(ParameterError):
        total_loss(0.5, 0.2, 0.1, -1.0, 0.0)


def test_no_gradient_into_target_or_bank(gen):
    v = unit_rows(gen, 4, 8).requires_grad_(True)
    v_hat = unit_rows(gen, 4, 8).requires_grad_(True)
    v_bar = unit_rows(gen, 4, 8).requires_grad_(True)
    neg = unit_rows(gen, 16, 8).requires_grad_(True)
    (infonce(v, v_hat, neg) + global_loss(v, v_bar, neg)).backward()
    assert v_hat.grad is None and v_bar.grad is None and neg.grad is None
    assert v.grad is not None


@pytest.mark.parametrize("which", ["infonce", "global", "local"])
def test_gradient_matches_finite_differences(which):
    g = torch.Generator().manual_seed(7)
    v0, other, neg = unit_rows(g, 4, 8), unit_rows(g, 4, 8), unit_rows(g, 16, 8)
    impl = {
        "infonce": lambda v: infonce(v, other, neg, 0.2),
        "global": lambda v: global_loss(v, other, neg, 0.1, 0.04),
        "local": lambda v: local_loss(v, other, neg, 0.2),
    }[which]
    loop = {
        "infonce": lambda v: infonce_loop(v, other.numpy(), neg.numpy(), 0.2),
        "global": lambda v: global_loop(v, other.numpy(), neg.numpy(), 0.1, 0.04),
        "local": lambda v: local_loop(v, other.numpy(), neg.numpy(), 0.2),
    }[which]
    v = v0.clone().requires_grad_(True)
    impl(v).backward()
    numeric = central_difference(loop, v0.numpy())
    assert relative_error(v.grad.numpy(), numeric) < 1e-5


def test_infonce_logit_shift_invariance(gen):
    # a common logit offset c leaves the softmax unchanged
    v, v_hat, neg = unit_rows(gen, 4, 8), unit_rows(gen, 4, 8), unit_rows(gen, 16, 8)
    tau = 0.2
    pos = (v * v_hat).sum(1) / tau
    neg_logits = v @ neg.T / tau
    base = float(infonce(v, v_hat, neg, tau))
    assert float(infonce_from_logits(pos, neg_logits)) == base
    for c in (-50.0, 3.7, 100.0):
        assert float(infonce_from_logits(pos + c, neg_logits + c)) == pytest.approx(base, abs=1e-9)
