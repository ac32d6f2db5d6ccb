"""InfoNCE, similarity-distribution alignment, interpolation consistency, and their weighted sum.

Every function takes row-aligned ``(B, d)`` unit-norm embeddings and a ``(K, d)`` matrix of
bank negatives. Softmax and KL terms are evaluated in log space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .encoder import check_unit_norm
from .errors import ContractError, DegeneratePairError, NumericError, ParameterError, StateError

DEGENERATE_NORM = 1e-7


class Role(str, enum.Enum):
    ONLINE = "online"
    TARGET = "target"


@dataclass
class SimilarityDistribution:
    log_probs: torch.Tensor
    temperature: float
    role: Role

    @property
    def probabilities(self) -> torch.Tensor:
        return self.log_probs.exp()


@dataclass
class LossBreakdown:
    csl: torch.Tensor
    global_: torch.Tensor
    local: torch.Tensor
    total: torch.Tensor
    lambda1: float
    lambda2: float

    def as_floats(self) -> dict[str, float]:
        return {
            "csl": float(self.csl.detach()),
            "global": float(self.global_.detach()),
            "local": float(self.local.detach()),
            "total": float(self.total.detach()),
        }


def _check_tau(tau: float, name: str = "tau") -> None:
    if not tau > 0:
        raise ParameterError(f"{name} must be > 0, got {tau}")


def _check_negatives(negatives: torch.Tensor) -> None:
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise StateError("at least one negative is required")


def _finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericError(f"{what} is not finite")
    return x


def infonce(v: torch.Tensor, v_hat: torch.Tensor, negatives: torch.Tensor, tau: float = 0.2) -> torch.Tensor:
    """Mean over the batch of -log softmax of the positive logit among [positive, negatives]."""
    _check_tau(tau)
    _check_negatives(negatives)
    for x, name in ((v, "v"), (v_hat, "v_hat"), (negatives, "negatives")):
        check_unit_norm(x, name)
    if v.shape != v_hat.shape:
        raise ContractError("v and v_hat must be row-aligned")
    pos = (v * v_hat.detach()).sum(dim=1) / tau
    neg = v @ negatives.detach().T / tau
    return _finite(infonce_from_logits(pos, neg), "infonce loss")


def infonce_from_logits(pos: torch.Tensor, neg: torch.Tensor) -> torch.Tensor:
    """Mean of logsumexp([pos, neg]) - pos for (B,) positive and (B, K) negative logits."""
    logits = torch.cat([pos.unsqueeze(1), neg], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def similarity_distribution(
    features: torch.Tensor, negatives: torch.Tensor, tau: float, role: Role = Role.ONLINE
) -> SimilarityDistribution:
    _check_tau(tau)
    _check_negatives(negatives)
    check_unit_norm(features, "features")
    if role is Role.TARGET:
        features = features.detach()
    logits = features @ negatives.detach().T / tau
    return SimilarityDistribution(F.log_softmax(logits, dim=1), tau, role)


def global_loss(
    v: torch.Tensor,
    v_bar: torch.Tensor,
    negatives: torch.Tensor,
    tau_ot: float = 0.1,
    tau_tt: float = 0.04,
) -> torch.Tensor:
    """Mean KL(target || online) between bank-similarity distributions; target is detached."""
    _check_tau(tau_ot, "tau_ot")
    _check_tau(tau_tt, "tau_tt")
    online = similarity_distribution(v, negatives, tau_ot, Role.ONLINE)
    target = similarity_distribution(v_bar, negatives, tau_tt, Role.TARGET)
    kl = (target.probabilities * (target.log_probs - online.log_probs)).sum(dim=1)
    return _finite(kl.mean(), "global loss")


def _ratio_column(r, n: int, dtype) -> torch.Tensor:
    rt = torch.as_tensor(r, dtype=dtype)
    if rt.ndim == 0:
        rt = rt.expand(n)
    if rt.shape != (n,):
        raise ParameterError("ratio must be a scalar or one value per row")
    if ((rt < 0) | (rt > 1)).any():
        raise ParameterError("interpolation ratio must lie in [0, 1]")
    return rt.view(-1, 1)


def interpolation_norms(v_i: torch.Tensor, v_j: torch.Tensor, r) -> torch.Tensor:
    if v_i.ndim == 1:
        v_i, v_j = v_i.unsqueeze(0), v_j.unsqueeze(0)
    rt = _ratio_column(r, v_i.shape[0], v_i.dtype)
    return (rt * v_i.detach() + (1 - rt) * v_j.detach()).norm(dim=1)


def interpolate_features(v_i: torch.Tensor, v_j: torch.Tensor, r) -> torch.Tensor:
    """l2(r * v_i + (1 - r) * v_j), gradient-detached. Rows at r in {0, 1} return the input exactly."""
    single = v_i.ndim == 1
    a = v_i.detach().unsqueeze(0) if single else v_i.detach()
    b = v_j.detach().unsqueeze(0) if single else v_j.detach()
    if a.shape != b.shape:
        raise ParameterError("v_i and v_j must have the same shape")
    check_unit_norm(a, "v_i")
    check_unit_norm(b, "v_j")
    rt = _ratio_column(r, a.shape[0], a.dtype)
    mixed = rt * a + (1 - rt) * b
    norms = mixed.norm(dim=1, keepdim=True)
    if (norms < DEGENERATE_NORM).any():
        bad = torch.nonzero(norms[:, 0] < DEGENERATE_NORM).flatten().tolist()
        raise DegeneratePairError(f"interpolated feature norm below {DEGENERATE_NORM} for rows {bad}")
    out = mixed / norms
    out = torch.where(rt == 1, a, torch.where(rt == 0, b, out))
    return out[0] if single else out


def local_loss(
    v_mix: torch.Tensor,
    v_tilde: torch.Tensor,
    negatives: torch.Tensor,
    tau: float = 0.2,
    positive_in_denominator: bool = False,
    pixel_ratio=None,
    feature_ratio=None,
) -> torch.Tensor:
    """Mean of -(v_mix . v_tilde)/tau + logsumexp over bank logits.

    With ``positive_in_denominator=False`` the positive logit is absent from the
    normaliser, so the value can be negative.
    """
    _check_tau(tau)
    _check_negatives(negatives)
    if pixel_ratio is not None and feature_ratio is not None:
        pr = torch.as_tensor(pixel_ratio, dtype=torch.float64)
        fr = torch.as_tensor(feature_ratio, dtype=torch.float64)
        if pr.shape != fr.shape or not torch.allclose(pr, fr, rtol=0, atol=1e-9):
            raise ContractError("pixel and feature interpolation ratios differ")
    check_unit_norm(v_mix, "v_mix")
    check_unit_norm(v_tilde, "v_tilde")
    check_unit_norm(negatives, "negatives")
    if v_mix.shape != v_tilde.shape:
        raise ContractError("v_mix and v_tilde must be row-aligned")
    pos = (v_mix * v_tilde.detach()).sum(dim=1) / tau
    neg = v_mix @ negatives.detach().T / tau
    if positive_in_denominator:
        neg = torch.cat([pos.unsqueeze(1), neg], dim=1)
    loss = (torch.logsumexp(neg, dim=1) - pos).mean()
    return _finite(loss, "local loss")


def total_loss(csl, global_, local, lambda1: float = 1.0, lambda2: float = 2.0) -> LossBreakdown:
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError("loss weights must be >= 0")
    terms = {}
    for name, value in (("csl", csl), ("global", global_), ("local", local)):
        t = value if torch.is_tensor(value) else torch.tensor(float(value), dtype=torch.float64)
        if not torch.isfinite(t).all():
            raise NumericError(f"loss term {name!r} is not finite")
        terms[name] = t
    total = terms["csl"] + lambda1 * terms["global"] + lambda2 * terms["local"]
    return LossBreakdown(terms["csl"], terms["global"], terms["local"], total, lambda1, lambda2)
