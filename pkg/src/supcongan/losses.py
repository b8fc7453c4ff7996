"""The supervised contrastive loss family and its training objectives.

The generic loss contrasts each anchor row against a reference matrix: for
anchor i with positive index set P(i), the contribution is
``(-1/|P(i)|) * sum_{p in P(i)} log( exp(s_ip/tau) / sum_{j != i} exp(s_ij/tau) )``
with s the cosine-similarity matrix. Anchors with an empty positive set
contribute zero and are counted, not errored.

All reductions are plain sums over the 2N anchors (no batch-mean), so the
lambda weights must be retuned when the batch size changes.

Cross-modal note: the ``j != i`` exclusion is applied by *index* over the
reference matrix. For image-text terms that drops the anchor's own pair
from the denominator; ``include_self=True`` keeps it in both the
denominator and the positive set instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_TOL = 1e-6


class LossPreconditionError(ValueError):
    """A loss input violates its contract (normalization, mask shape...)."""


@dataclass(frozen=True)
class LossWeights:
    """tau: contrastive temperature; lambda1: pre-train supcon weight;
    lambda2: GAN-phase supcon weight; tau_origin: matching-loss temperature."""

    tau: float = 0.5
    lambda1: float = 0.5
    lambda2: float = 0.1
    tau_origin: float = 0.1

    def __post_init__(self):
        if not self.tau > 0 or not self.tau_origin > 0:
            raise ValueError(f"temperatures must be positive, got tau={self.tau}, tau_origin={self.tau_origin}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be non-negative")


@dataclass
class LossReport:
    """Scalar view of one step's objective, component by component."""

    total: float
    components: dict[str, float] = field(default_factory=dict)
    skipped_anchor_count: int = 0

    def __post_init__(self):
        for name, value in self.components.items():
            if not math.isfinite(value):
                raise FloatingPointError(f"loss component {name!r} is {value}")
        if not math.isfinite(self.total):
            raise FloatingPointError(f"loss total is {self.total}")

    def as_records(self) -> dict[str, float]:
        out = dict(self.components)
        out["total"] = self.total
        return out


def _check_normalized(m: Tensor, name: str) -> None:
    norms = np.linalg.norm(m.data, axis=1)
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > NORM_TOL:
        raise LossPreconditionError(
            f"{name} rows must be unit-norm (worst deviation {worst:.2e})"
        )


def supcon(
    anchors: Tensor,
    references: Tensor,
    mask: np.ndarray,
    tau: float,
    include_self: bool = False,
) -> tuple[Tensor, int]:
    """Generic supervised contrastive loss, summed over anchors.

    ``mask[i, p]`` marks p as a positive for anchor i. Returns the scalar
    loss tensor and the number of anchors skipped for lack of positives.
    """
    if tau <= 0:
        raise LossPreconditionError(f"tau must be positive, got {tau}")
    if anchors.shape != references.shape:
        raise LossPreconditionError(
            f"anchor/reference shapes differ: {anchors.shape} vs {references.shape}"
        )
    n = anchors.rows
    if mask.shape != (n, n):
        raise LossPreconditionError(f"mask shape {mask.shape} does not match batch {n}")
    if not include_self and mask.diagonal().any():
        raise LossPreconditionError("positive mask has True on its diagonal")
    _check_normalized(anchors, "anchors")
    _check_normalized(references, "references")

    sims = T.scale(T.matmul(anchors, T.transpose(references)), 1.0 / tau)
    lse = T.log_sum_exp_rows(sims, exclude_diagonal=not include_self)
    log_prob = T.sub(sims, lse)  # column vector broadcasts across columns

    counts = mask.sum(axis=1)
    skipped = int(np.sum(counts == 0))
    weights = np.zeros_like(mask, dtype=np.float64)
    live = counts > 0
    weights[live] = mask[live] / counts[live, None]
    loss = T.scale(T.sum_all(T.mul_const(log_prob, weights)), -1.0)
    return loss, skipped


def sup_img(v_tilde: Tensor, mask: np.ndarray, tau: float) -> tuple[Tensor, int]:
    """Image-image term: anchors and references are both image embeddings."""
    return supcon(v_tilde, v_tilde, mask, tau)


def sup_txt(e_tilde: Tensor, mask: np.ndarray, tau: float) -> tuple[Tensor, int]:
    """Text-text term on caption embeddings."""
    return supcon(e_tilde, e_tilde, mask, tau)


def sup_i2t(
    e_tilde: Tensor,
    v_tilde: Tensor,
    mask: np.ndarray,
    tau: float,
    include_self: bool = False,
) -> tuple[Tensor, int]:
    """Symmetric cross-modal term: text-vs-images plus images-vs-text.

    With ``include_self`` the anchor's own pair (index i) joins the
    positives and the denominator of both directions.
    """
    if e_tilde.cols != v_tilde.cols:
        raise LossPreconditionError(
            f"modality dims differ: text {e_tilde.shape} vs image {v_tilde.shape}"
        )
    used_mask = mask
    if include_self:
        used_mask = mask | np.eye(mask.shape[0], dtype=bool)
    a, skipped_a = supcon(e_tilde, v_tilde, used_mask, tau, include_self=include_self)
    b, skipped_b = supcon(v_tilde, e_tilde, used_mask, tau, include_self=include_self)
    return T.add(a, b), skipped_a + skipped_b


def origin_matching_loss(e: Tensor, v: Tensor, tau: float) -> Tensor:
    """Sentence-level symmetric matching loss on index-aligned pairs.

    Mean cross-entropy of row-softmax(sim/tau) against the diagonal,
    averaged over the text->image and image->text directions.
    """
    if e.rows == 0:
        raise LossPreconditionError("empty batch")
    if e.shape != v.shape:
        raise LossPreconditionError(f"shapes differ: {e.shape} vs {v.shape}")
    _check_normalized(e, "text embeddings")
    _check_normalized(v, "image embeddings")
    n = e.rows
    eye = np.eye(n)
    sims = T.scale(T.matmul(e, T.transpose(v)), 1.0 / tau)

    def direction(s: Tensor) -> Tensor:
        lse = T.log_sum_exp_rows(s)
        diag = T.sum_all(T.mul_const(s, eye))
        return T.scale(T.sub(T.sum_all(lse), diag), 1.0 / n)

    return T.scale(T.add(direction(sims), direction(T.transpose(sims))), 0.5)


def hinge_d_loss(
    d_real_matched: Tensor, d_fake_matched: Tensor, d_real_mismatched: Tensor
) -> Tensor:
    """Matching-aware hinge discriminator loss over score columns."""
    real = T.mean_all(T.relu(T.add_scalar(T.scale(d_real_matched, -1.0), 1.0)))
    fake = T.mean_all(T.relu(T.add_scalar(d_fake_matched, 1.0)))
    mismatch = T.mean_all(T.relu(T.add_scalar(d_real_mismatched, 1.0)))
    return T.add(real, T.scale(T.add(fake, mismatch), 0.5))


def hinge_g_adv(d_fake_matched: Tensor) -> Tensor:
    """Generator adversarial term: -mean D(G(z, e), e)."""
    return T.scale(T.mean_all(d_fake_matched), -1.0)


def aux_cross_entropy(logits: Tensor, labels: list[tuple[int, ...]]) -> Tensor:
    """Mean softmax cross-entropy against exclusive class labels."""
    oversized = [ls for ls in labels if len(ls) != 1]
    if oversized:
        raise LossPreconditionError(
            "auxiliary cross-entropy needs single-label data; "
            f"got a label set of size {len(oversized[0])}"
        )
    n, k = logits.shape
    if len(labels) != n:
        raise LossPreconditionError(f"{len(labels)} labels for {n} rows")
    onehot = np.zeros((n, k))
    for i, ls in enumerate(labels):
        if ls[0] >= k:
            raise LossPreconditionError(f"label {ls[0]} out of range for {k} classes")
        onehot[i, ls[0]] = 1.0
    lse = T.sum_all(T.log_sum_exp_rows(logits))
    true_logits = T.sum_all(T.mul_const(logits, onehot))
    return T.scale(T.sub(lse, true_logits), 1.0 / n)


# ---------------------------------------------------------------------------
# objective combiners (scalar bookkeeping; the trainer builds the matching
# tensor expressions and cross-checks totals against these reports)


def pretrain_objective(
    origin: float,
    sup_img_val: float,
    sup_txt_val: float,
    sup_i2t_val: float,
    weights: LossWeights,
    skipped_anchor_count: int = 0,
) -> LossReport:
    """origin + lambda1 * (img + txt + i2t)."""
    total = origin + weights.lambda1 * (sup_img_val + sup_txt_val + sup_i2t_val)
    return LossReport(
        total=total,
        components={
            "origin": origin,
            "sup_img": sup_img_val,
            "sup_txt": sup_txt_val,
            "sup_i2t": sup_i2t_val,
        },
        skipped_anchor_count=skipped_anchor_count,
    )


def gan_objectives(
    branch_a: tuple[float, float],
    branch_b: tuple[float, float],
    sup_img_fake: float,
    sup_i2t_fake: float,
    weights: LossWeights,
    aux_ce: float = 0.0,
    skipped_anchor_count: int = 0,
) -> tuple[LossReport, LossReport]:
    """Combine per-branch (D loss, G adversarial) terms into the two-branch
    objectives: D is the plain sum, G adds the lambda2-weighted supcon terms
    computed on generated-image embeddings."""
    d_a, g_a = branch_a
    d_b, g_b = branch_b
    d_report = LossReport(
        total=d_a + d_b, components={"adv_d_a": d_a, "adv_d_b": d_b}
    )
    g_total = g_a + g_b + weights.lambda2 * (sup_img_fake + sup_i2t_fake + aux_ce)
    g_report = LossReport(
        total=g_total,
        components={
            "adv_g_a": g_a,
            "adv_g_b": g_b,
            "sup_img": sup_img_fake,
            "sup_i2t": sup_i2t_fake,
            "aux_ce": aux_ce,
        },
        skipped_anchor_count=skipped_anchor_count,
    )
    return d_report, g_report
