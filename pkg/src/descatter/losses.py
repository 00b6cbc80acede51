"""Training objective: cross-entropy plus the Lovasz-Softmax surrogate of
the Jaccard index. Both take softmax probabilities of shape [C,N] (columns
sum to 1) and integer targets of shape [N]; both are differentiable nodes
in the autodiff graph.
"""

import numpy as np

from .autodiff import Tensor, _as_tensor, _node, add
from .errors import ShapeMismatch

PROB_FLOOR = 1e-12


def _check(probs, targets):
    targets = np.asarray(targets)
    if probs.data.ndim != 2:
        raise ShapeMismatch(f"expected [C,N] probabilities, got "
                            f"{probs.data.shape}")
    if targets.shape != (probs.data.shape[1],):
        raise ShapeMismatch(f"targets {targets.shape} vs probs "
                            f"{probs.data.shape}")
    if targets.size and (targets.min() < 0
                         or targets.max() >= probs.data.shape[0]):
        raise ShapeMismatch("target class id out of range")
    return targets.astype(np.int64)


def cross_entropy(probs, targets, class_weights=None) -> Tensor:
    """Mean negative log-probability of the target class, with a 1e-12
    probability floor. Optional per-class weights follow the usual
    weighted-mean convention (normalized by the summed weights)."""
    probs = _as_tensor(probs)
    targets = _check(probs, targets)
    n = targets.shape[0]
    cols = np.arange(n)
    p = probs.data[targets, cols]
    p_eff = np.maximum(p, PROB_FLOOR)
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=np.float64)[targets]
        wsum = w.sum()
    else:
        w = np.ones(n)
        wsum = float(n)
    loss = float((w * -np.log(p_eff)).sum() / wsum)

    def bwd(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.data)
            live = p > PROB_FLOOR
            gp[targets[live], cols[live]] = (
                -w[live] / (wsum * p_eff[live]) * g.reshape(()))
            probs.accumulate(gp)
    return _node(np.array(loss), (probs,), bwd)


def _jaccard_extension_grad(fg_sorted):
    """Discrete gradient of the Lovasz extension of the Jaccard set loss,
    given the ground-truth indicator sorted by descending error."""
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    if len(fg_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs, targets) -> Tensor:
    """Lovasz extension of the Jaccard loss, averaged over the classes
    present in the targets. Coincides with 1 - J_c for hard predictions."""
    probs = _as_tensor(probs)
    targets = _check(probs, targets)
    C = probs.data.shape[0]
    present = [c for c in range(C) if np.any(targets == c)]
    if not present:
        def bwd_zero(g):
            pass
        return _node(np.array(0.0), (probs,), bwd_zero)

    total = 0.0
    grad = np.zeros_like(probs.data)
    for c in present:
        fg = (targets == c).astype(np.float64)
        errors = np.where(fg > 0, 1.0 - probs.data[c], probs.data[c])
        order = np.argsort(-errors, kind="stable")
        jg = _jaccard_extension_grad(fg[order])
        total += float(errors[order] @ jg)
        # d(errors)/d(p_c) is -1 on foreground, +1 elsewhere; the sort is
        # locally constant so the extension gradient scatters straight back
        gc = np.zeros_like(errors)
        gc[order] = jg
        grad[c] = np.where(fg > 0, -gc, gc)
    total /= len(present)
    grad /= len(present)

    def bwd(g):
        if probs.requires_grad:
            probs.accumulate(grad * g.reshape(()))
    return _node(np.array(total), (probs,), bwd)


def total_loss(probs, targets, class_weights=None) -> Tensor:
    """Lovasz-Softmax plus cross-entropy."""
    return add(lovasz_softmax(probs, targets),
               cross_entropy(probs, targets, class_weights))
