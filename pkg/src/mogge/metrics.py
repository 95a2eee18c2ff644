"""Clustering and zero-pattern evaluation.

Clustering quality: hard labels from the posterior (Bayes allocation
rule), best-permutation classification rate, adjusted Rand index.

Zero-pattern recovery uses a nonstandard naming that we keep for
comparability with the regularized-mixture literature: *sensitivity* is
the proportion of truly zero coefficients estimated as exactly zero, and
*specificity* the proportion of truly nonzero coefficients estimated as
nonzero.  Zeroness always means equality to ``0.0``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import (
    DataSet,
    MoggeParams,
    UnsupportedConfigError,
    posterior_responsibilities,
)

MAX_PERMUTATION_K = 8


def bayes_labels(data: DataSet, params: MoggeParams) -> np.ndarray:
    """Hard assignment to the highest-responsibility component (1-based).

    Ties go to the smallest component index.
    """
    tau = posterior_responsibilities(data, params).tau
    return np.argmax(tau, axis=1) + 1


def _validate_labels(labels, K: int, name: str) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d label vector")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must contain integers")
    if arr.size and (arr.min() < 1 or arr.max() > K):
        raise ValueError(f"{name} must lie in 1..{K}")
    return arr.astype(int)


def best_label_permutation(true_labels, est_labels, K: int):
    """Agreement-maximizing relabeling of the estimated partition.

    Returns ``(rate, perm)`` where ``perm[j - 1]`` is the true-side label
    assigned to estimated label ``j``.  Exhaustive over all K!
    permutations, so K is capped at 8.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > MAX_PERMUTATION_K:
        raise UnsupportedConfigError(
            f"permutation matching supports K <= {MAX_PERMUTATION_K}, got {K}"
        )
    t = _validate_labels(true_labels, K, "true_labels")
    e = _validate_labels(est_labels, K, "est_labels")
    if t.shape != e.shape:
        raise ValueError("label vectors must have equal length")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (t - 1, e - 1), 1)
    best_rate, best_perm = -1.0, None
    for perm in itertools.permutations(range(K)):
        agree = sum(counts[perm[j], j] for j in range(K))
        rate = agree / t.size
        if rate > best_rate:
            best_rate = rate
            best_perm = tuple(q + 1 for q in perm)
    return best_rate, best_perm


def classification_rate(true_labels, est_labels, K: int) -> float:
    """Correct classification rate maximized over label permutations."""
    rate, _ = best_label_permutation(true_labels, est_labels, K)
    return rate


def adjusted_rand_index(true_labels, est_labels) -> float:
    """Adjusted Rand index from the contingency table."""
    t = np.asarray(true_labels)
    e = np.asarray(est_labels)
    if t.ndim != 1 or e.ndim != 1 or t.shape != e.shape:
        raise ValueError("label vectors must be 1-d and of equal length")
    n = t.size
    if n < 2:
        raise ValueError("ARI needs at least two observations")
    _, ti = np.unique(t, return_inverse=True)
    _, ei = np.unique(e, return_inverse=True)
    C = np.zeros((ti.max() + 1, ei.max() + 1), dtype=np.int64)
    np.add.at(C, (ti, ei), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = float(np.sum(comb2(C)))
    a = float(np.sum(comb2(C.sum(axis=1))))
    b = float(np.sum(comb2(C.sum(axis=0))))
    expected = a * b / comb2(n)
    max_index = 0.5 * (a + b)
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


@dataclass(frozen=True)
class BlockScore:
    """Zero-recovery scores for one coefficient block.

    ``s1``/``s2`` are ``None`` when their denominator is empty (no true
    zeros / no true nonzeros in the block).
    """

    kind: str  # "expert" or "gate"
    component: int  # 1-based index of the matched true component
    s1: float | None
    s2: float | None
    n_true_zero: int
    n_true_nonzero: int


@dataclass(frozen=True)
class SparsityReport:
    """Per-block sensitivity/specificity after component matching."""

    blocks: tuple[BlockScore, ...]

    def block(self, kind: str, component: int) -> BlockScore:
        for b in self.blocks:
            if b.kind == kind and b.component == component:
                return b
        raise KeyError(f"no {kind} block for component {component}")

    def summary(self) -> dict[str, BlockScore]:
        """Named blocks for reporting.

        With K=2 only one gating function is effectively free, so the
        summary scores the experts of both components and the gate of
        component 1.  Other K list every block.
        """
        K = max(b.component for b in self.blocks)
        out = {}
        for k in range(1, K + 1):
            out[f"expert_{k}"] = self.block("expert", k)
        if K == 2:
            out["gate"] = self.block("gate", 1)
        else:
            for k in range(1, K + 1):
                out[f"gate_{k}"] = self.block("gate", k)
        return out


def _score_block(kind: str, component: int, true_vec: np.ndarray,
                 est_vec: np.ndarray) -> BlockScore:
    true_zero = true_vec == 0.0
    est_zero = est_vec == 0.0
    nz, nnz = int(true_zero.sum()), int((~true_zero).sum())
    s1 = float(np.sum(true_zero & est_zero)) / nz if nz else None
    s2 = float(np.sum(~true_zero & ~est_zero)) / nnz if nnz else None
    return BlockScore(
        kind=kind, component=component, s1=s1, s2=s2,
        n_true_zero=nz, n_true_nonzero=nnz,
    )


def _match_components(true_params: MoggeParams, est_params: MoggeParams,
                      data: DataSet | None, true_labels) -> list[int]:
    """For each true component k (0-based), the matched estimated index.

    With evaluation data the match comes from the agreement-maximizing
    label permutation; otherwise from the parameter-distance-minimizing
    permutation over (mu, beta) blocks.
    """
    K = true_params.K
    if data is not None and true_labels is not None:
        est_labels = bayes_labels(data, est_params)
        _, perm = best_label_permutation(true_labels, est_labels, K)
        # perm[j-1] is the true label for estimated label j: invert it
        matched = [0] * K
        for j in range(K):
            matched[perm[j] - 1] = j
        return matched
    best_cost, best_order = np.inf, None
    for order in itertools.permutations(range(K)):
        cost = 0.0
        for k, m in enumerate(order):
            cost += float(
                np.sum((true_params.gating[k].mu - est_params.gating[m].mu) ** 2)
            )
            cost += float(
                np.sum((true_params.experts[k].beta - est_params.experts[m].beta) ** 2)
            )
        if cost < best_cost:
            best_cost, best_order = cost, order
    return list(best_order)


def match_components(reference: MoggeParams, est: MoggeParams) -> list[int]:
    """For each reference component (0-based), the index of the estimated
    component matched to it by minimal (mu, beta) parameter distance."""
    if reference.K != est.K or reference.p != est.p:
        raise ValueError("parameter sets must share K and p")
    return _match_components(reference, est, None, None)


def sensitivity_specificity(true_params: MoggeParams, est_params: MoggeParams,
                            data: DataSet | None = None,
                            true_labels=None) -> SparsityReport:
    """Zero-pattern recovery of expert coefficients and gating means.

    Estimated components are matched to the true ones first: via the
    best label permutation on ``data`` (with ``true_labels``) when given,
    else by minimal parameter distance.
    """
    if true_params.d != 1 or est_params.d != 1:
        raise UnsupportedConfigError("zero-pattern scoring requires d = 1")
    if true_params.K != est_params.K or true_params.p != est_params.p:
        raise ValueError("parameter sets must share K and p")
    matched = _match_components(true_params, est_params, data, true_labels)
    blocks = []
    for k, m in enumerate(matched):
        blocks.append(
            _score_block(
                "expert", k + 1,
                true_params.experts[k].beta, est_params.experts[m].beta,
            )
        )
    for k, m in enumerate(matched):
        blocks.append(
            _score_block(
                "gate", k + 1,
                true_params.gating[k].mu, est_params.gating[m].mu,
            )
        )
    return SparsityReport(blocks=tuple(blocks))
