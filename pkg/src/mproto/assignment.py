"""Token-to-prototype assignment by optimal transport.

Entity tokens of class ``c`` are transported onto the ``M`` prototypes of
``c`` with an even column marginal.  Tokens labeled ``O`` are transported
onto all ``K*M`` prototypes (denoised transport): a fraction ``beta`` of
their mass must land on ``O`` prototypes, the rest is spread evenly over
the entity prototypes, and an ``O`` token that ends up on an entity
prototype is treated as a missed entity and dropped from the loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusError
from .ot import ContractError, hard_assign, sinkhorn
from .prototypes import similarity

logger = logging.getLogger(__name__)

_warned = False


def _warn_unconverged(what, plan):
    # one line per process; the trainer counts every occurrence in its metrics
    global _warned
    if not _warned:
        logger.warning(
            "%s: Sinkhorn stopped after %d iterations without meeting the marginal "
            "tolerance; using the returned plan (further occurrences are only counted)",
            what,
            plan.n_iterations_run,
        )
        _warned = True


@dataclass
class ClassPartition:
    members: list  # per class, token indices carrying that distant label

    @property
    def outside(self):
        return self.members[0]

    @property
    def entity(self):
        return np.concatenate(self.members[1:]) if len(self.members) > 1 else np.array([], int)


def partition(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    return ClassPartition([np.flatnonzero(labels == c) for c in range(n_classes)])


@dataclass
class AssignmentResult:
    assigned: np.ndarray  # flat prototype index per token
    noise_mask: np.ndarray  # w per token, 0 marks a suspected missed entity
    plans: dict = field(default_factory=dict)  # class index (or "dot") -> TransportPlan

    @property
    def n_unconverged(self):
        return sum(not p.converged for p in self.plans.values())


@dataclass
class SolverSettings:
    reg_weight: float = 1e-3
    max_iters: int = 100
    reg_schedule: object = None


def _solve(cost, a, b, solver, what):
    plan = sinkhorn(cost, a, b, solver.reg_weight, solver.max_iters, reg_schedule=solver.reg_schedule)
    if not plan.converged:
        _warn_unconverged(what, plan)
    return plan


def assign_entity_tokens(features, bank, part, solver=None, sim=None, classes=None):
    """Transport the tokens of each class onto that class's prototypes.

    Returns ``{class: (token indices, flat prototype indices, plan)}``;
    classes without tokens are skipped.
    """
    solver = solver or SolverSettings()
    if sim is None:
        sim = similarity(features, bank)
    M = bank.M
    out = {}
    for c in classes if classes is not None else range(1, bank.K):
        idx = part.members[c]
        if len(idx) == 0:
            continue
        cost = 1.0 - sim[np.ix_(idx, np.arange(c * M, (c + 1) * M))]
        a = np.ones(len(idx))
        b = np.full(M, len(idx) / M)
        plan = _solve(cost, a, b, solver, f"class {bank.class_names[c]}")
        out[c] = (idx, c * M + hard_assign(plan), plan)
    return out


def build_dot_constraints(n_outside, n_classes, n_prototypes, beta):
    """Marginals for transporting ``n_outside`` O tokens onto all prototypes."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if n_classes < 2:
        raise ContractError("need at least one entity class")
    if n_outside < 1:
        raise ContractError("need at least one O token")
    a = np.ones(n_outside)
    b = np.concatenate([
        np.full(n_prototypes, beta * n_outside / n_prototypes),
        np.full((n_classes - 1) * n_prototypes, (1.0 - beta) * n_outside / ((n_classes - 1) * n_prototypes)),
    ])
    return a, b


def assign_o_tokens(features, bank, part, beta, solver=None, sim=None):
    """Denoised transport of the O-labeled tokens onto every prototype.

    Returns ``(token indices, flat prototype indices, w, plan)`` where
    ``w[i] = 1`` iff token i landed on an O prototype.
    """
    solver = solver or SolverSettings()
    if sim is None:
        sim = similarity(features, bank)
    idx = part.outside
    if len(idx) == 0:
        raise ContractError("no O-labeled tokens to assign")
    cost = 1.0 - sim[idx]
    a, b = build_dot_constraints(len(idx), bank.K, bank.M, beta)
    plan = _solve(cost, a, b, solver, "denoised O assignment")
    assigned = hard_assign(plan)
    w = (assigned < bank.M).astype(np.float64)
    return idx, assigned, w, plan


def assign_batch(features, bank, labels, beta, solver=None, denoise=True, sim=None):
    """Full assignment for a batch: entity OT plus (denoised) O assignment.

    With ``denoise=False`` every O token is transported onto the O
    prototypes only and keeps weight 1.
    """
    if sim is None:
        sim = similarity(features, bank)
    n = sim.shape[0]
    part = partition(labels, bank.K)
    assigned = np.full(n, -1, dtype=np.int64)
    w = np.ones(n)
    plans = {}
    classes = range(1, bank.K) if denoise else range(bank.K)
    for c, (idx, protos, plan) in assign_entity_tokens(features, bank, part, solver, sim, classes).items():
        assigned[idx] = protos
        plans[c] = plan
    if denoise and len(part.outside):
        idx, protos, wo, plan = assign_o_tokens(features, bank, part, beta, solver, sim)
        assigned[idx] = protos
        w[idx] = wo
        plans["dot"] = plan
    return AssignmentResult(assigned, w, plans)


def transport_plan_diagnostic(results, labels, gold, n_classes, n_prototypes):
    """Counts of missed entity tokens: rows = gold class, columns = class of
    the prototype the O assignment chose.

    ``results``, ``labels`` and ``gold`` are aligned sequences (one entry per
    batch) or single arrays.
    """
    if isinstance(results, AssignmentResult):
        results, labels, gold = [results], [labels], [gold]
    if gold is None or any(g is None for g in gold):
        raise CorpusError("gold labels are required for the transport diagnostic")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for res, lab, g in zip(results, labels, gold):
        lab, g = np.asarray(lab), np.asarray(g)
        missed = np.flatnonzero((lab == 0) & (g != 0))
        proto_class = res.assigned[missed] // n_prototypes
        np.add.at(counts, (g[missed], proto_class), 1)
    return counts
