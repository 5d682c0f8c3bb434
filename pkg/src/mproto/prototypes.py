"""Multi-prototype bank: cosine scoring, prediction, losses and EMA updates.

Prototypes are stored as a ``(K, M, D)`` array.  Wherever a flat index is
used, prototype ``(c, m)`` sits at column ``c * M + m`` so that the columns
of a similarity matrix are grouped by class, class 0 (``O``) first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ot import ContractError


@dataclass
class PrototypeBank:
    vectors: np.ndarray
    class_names: list = field(default_factory=list)
    ema_ratio: float = 0.9

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 3:
            raise ContractError(f"prototype array must be (K, M, D), got {self.vectors.shape}")
        K, M, _ = self.vectors.shape
        if K < 2 or M < 1:
            raise ContractError(f"need K >= 2 classes and M >= 1 prototypes, got K={K}, M={M}")
        if not self.class_names:
            self.class_names = ["O"] + [f"C{i}" for i in range(1, K)]
        if len(self.class_names) != K:
            raise ContractError(f"{len(self.class_names)} class names for {K} classes")
        if not 0.0 <= self.ema_ratio < 1.0:
            raise ValueError(f"ema_ratio must lie in [0, 1), got {self.ema_ratio}")
        norms = np.linalg.norm(self.vectors, axis=-1)
        if not np.all(np.isfinite(self.vectors)) or np.any(norms <= 0):
            raise ValueError("prototype vectors must be finite with positive norm")

    @property
    def K(self):
        return self.vectors.shape[0]

    @property
    def M(self):
        return self.vectors.shape[1]

    @property
    def D(self):
        return self.vectors.shape[2]

    @property
    def flat(self):
        return self.vectors.reshape(self.K * self.M, self.D)

    def class_of(self, flat_index):
        return np.asarray(flat_index) // self.M

    def copy(self):
        return PrototypeBank(self.vectors.copy(), list(self.class_names), self.ema_ratio)


def init_bank(class_names, n_prototypes, dim, ema_ratio=0.9, seed=0):
    """Unit-length prototypes drawn i.i.d. from a standard Gaussian."""
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((len(class_names), n_prototypes, dim))
    vecs /= np.linalg.norm(vecs, axis=-1, keepdims=True)
    return PrototypeBank(vecs, list(class_names), ema_ratio)


def _unit_rows(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ContractError(f"features must be (n, D), got shape {features.shape}")
    norms = np.linalg.norm(features, axis=1)
    zero = np.flatnonzero(~(norms > 0))
    if len(zero):
        raise ValueError(f"token {int(zero[0])} has a zero-norm feature vector")
    return features / norms[:, None], norms


def similarity(features, bank):
    """Cosine similarity of every token to every prototype, shape (n, K*M)."""
    unit, _ = _unit_rows(features)
    if unit.shape[1] != bank.D:
        raise ContractError(f"feature dim {unit.shape[1]} != prototype dim {bank.D}")
    protos = bank.flat / np.linalg.norm(bank.flat, axis=1, keepdims=True)
    return np.clip(unit @ protos.T, -1.0, 1.0)


def similarity_backward(features, bank, grad_sim):
    """Pull a gradient w.r.t. the similarity matrix back onto the features.

    d s(h, p) / dh = (p_hat - s * h_hat) / |h|.
    """
    unit, norms = _unit_rows(features)
    protos = bank.flat / np.linalg.norm(bank.flat, axis=1, keepdims=True)
    sim = unit @ protos.T
    grad_sim = np.asarray(grad_sim, dtype=np.float64)
    along = grad_sim @ protos
    radial = np.sum(grad_sim * sim, axis=1, keepdims=True) * unit
    return (along - radial) / norms[:, None]


def classify(sim, n_prototypes):
    """Class of the most similar prototype (first one on ties)."""
    sim = np.asarray(sim)
    return np.argmax(sim, axis=1) // n_prototypes


def _check_assigned(assigned, n_tokens, n_columns):
    assigned = np.asarray(assigned, dtype=np.int64)
    if assigned.shape != (n_tokens,):
        raise ContractError(f"expected {n_tokens} assignments, got shape {assigned.shape}")
    if np.any(assigned < 0) or np.any(assigned >= n_columns):
        raise ContractError(f"assigned prototype indices must lie in [0, {n_columns})")
    return assigned


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,):
        raise ContractError(f"expected {n} weights, got shape {weights.shape}")
    return weights


def log_softmax(sim):
    shifted = sim - sim.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ce_loss(sim, assigned, weights=None):
    """Masked cross-entropy against assigned prototypes.

    Returns ``(loss, grad)`` where ``grad`` has the shape of ``sim``.
    Tokens with weight 0 contribute neither loss nor gradient.
    """
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    assigned = _check_assigned(assigned, n, sim.shape[1])
    w = _weights(weights, n)
    logp = log_softmax(sim)
    rows = np.arange(n)
    loss = -float(np.sum(w * logp[rows, assigned]))
    grad = np.exp(logp)
    grad[rows, assigned] -= 1.0
    grad *= w[:, None]
    return loss, grad


def compactness_loss(features, bank, assigned, weights=None):
    """Sum of squared cosine distances to the assigned prototypes.

    Returns ``(loss, grad)`` with ``grad`` w.r.t. the features.  The bank is
    treated as a constant.
    """
    unit, norms = _unit_rows(features)
    n = unit.shape[0]
    assigned = _check_assigned(assigned, n, bank.K * bank.M)
    w = _weights(weights, n)
    protos = bank.flat[assigned]
    protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    s = np.clip(np.sum(unit * protos, axis=1), -1.0, 1.0)
    dist = 1.0 - s
    loss = float(np.sum(w * dist**2))
    ds = -2.0 * w * dist
    grad = ds[:, None] * (protos - s[:, None] * unit) / norms[:, None]
    return loss, grad


def total_loss(ce, compact, compact_weight):
    return ce + compact_weight * compact


def ema_update(bank, features, assigned):
    """Move each prototype toward the mean of the features assigned to it.

    ``p <- a * p + (1 - a) * mean``.  Prototypes with no assigned feature keep
    their value.  Mutates and returns ``bank``.
    """
    features = np.asarray(features, dtype=np.float64)
    assigned = np.asarray(assigned, dtype=np.int64)
    if features.ndim != 2 or features.shape[1] != bank.D:
        raise ContractError(f"features of shape {features.shape} do not match prototype dim {bank.D}")
    n_cols = bank.K * bank.M
    assigned = _check_assigned(assigned, features.shape[0], n_cols)
    counts = np.bincount(assigned, minlength=n_cols)
    sums = np.zeros((n_cols, bank.D))
    np.add.at(sums, assigned, features)
    flat = bank.flat.copy()
    hit = counts > 0
    means = sums[hit] / counts[hit, None]
    flat[hit] = bank.ema_ratio * flat[hit] + (1.0 - bank.ema_ratio) * means
    bank.vectors = flat.reshape(bank.vectors.shape)
    return bank


def save_bank(path, bank):
    """Write the bank as ``.npz`` with keys K, M, D, class_names, ema_ratio and
    ``vectors`` (row-major ``(K*M, D)``, class-major)."""
    with open(path, "wb") as fh:
        np.savez(fh, **bank_arrays(bank, prefix=""))


def bank_arrays(bank, prefix="bank/"):
    return {
        prefix + "K": np.int64(bank.K),
        prefix + "M": np.int64(bank.M),
        prefix + "D": np.int64(bank.D),
        prefix + "class_names": np.array(bank.class_names),
        prefix + "ema_ratio": np.float64(bank.ema_ratio),
        prefix + "vectors": bank.flat,
    }


def bank_from_arrays(arrays, prefix="bank/"):
    K, M, D = (int(arrays[prefix + k]) for k in ("K", "M", "D"))
    vectors = np.asarray(arrays[prefix + "vectors"], dtype=np.float64).reshape(K, M, D)
    names = [str(s) for s in arrays[prefix + "class_names"]]
    return PrototypeBank(vectors, names, float(arrays[prefix + "ema_ratio"]))


def load_bank(path):
    with np.load(path) as data:
        return bank_from_arrays(data, prefix="")
