"""Training loop: encode, assign, masked losses, AdamW step, EMA prototypes."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import SolverSettings, assign_batch
from .config import make_config
from .corpus import decode_spans, span_f1
from .encoder import MLPEncoder, PrecomputedEncoder, Vocabulary
from .prototypes import (
    PrototypeBank,
    bank_arrays,
    bank_from_arrays,
    ce_loss,
    classify,
    compactness_loss,
    ema_update,
    init_bank,
    similarity,
    similarity_backward,
    total_loss,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainState:
    encoder: object
    bank: PrototypeBank
    adam_m: dict
    adam_v: dict
    step: int = 0
    epoch: int = 0
    best_dev_f1: float = -1.0
    best_epoch: int = -1


def new_state(cfg, encoder, class_names):
    bank = init_bank(class_names, cfg.n_prototypes, encoder.out_dim, cfg.ema_ratio, seed=cfg.seed)
    zeros = {k: np.zeros_like(v) for k, v in encoder.params.items()}
    return TrainState(encoder, bank, zeros, {k: v.copy() for k, v in zeros.items()})


def build_encoder(cfg, train_sentences=None, vocab=None, embeddings=None, in_dim=None):
    if cfg.encoder == "mlp":
        if vocab is None:
            vocab = Vocabulary.from_sentences(train_sentences)
        return MLPEncoder(
            vocab,
            embed_dim=cfg.embed_dim,
            hidden_dim=cfg.hidden_dim,
            out_dim=cfg.feature_dim,
            seed=cfg.seed,
            embeddings=embeddings,
        )
    if in_dim is None:
        in_dim = train_sentences[0].features.shape[1]
    return PrecomputedEncoder(in_dim, cfg.feature_dim if cfg.linear_head else None, cfg.linear_head, seed=cfg.seed)


def solver_settings(cfg):
    return SolverSettings(cfg.sinkhorn_reg, cfg.sinkhorn_iters, "auto" if cfg.sinkhorn_eps_scaling else None)


def learning_rate(cfg, step, total_steps):
    """Linear warmup to ``cfg.lr`` then linear decay to zero at ``total_steps``."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    remaining = total_steps - cfg.warmup_steps
    if remaining <= 0:
        return cfg.lr
    return cfg.lr * max(0.0, (total_steps - step) / remaining)


def batch_loss(features, bank, result, compact_weight, sim=None):
    """Masked CE plus weighted compactness for fixed assignments.

    Returns ``(loss, ce, compact, grad_features)``.
    """
    if sim is None:
        sim = similarity(features, bank)
    ce, g_sim = ce_loss(sim, result.assigned, result.noise_mask)
    comp, g_comp = compactness_loss(features, bank, result.assigned, result.noise_mask)
    grad = similarity_backward(features, bank, g_sim) + compact_weight * g_comp
    return total_loss(ce, comp, compact_weight), ce, comp, grad


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adamw_update(state, grads, cfg, lr):
    t = state.step + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, p in state.encoder.params.items():
        g = grads[name]
        m = state.adam_m[name] = b1 * state.adam_m[name] + (1 - b1) * g
        v = state.adam_v[name] = b2 * state.adam_v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p *= 1 - lr * cfg.weight_decay
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_step(state, batch, cfg, total_steps):
    """One optimisation step on a list of sentences; mutates ``state``."""
    if not batch:
        raise ValueError("empty batch")
    encoder, bank = state.encoder, state.bank
    try:
        feats, cache = encoder.forward(batch)
        labels = np.concatenate([s.labels for s in batch])
        sim = similarity(feats, bank)
        result = assign_batch(feats, bank, labels, cfg.beta, solver_settings(cfg), cfg.denoise, sim)
        loss, ce, comp, g_feat = batch_loss(feats, bank, result, cfg.compact_weight, sim)
        grads = encoder.backward(cache, g_feat)
    except ValueError as exc:
        raise type(exc)(f"step {state.step}: {exc}") from exc
    grads, grad_norm = clip_by_global_norm(grads, cfg.grad_clip)
    lr = learning_rate(cfg, state.step, total_steps)
    adamw_update(state, grads, cfg, lr)
    keep = result.noise_mask > 0
    ema_update(bank, feats[keep], result.assigned[keep])
    outside = labels == 0
    metrics = {
        "step": state.step,
        "epoch": state.epoch,
        "loss": loss,
        "ce": ce,
        "compact": comp,
        "lr": lr,
        "grad_norm": grad_norm,
        "n_tokens": int(len(labels)),
        "n_outside": int(outside.sum()),
        "n_masked": int((~keep & outside).sum()),
        "n_unconverged": result.n_unconverged,
    }
    state.step += 1
    return metrics


def encode(encoder, sentences, batch_size=256):
    feats = [encoder.forward(sentences[i:i + batch_size])[0] for i in range(0, len(sentences), batch_size)]
    return np.vstack(feats) if feats else np.zeros((0, encoder.out_dim))


def _split(flat, sentences):
    out, i = [], 0
    for s in sentences:
        out.append(flat[i:i + len(s)])
        i += len(s)
    return out


def predict(encoder, bank, sentences):
    """Per-sentence arrays of predicted class indices."""
    if not sentences:
        return []
    sim = similarity(encode(encoder, sentences), bank)
    return _split(classify(sim, bank.M), sentences)


def evaluate(encoder, bank, sentences):
    preds = predict(encoder, bank, sentences)
    return span_f1(
        [decode_spans(p) for p in preds], [decode_spans(s.gold) for s in sentences], bank.class_names
    )


def class_similarity(features, bank, gold):
    """Mean over tokens of gold class c of their best similarity to a prototype of c.

    Classes without tokens are left out of the returned dict.
    """
    sim = similarity(features, bank).reshape(len(features), bank.K, bank.M).max(axis=2)
    gold = np.asarray(gold)
    return {
        bank.class_names[c]: float(sim[gold == c, c].mean()) for c in range(bank.K) if np.any(gold == c)
    }


def similarity_diagnostic(encoder, bank, sentences):
    gold = np.concatenate([s.gold for s in sentences])
    return class_similarity(encode(encoder, sentences), bank, gold)


def mean_entity_similarity(sims):
    vals = [v for k, v in sims.items() if k != "O"]
    return float(np.mean(vals)) if vals else float("nan")


def epoch_order(cfg, epoch, n):
    return np.random.default_rng([cfg.seed, epoch]).permutation(n)


def steps_per_epoch(cfg, n):
    return math.ceil(n / cfg.batch_size)


def run_epoch(state, train, cfg, on_step=None):
    total = cfg.epochs * steps_per_epoch(cfg, len(train))
    order = epoch_order(cfg, state.epoch, len(train))
    for i in range(0, len(order), cfg.batch_size):
        batch = [train[j] for j in order[i:i + cfg.batch_size]]
        metrics = train_step(state, batch, cfg, total)
        if on_step:
            on_step(metrics)
    state.epoch += 1


@dataclass
class History:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best: dict | None = None
    test: dict | None = None


def snapshot(state):
    return {
        "params": {k: v.copy() for k, v in state.encoder.params.items()},
        "bank": state.bank.copy(),
    }


def fit(cfg, state, train, dev=None, test=None, on_step=None, on_epoch=None, on_best=None):
    """Train for ``cfg.epochs`` epochs, keeping the best dev checkpoint.

    After each epoch: dev span F1 (if ``dev`` has gold) and per-class
    similarity on the training gold labels (if present).  The best-dev
    weights are evaluated on ``test`` at the end.
    """
    hist = History()

    def step_hook(m):
        hist.steps.append(m)
        if on_step:
            on_step(m)

    best = None
    has_gold = bool(train) and train[0].gold is not None
    while state.epoch < cfg.epochs:
        run_epoch(state, train, cfg, step_hook)
        record = {"epoch": state.epoch, "step": state.step}
        if has_gold:
            sims = similarity_diagnostic(state.encoder, state.bank, train)
            record["train_sim"] = sims
            record["train_entity_sim"] = mean_entity_similarity(sims)
        if dev:
            scores = evaluate(state.encoder, state.bank, dev)
            record["dev"] = scores
            if scores["f1"] > state.best_dev_f1:
                state.best_dev_f1 = scores["f1"]
                state.best_epoch = state.epoch
                best = snapshot(state)
                if on_best:
                    on_best(state)
        hist.epochs.append(record)
        if on_epoch:
            on_epoch(record)
    if best is None:
        best = snapshot(state)
    hist.best = {"epoch": state.best_epoch, "dev_f1": state.best_dev_f1}
    if test:
        enc = state.encoder
        live = enc.params
        enc.params = best["params"]
        try:
            hist.test = evaluate(enc, best["bank"], test)
        finally:
            enc.params = live
    return hist


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state, cfg, params=None, bank=None):
    """Everything needed to resume or evaluate, in one ``.npz``.

    ``params``/``bank`` override the live weights (used to store the best
    snapshot while training continues).
    """
    enc = state.encoder
    params = enc.params if params is None else params
    arrays = {f"encoder/{k}": v for k, v in params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in state.adam_m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.adam_v.items()})
    arrays.update(bank_arrays(state.bank if bank is None else bank))
    arrays["meta/step"] = np.int64(state.step)
    arrays["meta/epoch"] = np.int64(state.epoch)
    arrays["meta/best_dev_f1"] = np.float64(state.best_dev_f1)
    arrays["meta/best_epoch"] = np.int64(state.best_epoch)
    arrays["meta/config"] = np.array(json.dumps(cfg.to_dict(), sort_keys=True))
    arrays["meta/encoder"] = np.array(cfg.encoder)
    if isinstance(enc, MLPEncoder):
        arrays["meta/vocab"] = np.array(enc.vocab.itos)
    else:
        arrays["meta/in_dim"] = np.int64(enc.in_dim)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(state, cfg)``."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    cfg = make_config(json.loads(str(arrays["meta/config"])))
    kind = str(arrays["meta/encoder"])

    def group(prefix):
        return {k[len(prefix):]: v.copy() for k, v in arrays.items() if k.startswith(prefix)}

    params = group("encoder/")
    if kind == "mlp":
        vocab = Vocabulary()
        for tok in [str(t) for t in arrays["meta/vocab"]][2:]:
            vocab.add(tok)
        encoder = MLPEncoder(vocab, embeddings=params["embedding"], hidden_dim=cfg.hidden_dim, out_dim=cfg.feature_dim)
    else:
        encoder = PrecomputedEncoder(int(arrays["meta/in_dim"]), cfg.feature_dim, head=bool(params))
    encoder.params = params
    state = TrainState(
        encoder=encoder,
        bank=bank_from_arrays(arrays),
        adam_m=group("adam_m/"),
        adam_v=group("adam_v/"),
        step=int(arrays["meta/step"]),
        epoch=int(arrays["meta/epoch"]),
        best_dev_f1=float(arrays["meta/best_dev_f1"]),
        best_epoch=int(arrays["meta/best_epoch"]),
    )
    return state, cfg
