"""Token feature producers with explicit backward passes.

Every encoder exposes ``params`` (name -> array), ``forward(sentences)``
returning ``(features, cache)`` and ``backward(cache, grad)`` returning a
gradient dict with the same keys as ``params``.  Encoders work per token;
contextual features come in through :class:`PrecomputedEncoder`.
"""

from __future__ import annotations

import numpy as np

from .corpus import CorpusError
from .ot import ContractError

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    """Dense token ids; id 0 is padding and id 1 is the unknown token."""

    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return np.array([self.stoi.get(t, 1) for t in tokens], dtype=np.int64)

    @classmethod
    def from_sentences(cls, sentences):
        vocab = cls()
        for sent in sentences:
            for tok in sent.tokens:
                vocab.add(tok)
        return vocab

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            itos = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if itos[:2] != [PAD, UNK]:
            raise CorpusError(f"{path}: vocabulary must start with {PAD} and {UNK}")
        vocab = cls()
        for tok in itos[2:]:
            vocab.add(tok)
        return vocab


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def mlp_forward(ids, params):
    """Embedding lookup followed by ``tanh`` hidden layers and a linear output.

    ``params`` holds ``embedding`` and ``W1, b1, ..., Wn, bn``; every layer
    except the last is followed by ``tanh``.  Returns ``(features, cache)``.
    """
    ids = np.asarray(ids, dtype=np.int64)
    emb = params["embedding"]
    if ids.size and (ids.min() < 0 or ids.max() >= emb.shape[0]):
        bad = ids[(ids < 0) | (ids >= emb.shape[0])][0]
        raise ValueError(f"token id {int(bad)} outside vocabulary of size {emb.shape[0]}")
    n_layers = sum(1 for k in params if k.startswith("W"))
    x = emb[ids]
    acts = [x]
    for layer in range(1, n_layers + 1):
        x = x @ params[f"W{layer}"] + params[f"b{layer}"]
        if layer < n_layers:
            x = np.tanh(x)
        acts.append(x)
    return x, (ids, acts)


def mlp_backward(cache, params, grad):
    """Gradients of ``<grad, forward(ids)>`` w.r.t. every parameter."""
    ids, acts = cache
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != acts[-1].shape:
        raise ContractError(f"feature gradient shape {grad.shape} != features {acts[-1].shape}")
    n_layers = len(acts) - 1
    grads = {}
    g = grad
    for layer in range(n_layers, 0, -1):
        if layer < n_layers:
            g = g * (1.0 - acts[layer] ** 2)
        grads[f"W{layer}"] = acts[layer - 1].T @ g
        grads[f"b{layer}"] = g.sum(axis=0)
        g = g @ params[f"W{layer}"].T
    emb_grad = np.zeros_like(params["embedding"])
    np.add.at(emb_grad, ids, g)
    grads["embedding"] = emb_grad
    return grads


class MLPEncoder:
    """Trainable per-token encoder: embedding -> [tanh hidden] -> linear."""

    def __init__(self, vocab, embed_dim=32, hidden_dim=64, out_dim=32, seed=0, embeddings=None):
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.shape[0] != len(vocab):
                raise ContractError(f"{embeddings.shape[0]} embedding rows for {len(vocab)} tokens")
            embed_dim = embeddings.shape[1]
        else:
            # a one-hot input has fan-in 1
            embeddings = _uniform(rng, (len(vocab), embed_dim), 1)
        self.params = {"embedding": embeddings.copy()}
        dims = [embed_dim] + ([hidden_dim] if hidden_dim else []) + [out_dim]
        for layer, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), 1):
            self.params[f"W{layer}"] = _uniform(rng, (d_in, d_out), d_in)
            self.params[f"b{layer}"] = np.zeros(d_out)

    @property
    def out_dim(self):
        n_layers = sum(1 for k in self.params if k.startswith("W"))
        return self.params[f"W{n_layers}"].shape[1]

    def ids(self, sentences):
        return np.concatenate([self.vocab.encode(s.tokens) for s in sentences])

    def forward(self, sentences):
        return mlp_forward(self.ids(sentences), self.params)

    def backward(self, cache, grad):
        return mlp_backward(cache, self.params, grad)


def precomputed_features(keys, store):
    """Stored vectors for a list of ``(sentence id, token index)`` keys."""
    rows = []
    for key in keys:
        try:
            rows.append(store[tuple(key)])
        except KeyError:
            raise CorpusError(f"no stored feature for sentence {key[0]}, token {key[1]}") from None
    return np.array(rows, dtype=np.float64)


class PrecomputedEncoder:
    """Reads ``sentence.features``; optionally applies a trainable linear head."""

    def __init__(self, in_dim, out_dim=None, head=True, seed=0):
        self.params = {}
        self.in_dim = in_dim
        if head:
            out_dim = out_dim or in_dim
            rng = np.random.default_rng(seed)
            self.params["W"] = _uniform(rng, (in_dim, out_dim), in_dim)
            self.params["b"] = np.zeros(out_dim)

    @property
    def out_dim(self):
        return self.params["W"].shape[1] if self.params else self.in_dim

    def forward(self, sentences):
        for s in sentences:
            if s.features is None:
                raise CorpusError(f"sentence {s.sid} has no stored features")
        x = np.vstack([s.features for s in sentences])
        if not self.params:
            return x, x
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, grad):
        if not self.params:
            return {}
        x = cache
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != (x.shape[0], self.params["W"].shape[1]):
            raise ContractError(f"feature gradient shape {grad.shape} does not match the head output")
        return {"W": x.T @ grad, "b": grad.sum(axis=0)}


def save_embeddings(path, vocab, vectors):
    """Token strings and their vectors in one ``.npz`` (keys ``tokens``, ``vectors``)."""
    with open(path, "wb") as fh:
        np.savez(fh, tokens=np.array(vocab.itos), vectors=np.asarray(vectors, dtype=np.float64))


def load_embeddings(path):
    with np.load(path) as data:
        tokens = [str(t) for t in data["tokens"]]
        vectors = data["vectors"]
    vocab = Vocabulary()
    if tokens[:2] != [PAD, UNK]:
        raise CorpusError(f"{path}: first two tokens must be {PAD} and {UNK}")
    for tok in tokens[2:]:
        vocab.add(tok)
    return vocab, vectors
