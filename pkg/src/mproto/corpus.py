"""Sentences, span decoding, span-level scoring and corpus I/O.

Labels are kept internally as one class index per token (0 is ``O``).
Column files may carry either plain types (``PER``) or BIO tags
(``B-PER``/``I-PER``); both normalize to the same indices.  Adjacent
tokens of the same type always form a single span, so two adjacent
same-type entities in a BIO file merge into one span after loading.
"""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np


class CorpusError(ValueError):
    pass


@dataclass
class Sentence:
    tokens: list
    labels: np.ndarray
    gold: np.ndarray | None = None
    sid: int = 0
    features: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.tokens):
            raise CorpusError(
                f"sentence {self.sid}: {len(self.tokens)} tokens but {len(self.labels)} labels"
            )
        if self.gold is not None:
            self.gold = np.asarray(self.gold, dtype=np.int64)
            if len(self.gold) != len(self.tokens):
                raise CorpusError(
                    f"sentence {self.sid}: {len(self.tokens)} tokens but {len(self.gold)} gold labels"
                )

    def __len__(self):
        return len(self.tokens)


def decode_spans(labels, outside=0):
    """Maximal runs of identical non-O labels as ``(start, end, type)``, end exclusive."""
    spans = set()
    start = None
    prev = outside
    for i, lab in enumerate(list(labels) + [outside]):
        lab = int(lab)
        if lab != prev:
            if prev != outside:
                spans.add((start, i, prev))
            start = i
        prev = lab
    return spans


def spans_to_labels(spans, length, outside=0):
    labels = np.full(length, outside, dtype=np.int64)
    for start, end, typ in spans:
        if not 0 <= start < end <= length:
            raise CorpusError(f"span ({start}, {end}) outside a sentence of length {length}")
        labels[start:end] = typ
    return labels


def _prf(tp, n_pred, n_gold):
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def span_f1(predicted, gold, class_names=None):
    """Micro-averaged exact-match span scores over aligned sentence lists.

    Besides precision/recall/F1 and a per-class breakdown, reports
    ``loc_f1`` (boundaries only, type ignored) and ``cls_f1`` (the fraction
    of boundary-matched spans whose type is also right; for that restricted
    set precision and recall coincide, so this is also its F1).
    """
    if len(predicted) != len(gold):
        raise CorpusError(f"{len(predicted)} predicted sentences vs {len(gold)} gold sentences")
    tp = n_pred = n_gold = 0
    loc_tp = loc_pred = loc_gold = 0
    cls_right = 0
    per_tp, per_pred, per_gold = Counter(), Counter(), Counter()
    for pred_spans, gold_spans in zip(predicted, gold):
        pred_spans, gold_spans = set(pred_spans), set(gold_spans)
        hit = pred_spans & gold_spans
        tp += len(hit)
        n_pred += len(pred_spans)
        n_gold += len(gold_spans)
        per_tp.update(t for _, _, t in hit)
        per_pred.update(t for _, _, t in pred_spans)
        per_gold.update(t for _, _, t in gold_spans)
        pred_loc = {(s, e): t for s, e, t in pred_spans}
        gold_loc = {(s, e): t for s, e, t in gold_spans}
        shared = pred_loc.keys() & gold_loc.keys()
        loc_tp += len(shared)
        loc_pred += len(pred_loc)
        loc_gold += len(gold_loc)
        cls_right += sum(pred_loc[k] == gold_loc[k] for k in shared)
    p, r, f = _prf(tp, n_pred, n_gold)
    _, _, loc_f = _prf(loc_tp, loc_pred, loc_gold)
    per_class = {}
    for t in sorted(set(per_pred) | set(per_gold)):
        cp, cr, cf = _prf(per_tp[t], per_pred[t], per_gold[t])
        name = class_names[t] if class_names is not None else t
        per_class[name] = {"precision": cp, "recall": cr, "f1": cf, "support": per_gold[t]}
    return {
        "precision": p,
        "recall": r,
        "f1": f,
        "loc_f1": loc_f,
        "cls_f1": cls_right / loc_tp if loc_tp else 0.0,
        "n_pred": n_pred,
        "n_gold": n_gold,
        "n_correct": tp,
        "per_class": per_class,
    }


def evaluate_labels(predicted, gold, class_names=None):
    """span_f1 on per-sentence label sequences."""
    return span_f1([decode_spans(p) for p in predicted], [decode_spans(g) for g in gold], class_names)


def parse_label(raw, class_index, where=""):
    tag = raw
    if len(raw) > 2 and raw[1] == "-" and raw[0] in "BIES":
        tag = raw[2:]
    try:
        return class_index[tag]
    except KeyError:
        known = ", ".join(class_index)
        raise CorpusError(f"{where}unknown label {raw!r}; known classes: {known}") from None


def _read_blocks(path):
    block = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                if block:
                    yield block
                    block = []
                continue
            if line.startswith("-DOCSTART-"):
                continue
            block.append((lineno, line.split()))
    if block:
        yield block


def infer_classes(path, label_col=1, gold_col=None):
    """Collect the label set of a column file, ``O`` first then sorted."""
    seen = set()
    for block in _read_blocks(path):
        for _, cols in block:
            for c in (label_col, gold_col):
                if c is not None and -len(cols) <= c < len(cols):
                    raw = cols[c]
                    seen.add(raw[2:] if len(raw) > 2 and raw[1] == "-" else raw)
    seen.discard("O")
    return ["O"] + sorted(seen)


def load_column_corpus(path, class_names, token_col=0, label_col=1, gold_col=None):
    """Read a token-per-line file with blank-line sentence breaks.

    ``label_col`` holds the (distant) training labels and may be None for
    unlabeled text, in which case every label is O; ``gold_col`` is
    optional.  Labels may be plain types or BIO tags.
    """
    class_index = {name: i for i, name in enumerate(class_names)}
    needed = max(c if c >= 0 else -c - 1 for c in (token_col, label_col, gold_col) if c is not None) + 1
    sentences = []
    for block in _read_blocks(path):
        tokens, labels, gold = [], [], []
        for lineno, cols in block:
            where = f"{path}:{lineno}: "
            if len(cols) < needed:
                raise CorpusError(f"{where}expected at least {needed} columns, found {len(cols)}")
            tokens.append(cols[token_col])
            labels.append(0 if label_col is None else parse_label(cols[label_col], class_index, where))
            if gold_col is not None:
                gold.append(parse_label(cols[gold_col], class_index, where))
        sentences.append(
            Sentence(tokens, labels, gold if gold_col is not None else None, sid=len(sentences))
        )
    return sentences


def to_bio(labels, class_names):
    tags = ["O"] * len(labels)
    for start, end, typ in decode_spans(labels):
        tags[start] = "B-" + class_names[typ]
        for i in range(start + 1, end):
            tags[i] = "I-" + class_names[typ]
    return tags


def write_column_corpus(path, sentences, class_names, columns=("labels", "gold"), scheme="bio"):
    """Write ``token <col> <col>...``; each named column is a Sentence attribute."""
    def render(labels):
        if scheme == "bio":
            return to_bio(labels, class_names)
        return [class_names[i] for i in labels]

    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            cols = [render(getattr(sent, name)) for name in columns if getattr(sent, name) is not None]
            for i, tok in enumerate(sent.tokens):
                fh.write(" ".join([tok] + [c[i] for c in cols]) + "\n")
            fh.write("\n")


def save_feature_store(path, sentences):
    """Store per-token vectors as ``.npz`` with ``keys`` (n, 2) = (sentence id,
    token index) and ``vectors`` (n, D)."""
    keys, vecs = [], []
    for sent in sentences:
        for i in range(len(sent)):
            keys.append((sent.sid, i))
        vecs.append(sent.features)
    with open(path, "wb") as fh:
        np.savez(fh, keys=np.array(keys, dtype=np.int64).reshape(-1, 2), vectors=np.vstack(vecs))


def load_feature_store(path):
    with np.load(path) as data:
        keys, vectors = data["keys"], data["vectors"]
    return {(int(s), int(t)): vectors[k] for k, (s, t) in enumerate(keys)}


def attach_features(sentences, store):
    """Give every sentence its stored feature matrix."""
    for sent in sentences:
        rows = []
        for i in range(len(sent)):
            try:
                rows.append(store[(sent.sid, i)])
            except KeyError:
                raise CorpusError(f"no stored feature for sentence {sent.sid}, token {i}") from None
        sent.features = np.array(rows, dtype=np.float64).reshape(len(sent), -1)
    return sentences


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    entity_types: list = field(default_factory=lambda: ["PER", "ORG"])
    subclusters: int = 2
    o_subclusters: int = 2
    types_per_cluster: int = 24
    feature_dim: int = 16
    min_separation_deg: float = 60.0
    type_spread: float = 0.25
    context_noise: float = 0.05
    train_tokens: int = 10000
    eval_tokens: int = 3000
    sentence_length: tuple = (8, 16)
    entity_rate: float = 0.15
    max_mention_length: int = 3
    unlabeled_fraction: float = 0.3
    seed: int = 0


@dataclass
class SyntheticData:
    class_names: list
    splits: dict
    vocab: list
    type_vectors: np.ndarray
    centers: np.ndarray
    center_class: np.ndarray
    # per split, per sentence: sub-cluster index of every token
    clusters: dict
    dictionary: list
    unlabeled_forms: list


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def separated_directions(n, dim, min_angle_deg, rng, max_tries=20000):
    """Draw n unit vectors with pairwise angle >= min_angle_deg by rejection."""
    cos_max = np.cos(np.deg2rad(min_angle_deg))
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > max_tries:
            raise ValueError(
                f"could not place {n} directions in {dim} dims at >= {min_angle_deg} degrees apart"
            )
        v = _unit(rng.standard_normal(dim))
        if all(v @ u <= cos_max for u in out):
            out.append(v)
    return np.array(out)


def _chunk_forms(type_ids, max_len, rng):
    forms = []
    i = 0
    while i < len(type_ids):
        k = int(rng.integers(1, max_len + 1))
        forms.append(tuple(type_ids[i:i + k]))
        i += k
    return forms


def generate_synthetic(cfg):
    """Token sequences whose features live on separated sub-clusters.

    Every sub-cluster owns ``types_per_cluster`` vocabulary items whose
    vectors scatter around the sub-cluster center; each occurrence adds a
    little context noise.  Entity mentions are fixed surface forms built from
    one sub-cluster's items.  A set of forms chosen to cover
    ``unlabeled_fraction`` of the entity tokens is left out of the dictionary,
    so all their occurrences carry distant label O while gold keeps the type.
    """
    if cfg.min_separation_deg <= 0:
        raise ValueError("cluster separation must be positive")
    if not 0.0 <= cfg.unlabeled_fraction < 1.0:
        raise ValueError("unlabeled_fraction must lie in [0, 1)")
    rng = np.random.default_rng(cfg.seed)
    class_names = ["O"] + list(cfg.entity_types)
    n_ent = len(cfg.entity_types)
    center_class = np.array([0] * cfg.o_subclusters + [c for c in range(1, n_ent + 1) for _ in range(cfg.subclusters)])
    centers = separated_directions(len(center_class), cfg.feature_dim, cfg.min_separation_deg, rng)

    vocab = ["<pad>", "<unk>"]
    type_vectors = [_unit(rng.standard_normal(cfg.feature_dim)) for _ in range(2)]
    type_cluster = [-1, -1]
    cluster_types = []
    for k, center in enumerate(centers):
        ids = []
        for j in range(cfg.types_per_cluster):
            vec = _unit(center + cfg.type_spread * rng.standard_normal(cfg.feature_dim) / np.sqrt(cfg.feature_dim))
            ids.append(len(vocab))
            vocab.append(f"{class_names[center_class[k]].lower()}{k}_{j}")
            type_vectors.append(vec)
            type_cluster.append(k)
        cluster_types.append(ids)
    type_vectors = np.array(type_vectors)
    type_cluster = np.array(type_cluster)

    forms = []  # (type ids tuple, class, cluster)
    for k, ids in enumerate(cluster_types):
        if center_class[k] == 0:
            continue
        for form in _chunk_forms(ids, cfg.max_mention_length, rng):
            forms.append((form, int(center_class[k]), k))
    o_types = np.concatenate([ids for k, ids in enumerate(cluster_types) if center_class[k] == 0])

    def make_split(n_tokens):
        sents = []
        total = 0
        while total < n_tokens:
            length = int(rng.integers(cfg.sentence_length[0], cfg.sentence_length[1] + 1))
            ids, gold, mention = [], [], []
            while len(ids) < length:
                if rng.random() < cfg.entity_rate:
                    f = int(rng.integers(len(forms)))
                    form, cls, _ = forms[f]
                    ids.extend(form)
                    gold.extend([cls] * len(form))
                    mention.extend([f] * len(form))
                    # keep mentions apart so adjacent same-type forms do not merge
                    ids.append(int(rng.choice(o_types)))
                    gold.append(0)
                    mention.append(-1)
                else:
                    ids.append(int(rng.choice(o_types)))
                    gold.append(0)
                    mention.append(-1)
            sents.append((ids, gold, mention))
            total += len(ids)
        return sents

    raw = {
        "train": make_split(cfg.train_tokens),
        "dev": make_split(cfg.eval_tokens),
        "test": make_split(cfg.eval_tokens),
    }

    # choose left-out forms greedily until the entity-token noise rate hits the target
    form_tokens = Counter()
    for sents in raw.values():
        for _, _, mention in sents:
            form_tokens.update(m for m in mention if m >= 0)
    n_entity_tokens = sum(form_tokens.values())
    target = cfg.unlabeled_fraction * n_entity_tokens
    unlabeled = set()
    covered = 0
    for f in rng.permutation(len(forms)):
        c = form_tokens.get(int(f), 0)
        if c == 0:
            continue
        if abs(covered + c - target) < abs(covered - target):
            unlabeled.add(int(f))
            covered += c

    splits, clusters = {}, {}
    for name, sents in raw.items():
        out, cl = [], []
        for sid, (ids, gold, mention) in enumerate(sents):
            gold = np.array(gold)
            distant = gold.copy()
            for i, m in enumerate(mention):
                if m in unlabeled:
                    distant[i] = 0
            tokens = [vocab[i] for i in ids]
            feats = type_vectors[ids] + cfg.context_noise * rng.standard_normal((len(ids), cfg.feature_dim)) / np.sqrt(cfg.feature_dim)
            out.append(Sentence(tokens, distant, gold, sid=sid, features=feats))
            cl.append(type_cluster[ids])
        splits[name] = out
        clusters[name] = cl

    dictionary = [
        (class_names[cls], " ".join(vocab[i] for i in form))
        for f, (form, cls, _) in enumerate(forms)
        if f not in unlabeled
    ]
    unlabeled_forms = [
        (class_names[forms[f][1]], " ".join(vocab[i] for i in forms[f][0])) for f in sorted(unlabeled)
    ]
    return SyntheticData(
        class_names=class_names,
        splits=splits,
        vocab=vocab,
        type_vectors=type_vectors,
        centers=centers,
        center_class=center_class,
        clusters=clusters,
        dictionary=dictionary,
        unlabeled_forms=unlabeled_forms,
    )


def noise_rate(sentences):
    """Fraction of gold entity tokens whose distant label is O."""
    ent = miss = 0
    for s in sentences:
        mask = s.gold != 0
        ent += int(mask.sum())
        miss += int((mask & (s.labels == 0)).sum())
    return miss / ent if ent else 0.0


def cluster_centroids(sentences, clusters):
    """Mean feature per sub-cluster id over the given sentences."""
    sums = defaultdict(lambda: 0.0)
    counts = Counter()
    for sent, cl in zip(sentences, clusters):
        for vec, k in zip(sent.features, cl):
            sums[int(k)] = sums[int(k)] + vec
            counts[int(k)] += 1
    return {k: sums[k] / counts[k] for k in sorted(counts)}
