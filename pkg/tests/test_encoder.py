import numpy as np
import pytest

from mproto.corpus import CorpusError, Sentence
from mproto.encoder import (
    MLPEncoder,
    PrecomputedEncoder,
    Vocabulary,
    load_embeddings,
    mlp_backward,
    mlp_forward,
    precomputed_features,
    save_embeddings,
)
from mproto.ot import ContractError

from oracles import central_difference, relative_error


def random_params(rng, V=7, E=3, H=5, D=4):
    return {
        "embedding": rng.standard_normal((V, E)),
        "W1": rng.standard_normal((E, H)) * 0.5,
        "b1": rng.standard_normal(H) * 0.1,
        "W2": rng.standard_normal((H, D)) * 0.5,
        "b2": rng.standard_normal(D) * 0.1,
    }


def sentences(*token_lists):
    return [Sentence(toks, [0] * len(toks), sid=i) for i, toks in enumerate(token_lists)]


class TestVocabulary:
    def test_special_ids(self):
        vocab = Vocabulary(["a", "b", "a"])
        assert vocab.itos == ["<pad>", "<unk>", "a", "b"]
        assert vocab.encode(["b", "zzz"]).tolist() == [3, 1]

    def test_round_trip(self, tmp_path):
        vocab = Vocabulary(["x", "y"])
        vocab.save(tmp_path / "vocab.txt")
        assert (tmp_path / "vocab.txt").read_text().splitlines() == ["<pad>", "<unk>", "x", "y"]
        assert Vocabulary.load(tmp_path / "vocab.txt").itos == vocab.itos


class TestMlpForward:
    def test_zero_weights_give_zero_features(self):
        params = {k: np.zeros_like(v) for k, v in random_params(np.random.default_rng(0)).items()}
        feats, _ = mlp_forward([1, 2, 3], params)
        assert np.all(feats == 0)

    def test_identity_layer_returns_embeddings(self):
        emb = np.random.default_rng(1).standard_normal((5, 3))
        feats, _ = mlp_forward([4, 0, 2], {"embedding": emb, "W1": np.eye(3), "b1": np.zeros(3)})
        assert np.array_equal(feats, emb[[4, 0, 2]])

    def test_finite_for_every_id(self):
        params = random_params(np.random.default_rng(2))
        feats, _ = mlp_forward(np.arange(7), params)
        assert np.all(np.isfinite(feats))

    def test_out_of_range_id(self):
        with pytest.raises(ValueError, match="outside vocabulary"):
            mlp_forward([0, 7], random_params(np.random.default_rng(0)))

    def test_deterministic(self):
        vocab = Vocabulary(["a", "b"])
        e1, e2 = MLPEncoder(vocab, seed=3), MLPEncoder(vocab, seed=3)
        s = sentences(["a", "b", "c"])
        assert np.array_equal(e1.forward(s)[0], e2.forward(s)[0])


class TestMlpBackward:
    def test_zero_gradient(self):
        params = random_params(np.random.default_rng(0))
        feats, cache = mlp_forward([1, 2], params)
        grads = mlp_backward(cache, params, np.zeros_like(feats))
        assert all(np.all(g == 0) for g in grads.values())

    def test_single_linear_layer_outer_product(self):
        rng = np.random.default_rng(1)
        params = {"embedding": rng.standard_normal((3, 2)), "W1": rng.standard_normal((2, 4)), "b1": np.zeros(4)}
        _, cache = mlp_forward([2], params)
        g = rng.standard_normal((1, 4))
        grads = mlp_backward(cache, params, g)
        np.testing.assert_allclose(grads["W1"], np.outer(params["embedding"][2], g[0]))

    def test_shape_mismatch(self):
        params = random_params(np.random.default_rng(0))
        _, cache = mlp_forward([1, 2], params)
        with pytest.raises(ContractError):
            mlp_backward(cache, params, np.zeros((3, 4)))

    @pytest.mark.parametrize("seed", range(8))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        ids = rng.integers(0, 7, 6)
        g = rng.standard_normal((6, 4))
        _, cache = mlp_forward(ids, params)
        grads = mlp_backward(cache, params, g)
        for name in params:
            def objective(value, name=name):
                trial = dict(params, **{name: value})
                return float(np.sum(g * mlp_forward(ids, trial)[0]))

            numeric = central_difference(objective, params[name])
            assert relative_error(grads[name], numeric) < 1e-4, name

    @pytest.mark.parametrize("seed", range(5))
    def test_adjoint_directional_derivative(self, seed):
        rng = np.random.default_rng(100 + seed)
        params = random_params(rng)
        ids = rng.integers(0, 7, 5)
        g = rng.standard_normal((5, 4))
        _, cache = mlp_forward(ids, params)
        grads = mlp_backward(cache, params, g)
        direction = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        eps = 1e-5

        def value(t):
            trial = {k: params[k] + t * direction[k] for k in params}
            return float(np.sum(g * mlp_forward(ids, trial)[0]))

        numeric = (value(eps) - value(-eps)) / (2 * eps)
        analytic = sum(float(np.sum(grads[k] * direction[k])) for k in params)
        assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(analytic))


class TestMlpEncoder:
    def test_initial_features_nonzero(self):
        enc = MLPEncoder(Vocabulary(list("abcdef")), seed=0)
        feats, _ = enc.forward(sentences(list("abcdefz")))
        assert np.all(np.linalg.norm(feats, axis=1) > 0)

    def test_pretrained_embeddings(self):
        vocab = Vocabulary(["a", "b"])
        emb = np.arange(8.0).reshape(4, 2)
        enc = MLPEncoder(vocab, hidden_dim=3, out_dim=2, embeddings=emb)
        assert np.array_equal(enc.params["embedding"], emb)
        with pytest.raises(ContractError):
            MLPEncoder(vocab, embeddings=np.ones((3, 2)))

    def test_embeddings_file_round_trip(self, tmp_path):
        vocab = Vocabulary(["x", "y", "z"])
        vecs = np.random.default_rng(0).standard_normal((5, 3))
        save_embeddings(tmp_path / "e.npz", vocab, vecs)
        v2, e2 = load_embeddings(tmp_path / "e.npz")
        assert v2.itos == vocab.itos and np.array_equal(e2, vecs)


class TestPrecomputed:
    def test_store_returned_verbatim(self):
        store = {(0, 0): np.array([1.0, 2.0]), (0, 1): np.array([3.0, 4.0])}
        out = precomputed_features([(0, 1), (0, 0)], store)
        assert out.tolist() == [[3.0, 4.0], [1.0, 2.0]]

    def test_missing_entry_named(self):
        with pytest.raises(CorpusError, match="sentence 2, token 5"):
            precomputed_features([(2, 5)], {})

    def test_identity_head_unchanged(self):
        s = sentences(["a", "b"])
        s[0].features = np.array([[1.0, -2.0], [0.5, 3.0]])
        enc = PrecomputedEncoder(2, 2)
        enc.params = {"W": np.eye(2), "b": np.zeros(2)}
        assert np.array_equal(enc.forward(s)[0], s[0].features)
        assert np.array_equal(PrecomputedEncoder(2, head=False).forward(s)[0], s[0].features)

    def test_missing_features(self):
        with pytest.raises(CorpusError):
            PrecomputedEncoder(2).forward(sentences(["a"]))

    @pytest.mark.parametrize("seed", range(3))
    def test_head_gradient(self, seed):
        rng = np.random.default_rng(seed)
        s = sentences(["a", "b", "c"])
        s[0].features = rng.standard_normal((3, 4))
        enc = PrecomputedEncoder(4, 2, seed=seed)
        g = rng.standard_normal((3, 2))
        feats, cache = enc.forward(s)
        grads = enc.backward(cache, g)
        for name in ("W", "b"):
            def objective(value, name=name):
                saved = enc.params[name]
                enc.params[name] = value
                try:
                    return float(np.sum(g * enc.forward(s)[0]))
                finally:
                    enc.params[name] = saved

            assert relative_error(grads[name], central_difference(objective, enc.params[name])) < 1e-4
