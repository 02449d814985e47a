import numpy as np
import pytest

from augforge.errors import DecodeError, DimensionMismatch, MissingEmbeddings
from augforge.latent import (
    EmbeddingDirectory,
    EmbeddingSet,
    LinearClassifier,
    TrainConfig,
    latent_objective,
    odd_score,
    read_embeddings,
    train_classifier,
    write_embeddings,
)
from augforge.search import Dim, ParamSpace, grid_search


def clusters(seed=0, n=50, spread=0.1):
    rng = np.random.default_rng(seed)
    clear = np.column_stack([-2 + rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n)])
    odd = np.column_stack([2 + rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n)])
    return EmbeddingSet(clear), EmbeddingSet(odd)


@pytest.fixture(scope="module")
def fitted():
    clear, odd = clusters()
    return clear, odd, train_classifier(clear, odd, TrainConfig())


class TestTraining:
    def test_separates(self, fitted):
        clear, odd, clf = fitted
        acc = np.mean(np.concatenate([clf.predict_proba(clear.vectors) < 0.5, clf.predict_proba(odd.vectors) >= 0.5]))
        assert acc >= 0.99 and clf.iterations <= 1000

    def test_scores(self, fitted):
        clear, odd, clf = fitted
        assert odd_score(clf, odd) > 0.9
        assert odd_score(clf, clear) < 0.1

    def test_loss_non_increasing(self, fitted):
        history = fitted[2].loss_history
        assert all(b <= a for a, b in zip(history, history[1:]))

    def test_identical_sets_are_uninformative(self):
        rows = EmbeddingSet(np.random.default_rng(1).normal(size=(20, 3)))
        clf = train_classifier(rows, rows)
        assert np.all(np.abs(clf.predict_proba(rows.vectors) - 0.5) <= 0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            train_classifier(EmbeddingSet(np.zeros((2, 2))), EmbeddingSet(np.zeros((2, 3))))

    def test_deterministic(self):
        clear, odd = clusters(4)
        a = train_classifier(clear, odd).to_dict()
        b = train_classifier(clear, odd).to_dict()
        assert a == b


class TestScoring:
    def test_zero_weights_half(self):
        clf = LinearClassifier(np.zeros(3), 0.0)
        assert odd_score(clf, EmbeddingSet(np.random.default_rng(0).normal(size=(7, 3)))) == 0.5

    def test_classifier_round_trip(self, fitted, tmp_path):
        clf = fitted[2]
        clf.save(tmp_path / "c.json")
        back = LinearClassifier.load(tmp_path / "c.json")
        assert np.array_equal(back.weights, clf.weights) and back.bias == clf.bias


class TestFiles:
    def test_round_trip(self, tmp_path):
        v = np.arange(6, dtype=np.float32).reshape(2, 3)
        write_embeddings(tmp_path / "e.emb", v)
        raw = (tmp_path / "e.emb").read_bytes()
        assert raw[:8] == b"\x02\x00\x00\x00\x03\x00\x00\x00"
        assert np.array_equal(read_embeddings(tmp_path / "e.emb").vectors, v)

    def test_truncated(self, tmp_path):
        (tmp_path / "e.emb").write_bytes(b"\x02\x00\x00\x00\x03\x00\x00\x00\x00")
        with pytest.raises(DecodeError):
            read_embeddings(tmp_path / "e.emb")


class TestObjective:
    def test_missing(self, tmp_path):
        d = EmbeddingDirectory(tmp_path)
        d.register({"beta": 1}, np.zeros((2, 2)))
        obj = latent_objective(LinearClassifier(np.zeros(2), 0.0), d)
        assert obj({"beta": 1}) == 0.5
        with pytest.raises(MissingEmbeddings):
            obj({"beta": 2})

    def test_grid_picks_higher_score(self, tmp_path):
        # w = (1, 0): rows at x=logit(p) score exactly p
        clf = LinearClassifier(np.array([1.0, 0.0]), 0.0)
        d = EmbeddingDirectory(tmp_path)
        for beta, p in ((0.01, 0.3), (0.02, 0.8)):
            d.register({"beta": beta}, np.array([[np.log(p / (1 - p)), 0.0]]))
        space = ParamSpace((Dim("beta", "discrete", values=(0.01, 0.02)),))
        trace = grid_search(space, 1, latent_objective(clf, d))
        assert trace.best_params == {"beta": 0.02}
        assert trace.values == pytest.approx([0.3, 0.8], abs=1e-6)
