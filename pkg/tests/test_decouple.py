import numpy as np
import pytest

from partial_screen import decouple as D
from partial_screen import tensor as T
from partial_screen.gradcheck import check_gradients
from partial_screen.tensor import Tensor


@pytest.fixture
def params(rng):
    return D.DecoupleParams(channels=5, text_dim=4, att_dim=6, rng=rng)


def test_attention_is_a_distribution_over_positions(params, rng):
    F = rng.standard_normal((2, 5, 3, 4))
    emb = D.DiseaseEmbeddings.default(3, 4)
    alpha = D.attention_scores(F, emb, params).data
    assert alpha.shape == (2, 3, 12)
    assert np.all(alpha >= 0)
    np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-12)


def test_single_embedding_gives_spatial_map(params, rng):
    F = rng.standard_normal((5, 3, 4))
    alpha = D.attention_scores(F, np.ones(4), params).data
    assert alpha.shape == (3, 4)
    assert alpha.sum() == pytest.approx(1.0)


def test_zero_scoring_vector_gives_average_pooling(params, rng):
    params.v = Tensor(np.zeros(6))
    F = rng.standard_normal((2, 5, 3, 3))
    f = D.decouple(F, D.DiseaseEmbeddings.default(2, 4), params).data
    np.testing.assert_allclose(f, np.broadcast_to(F.mean(axis=(-2, -1))[:, None, :], f.shape), atol=1e-12)


def test_disease_feature_is_attention_weighted_sum(params, rng):
    F = rng.standard_normal((1, 5, 2, 3))
    emb = D.DiseaseEmbeddings.default(3, 4)
    alpha = D.attention_scores(F, emb, params).data
    f = D.decouple(F, emb, params).data
    manual = np.einsum("btp,bcp->btc", alpha, F.reshape(1, 5, 6))
    np.testing.assert_allclose(f, manual, atol=1e-12)


def test_decouple_gradients(params, rng):
    emb = D.DiseaseEmbeddings.default(3, 4)
    w = rng.standard_normal((2, 3, 5))

    def f(F, W1, W2, v):
        params.W1, params.W2, params.v = W1, W2, v
        return T.tsum(D.decouple(F, emb, params) * Tensor(w))

    inputs = [rng.standard_normal((2, 5, 3, 3)), params.W1.data, params.W2.data, params.v.data]
    assert check_gradients(f, inputs).passed(1e-4)


def test_default_embeddings_are_deterministic_unit_rows():
    a = D.DiseaseEmbeddings.default(4, 8)
    b = D.DiseaseEmbeddings.default(4, 8)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    np.testing.assert_allclose(np.linalg.norm(a.matrix, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(a.matrix @ a.matrix.T, np.eye(4), atol=1e-6)


def test_embedding_file_roundtrip_and_errors(tmp_path):
    emb = D.DiseaseEmbeddings.default(3, 5)
    path = tmp_path / "emb.txt"
    emb.save(path)
    np.testing.assert_array_equal(D.DiseaseEmbeddings.load(path).matrix, emb.matrix)
    path.write_text("3 5\n1 2 3\n")
    with pytest.raises(D.EmbeddingFileError):
        D.DiseaseEmbeddings.load(path)
    path.write_text("1 2\nnan 1\n")
    with pytest.raises(D.EmbeddingFileError):
        D.DiseaseEmbeddings.load(path)
