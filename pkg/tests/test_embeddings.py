import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semsafe.embeddings import (
    CachingEmbedder,
    CorpusSchemaError,
    EmbeddingServiceError,
    EmbeddingVector,
    HttpEmbedder,
    MockEmbedder,
    PrecisionMatrix,
    SafeCorpus,
    SingularCovarianceError,
    compute_precision_matrix,
    cosine_distance,
    dump_corpus,
    load_corpus,
    mahalanobis_distance,
    mock_embed,
)

from conftest import unit


def finite_vectors(dim):
    return st.lists(
        st.floats(-100.0, 100.0, allow_nan=False), min_size=dim, max_size=dim
    ).filter(lambda v: np.linalg.norm(v) > 1e-6)


# --- EmbeddingVector / SafeCorpus validation -------------------------------


def test_embedding_vector_rejects_bad_input():
    with pytest.raises(ValueError):
        EmbeddingVector(np.zeros(4))
    with pytest.raises(ValueError):
        EmbeddingVector(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        EmbeddingVector(np.ones((2, 2)))
    with pytest.raises(ValueError):
        EmbeddingVector(np.array([]))


def test_embedding_vector_is_read_only():
    v = EmbeddingVector(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        v.values[0] = 5.0


def test_corpus_requires_consistent_dims():
    a = EmbeddingVector(np.ones(3))
    b = EmbeddingVector(np.ones(4))
    with pytest.raises(ValueError, match="inconsistent dims"):
        SafeCorpus((("a", a), ("b", b)))
    with pytest.raises(ValueError):
        SafeCorpus(())


def test_corpus_matrix_shape():
    a = EmbeddingVector(np.array([1.0, 0.0, 0.0]))
    c = SafeCorpus((("x", a), ("y", a), ("z", a)))
    assert c.matrix().shape == (3, 3)
    assert c.descriptions == ("x", "y", "z")
    assert c.n == 3 and c.dim == 3


# --- cosine distance -------------------------------------------------------


def test_cosine_distance_trivial_cases():
    e1 = unit(1, 0, 0)
    assert cosine_distance(e1, e1) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(e1, unit(0, 1, 0)) == pytest.approx(1.0, abs=1e-12)
    assert cosine_distance(e1, unit(-1, 0, 0)) == pytest.approx(2.0, abs=1e-12)


def test_cosine_distance_dim_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        cosine_distance(unit(1, 0), unit(1, 0, 0))


@given(finite_vectors(4), finite_vectors(4))
def test_cosine_distance_symmetry(a, b):
    va, vb = EmbeddingVector(np.array(a)), EmbeddingVector(np.array(b))
    assert cosine_distance(va, vb) == pytest.approx(cosine_distance(vb, va), abs=1e-9)


@given(finite_vectors(4), finite_vectors(4), st.floats(1e-3, 1e3))
def test_cosine_distance_scale_invariance(a, b, c):
    va, vb = EmbeddingVector(np.array(a)), EmbeddingVector(np.array(b))
    scaled = EmbeddingVector(c * np.array(a))
    assert cosine_distance(scaled, vb) == pytest.approx(cosine_distance(va, vb), abs=1e-6)


@given(finite_vectors(4), finite_vectors(4))
def test_cosine_distance_range(a, b):
    d = cosine_distance(EmbeddingVector(np.array(a)), EmbeddingVector(np.array(b)))
    assert -1e-9 <= d <= 2.0 + 1e-9


# --- precision matrix / Mahalanobis ----------------------------------------


def _random_corpus(rng, n, dim):
    return SafeCorpus(
        tuple((f"e{i}", EmbeddingVector(rng.standard_normal(dim))) for i in range(n))
    )


def test_precision_matrix_validation():
    with pytest.raises(ValueError, match="square"):
        PrecisionMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError, match="symmetric"):
        PrecisionMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="PSD"):
        PrecisionMatrix(np.array([[-1.0, 0.0], [0.0, 1.0]]))


def test_precision_matches_manual_inverse():
    # Oracle: Gaussian elimination on the regularized covariance, done by
    # hand with numpy kept out of the inversion step.
    rng = np.random.default_rng(11)
    corpus = _random_corpus(rng, 5, 3)
    reg = 1e-6
    x = corpus.matrix()
    mean = x.sum(axis=0) / 5.0
    centered = x - mean
    cov = centered.T @ centered / 4.0 + reg * np.eye(3)

    # Solve cov @ inv = I column by column via explicit elimination.
    a = np.hstack([cov.copy(), np.eye(3)])
    for col in range(3):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        a[[col, pivot]] = a[[pivot, col]]
        a[col] /= a[col, col]
        for row in range(3):
            if row != col:
                a[row] -= a[row, col] * a[col]
    manual_inv = a[:, 3:]

    p = compute_precision_matrix(corpus, regularizer=reg)
    assert np.allclose(p.matrix, manual_inv, atol=1e-6)


def test_precision_times_covariance_is_identity():
    rng = np.random.default_rng(5)
    corpus = _random_corpus(rng, 40, 6)
    reg = 1e-4
    p = compute_precision_matrix(corpus, regularizer=reg)
    cov = np.cov(corpus.matrix(), rowvar=False, ddof=1) + reg * np.eye(6)
    assert np.linalg.norm(p.matrix @ cov - np.eye(6)) < 1e-5


def test_precision_singular_covariance_raises():
    v = EmbeddingVector(np.array([1.0, 2.0, 3.0]))
    corpus = SafeCorpus((("a", v), ("b", v), ("c", v)))
    with pytest.raises(SingularCovarianceError):
        compute_precision_matrix(corpus, regularizer=0.0)
    # A positive regularizer rescues it.
    compute_precision_matrix(corpus, regularizer=1e-6)


def test_precision_requires_two_entries():
    corpus = SafeCorpus((("a", EmbeddingVector(np.ones(3))),))
    with pytest.raises(ValueError):
        compute_precision_matrix(corpus)


def test_mahalanobis_diagonal_example():
    # diag(4, 1) precision with difference (1, 2): sqrt(4*1 + 1*4) = sqrt(8).
    p = PrecisionMatrix(np.diag([4.0, 1.0]))
    a = EmbeddingVector(np.array([2.0, 3.0]))
    b = EmbeddingVector(np.array([1.0, 1.0]))
    assert mahalanobis_distance(a, b, p) == pytest.approx(np.sqrt(8.0), abs=1e-12)


def test_mahalanobis_identity_reduces_to_euclidean():
    rng = np.random.default_rng(2)
    p = PrecisionMatrix(np.eye(5))
    for _ in range(25):
        a = EmbeddingVector(rng.standard_normal(5))
        b = EmbeddingVector(rng.standard_normal(5))
        assert mahalanobis_distance(a, b, p) == pytest.approx(
            float(np.linalg.norm(a.values - b.values)), abs=1e-9
        )


def test_mahalanobis_zero_distance_and_dim_checks():
    p = PrecisionMatrix(np.eye(2))
    a = EmbeddingVector(np.array([1.0, 2.0]))
    assert mahalanobis_distance(a, a, p) == 0.0
    with pytest.raises(ValueError):
        mahalanobis_distance(a, EmbeddingVector(np.ones(3)), p)
    with pytest.raises(ValueError):
        mahalanobis_distance(
            EmbeddingVector(np.ones(3)), EmbeddingVector(np.ones(3)), p
        )


# --- corpus file format ----------------------------------------------------


def test_load_corpus_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    corpus = _random_corpus(rng, 7, 4)
    path = tmp_path / "corpus.json"
    dump_corpus(corpus, path)
    loaded = load_corpus(path)
    assert loaded.descriptions == corpus.descriptions
    for (_, a), (_, b) in zip(loaded.entries, corpus.entries):
        assert np.array_equal(a.values, b.values)  # bit-identical through JSON

    # And a second round trip produces byte-identical files.
    path2 = tmp_path / "corpus2.json"
    dump_corpus(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


@pytest.mark.parametrize(
    "doc,fragment",
    [
        ([], "'dim' and 'entries'"),
        ({"dim": 0, "entries": [{}]}, "positive integer"),
        ({"dim": 2, "entries": []}, "non-empty list"),
        ({"dim": 2, "entries": [{"description": "a"}]}, "record 0"),
        (
            {"dim": 2, "entries": [{"description": "a", "embedding": [1.0]}]},
            "record 0",
        ),
        (
            {"dim": 2, "entries": [{"description": 3, "embedding": [1.0, 0.0]}]},
            "record 0",
        ),
        (
            {"dim": 2, "entries": [{"description": "a", "embedding": [0.0, 0.0]}]},
            "record 0",
        ),
    ],
)
def test_load_corpus_schema_errors(tmp_path, doc, fragment):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CorpusSchemaError, match=fragment):
        load_corpus(path)


def test_load_corpus_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(CorpusSchemaError, match="invalid JSON"):
        load_corpus(path)


# --- mock embedder ---------------------------------------------------------


def test_mock_embed_deterministic_unit_norm():
    a = mock_embed("a person on a ladder", dim=48, seed=1)
    b = mock_embed("a person on a ladder", dim=48, seed=1)
    assert np.array_equal(a.values, b.values)
    assert a.norm == pytest.approx(1.0, abs=1e-9)


def test_mock_embed_seed_and_text_sensitivity():
    base = mock_embed("fire near the door", dim=32, seed=0)
    assert cosine_distance(base, mock_embed("fire near the door", dim=32, seed=1)) > 1e-6
    assert cosine_distance(base, mock_embed("water near the door", dim=32, seed=0)) > 1e-6


def test_mock_embed_distinct_descriptions_separate():
    rng = np.random.default_rng(9)
    words = [f"w{rng.integers(1 << 30):08x}" for _ in range(200)]
    for i in range(100):
        a = mock_embed(words[2 * i], dim=64)
        b = mock_embed(words[2 * i + 1], dim=64)
        assert cosine_distance(a, b) > 1e-6


def test_mock_embed_shared_tokens_are_closer():
    # Bag-of-tokens structure: overlapping descriptions should be nearer
    # than unrelated ones, which is what gives the mock semantic signal.
    a = mock_embed("fire on the roof", dim=64)
    b = mock_embed("fire near the wall", dim=64)
    c = mock_embed("quiet empty garden", dim=64)
    assert cosine_distance(a, b) < cosine_distance(a, c)


def test_mock_embed_rejects_tiny_dim():
    with pytest.raises(ValueError):
        mock_embed("x", dim=1)


def test_caching_embedder_counts_hits():
    cache = CachingEmbedder(MockEmbedder(dim=16))
    v1 = cache.embed("hello world")
    v2 = cache.embed("hello world")
    cache.embed("other")
    assert v1 is v2
    assert cache.hits == 1 and cache.misses == 2


# --- HTTP embedder ---------------------------------------------------------


def _client_with(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_embedder_success_and_auth_header():
    seen = {}

    table = {"a": [1.0, 0.0], "b": [0.0, 2.0]}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(
            200, json={"embeddings": [table[t] for t in seen["body"]["texts"]]}
        )

    emb = HttpEmbedder("http://embed.test/v1", token="tok", client=_client_with(handler))
    out = emb.embed_batch(["a", "b"])
    assert seen["auth"] == "Bearer tok"
    assert seen["body"] == {"texts": ["a", "b"]}
    assert np.array_equal(out[1].values, np.array([0.0, 2.0]))
    assert np.array_equal(emb.embed("a").values, np.array([1.0, 0.0]))


def test_http_embedder_http_error():
    emb = HttpEmbedder("http://embed.test", client=_client_with(lambda r: httpx.Response(500)))
    with pytest.raises(EmbeddingServiceError, match="request failed"):
        emb.embed("x")


def test_http_embedder_malformed_response():
    def handler(request):
        return httpx.Response(200, json={"embeddings": [[1.0, 0.0]]})

    emb = HttpEmbedder("http://embed.test", client=_client_with(handler))
    with pytest.raises(EmbeddingServiceError, match="malformed"):
        emb.embed_batch(["a", "b"])


def test_http_embedder_from_environment(monkeypatch):
    monkeypatch.delenv("SEMSAFE_EMBED_ENDPOINT", raising=False)
    with pytest.raises(EmbeddingServiceError):
        HttpEmbedder.from_environment()
    monkeypatch.setenv("SEMSAFE_EMBED_ENDPOINT", "http://embed.test")
    monkeypatch.setenv("SEMSAFE_EMBED_TOKEN", "sekrit")
    emb = HttpEmbedder.from_environment()
    assert emb.endpoint == "http://embed.test"
    assert emb.token == "sekrit"
