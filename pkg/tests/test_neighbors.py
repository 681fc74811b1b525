import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pogdiff.neighbors import build_index, cosine_matrix, img_similarity, neighbor_weights, sample_neighbor


def _index(data, k=1, identities=None):
    n = len(data)
    identities = identities if identities is not None else ["A"] * n
    return build_index(np.arange(n), identities, np.asarray(data, float), np.zeros((n, 2)), k)


def test_identical_embeddings_are_mutual_neighbors():
    idx = _index([[1.0, 2.0], [1.0, 2.0], [-3.0, 0.5]])
    assert idx.neighbors[0, 0] == 1 and idx.neighbors[1, 0] == 0
    assert idx.similarities[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_orthogonal_embeddings_have_zero_similarity():
    assert cosine_matrix([[1.0, 0.0]], [[0.0, 3.0]])[0, 0] == 0.0


def test_zero_norm_embedding_rejected():
    with pytest.raises(ValueError):
        _index([[0.0, 0.0], [1.0, 0.0]])


@pytest.mark.parametrize("k", [0, 3])
def test_k_out_of_range(k):
    with pytest.raises(ValueError):
        _index([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], k=k)


def test_single_sample_index_rejected():
    with pytest.raises(ValueError):
        _index([[1.0, 0.0]])


def test_knn_matches_brute_force_scan():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(50, 3))
    idx = _index(data, k=5)
    for i in range(50):
        scores = []
        for j in range(50):
            if j != i:
                s = float(data[i] @ data[j] / (np.linalg.norm(data[i]) * np.linalg.norm(data[j])))
                scores.append((-s, j))
        expected = [j for _, j in sorted(scores)[:5]]
        assert idx.neighbors[i].tolist() == expected


def test_ties_broken_by_id():
    idx = _index([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [0.0, 1.0]], k=2)
    assert idx.neighbors[2].tolist() == [0, 1]


def test_weight_examples():
    np.testing.assert_allclose(neighbor_weights([0.5, 0.3, 0.2]), [0.5, 0.3, 0.2], rtol=1e-15)
    np.testing.assert_array_equal(neighbor_weights([0.4, 0.4]), [0.5, 0.5])


def test_weights_drop_non_positive_and_fall_back_to_uniform():
    np.testing.assert_array_equal(neighbor_weights([0.6, -0.2, 0.0]), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(neighbor_weights([-0.1, -0.5]), [0.5, 0.5])


def test_sampling_frequencies_match_weights():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(8, 2)) + np.array([3.0, 3.0])
    idx = _index(data, k=4, identities=list("AAAABBBB"))
    w = idx.weights(0)
    n = 100_000
    counts = np.zeros(4)
    draw_rng = np.random.default_rng(2)
    for _ in range(n):
        d = sample_neighbor(idx, 0, draw_rng)
        counts[list(idx.neighbors[0]).index(d.position)] += 1
    sigma = np.sqrt(n * w * (1 - w))
    assert np.all(np.abs(counts - n * w) < 3 * sigma)


def test_draw_reports_identity_relation():
    idx = _index([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]], k=1, identities=["A", "B", "B"])
    d = sample_neighbor(idx, 0, np.random.default_rng(0))
    assert d.neighbor_id == 1 and not d.same_identity and d.w == 1.0


def test_image_similarity_examples():
    assert img_similarity(0.4, True) == 0.4
    assert img_similarity(0.4, False) == pytest.approx(0.16, abs=1e-15)
    assert img_similarity(-0.3, True) == 0.0 and img_similarity(0.0, False) == 0.0
    assert img_similarity(1.0, True) == img_similarity(1.0, False) == 1.0


@given(st.floats(0, 1), st.floats(0, 1), st.booleans())
@settings(max_examples=300, deadline=None)
def test_image_similarity_is_monotone_in_s(s1, s2, same):
    lo, hi = sorted((s1, s2))
    assert img_similarity(lo, same) <= img_similarity(hi, same)


@given(st.floats(-1, 1))
@settings(max_examples=300, deadline=None)
def test_different_identity_never_scores_higher(s):
    assert img_similarity(s, False) <= img_similarity(s, True)


def test_dump_csv(tmp_path):
    idx = _index([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], k=2)
    idx.dump_csv(tmp_path / "index.csv")
    lines = (tmp_path / "index.csv").read_text().splitlines()
    assert lines[0] == "query_id,neighbor_id,s,w" and len(lines) == 1 + 3 * 2
