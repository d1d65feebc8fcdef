import json
import math
import random

import numpy as np
import pytest

from evocache.instances import (FEATURE_NAMES, ClusterModel, assignments,
                                classify, extract_features, kmeans)
from evocache.trace import Request, generate_zipf_trace
from evocache.workloads import cluster_suite

F = {name: i for i, name in enumerate(FEATURE_NAMES)}


def test_all_distinct_trace():
    trace = [Request(i, str(i), 10) for i in range(200)]
    v = extract_features(trace)
    assert v[F["one_hit_wonder_fraction"]] == 1.0
    assert v[F["unique_to_total_ratio"]] == 1.0
    assert v[F["mean_interarrival"]] == 0.0
    assert v[F["mean_reuse_distance"]] == 0.0
    assert np.all(np.isfinite(v))


def test_single_object_trace():
    n = 50
    trace = [Request(i, "x", 7) for i in range(n)]
    v = extract_features(trace)
    assert v[F["unique_to_total_ratio"]] == pytest.approx(1 / n)
    assert v[F["top1pct_request_fraction"]] == 1.0
    assert v[F["one_hit_wonder_fraction"]] == 0.0
    assert v[F["mean_interarrival"]] == 1.0
    assert v[F["access_count_gini"]] == 0.0


def test_reuse_distance_hand_example():
    # a b c a: two distinct ids (b, c) between a's accesses
    trace = [Request(0, "a", 1), Request(1, "b", 1), Request(2, "c", 1),
             Request(3, "a", 1)]
    v = extract_features(trace)
    assert v[F["mean_reuse_distance"]] == 2.0
    assert v[F["mean_interarrival"]] == 3.0


def test_reuse_distance_counts_distinct_not_requests():
    # a b b b a: three requests between, but only one distinct id
    trace = [Request(0, "a", 1)] + [Request(i, "b", 1) for i in range(1, 4)] \
        + [Request(4, "a", 1)]
    v = extract_features(trace)
    # two b-reuses with 0 distinct between, one a-reuse with 1 distinct
    assert v[F["mean_reuse_distance"]] == pytest.approx(1 / 3)


def test_features_match_bruteforce_on_mixture():
    trace = generate_zipf_trace(150, 4000, 1.1,
                                {"kind": "lognormal", "mu": 5, "sigma": 1}, seed=77)
    v = extract_features(trace)
    # naive two-pass recomputation
    counts, sizes = {}, {}
    for req in trace:
        counts[req.object_id] = counts.get(req.object_id, 0) + 1
        sizes[req.object_id] = req.size
    assert v[F["unique_objects"]] == len(counts)
    assert v[F["one_hit_wonder_fraction"]] == pytest.approx(
        sum(1 for c in counts.values() if c == 1) / len(counts))
    assert v[F["mean_object_size"]] == pytest.approx(sum(sizes.values()) / len(sizes))
    assert v[F["max_object_size"]] == max(sizes.values())
    assert v[F["size_weighted_unique_fraction"]] == pytest.approx(
        sum(sizes.values()) / sum(r.size for r in trace))


def test_prefix_independent_of_suffix():
    trace = generate_zipf_trace(50, 3000, 1.0, seed=5)
    junk = [Request(0, "zzz", 9)] * 500
    v1 = extract_features(trace, prefix_len=1000)
    v2 = extract_features(trace[:1000] + junk, prefix_len=1000)
    assert np.array_equal(v1, v2)


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        extract_features([])


# --- kmeans ------------------------------------------------------------------------

def blob_data(seed=0, n_per=40, centers=((0,) * 15, (10,) * 15, (-10,) * 15)):
    rng = np.random.default_rng(seed)
    vectors, labels = [], []
    for label, center in enumerate(centers):
        for _ in range(n_per):
            vectors.append(np.array(center) + rng.normal(0, 0.1, len(center)))
            labels.append(label)
    return vectors, labels


def test_kmeans_k_equals_n_has_zero_inertia():
    rng = np.random.default_rng(3)
    vectors = [rng.normal(0, 1, 15) for _ in range(8)]
    model = kmeans(vectors, k=8, seed=1)
    from evocache.instances import inertia
    assert inertia(model, vectors) == pytest.approx(0.0, abs=1e-18)


def test_kmeans_recovers_blobs():
    from sklearn.metrics import adjusted_rand_score
    vectors, labels = blob_data()
    model = kmeans(vectors, k=3, seed=0)
    predicted = assignments(model, vectors)
    assert adjusted_rand_score(labels, predicted) >= 0.99


def test_kmeans_deterministic():
    vectors, _ = blob_data(seed=7)
    m1 = kmeans(vectors, k=3, seed=42)
    m2 = kmeans(vectors, k=3, seed=42)
    assert json.dumps(m1.to_json(), sort_keys=True) == json.dumps(m2.to_json(), sort_keys=True)
    m3 = kmeans(vectors, k=3, seed=43)
    assert json.dumps(m3.to_json(), sort_keys=True) != json.dumps(m1.to_json(), sort_keys=True)


def test_kmeans_rejects_bad_k():
    vectors, _ = blob_data(n_per=2)
    with pytest.raises(ValueError):
        kmeans(vectors, k=7)
    with pytest.raises(ValueError):
        kmeans(vectors, k=0)


def test_kmeans_inertia_non_increasing():
    vectors, _ = blob_data(seed=11, n_per=30)
    history = []
    kmeans(vectors, k=4, seed=2, inertia_history=history)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_zero_variance_feature():
    rng = np.random.default_rng(1)
    vectors = [np.concatenate([[5.0], rng.normal(0, 1, 14)]) for _ in range(20)]
    model = kmeans(vectors, k=2, seed=0)
    assert model.std[0] == 1.0  # degenerate feature gets sigma 1
    assert np.all(np.isfinite(model.centroids))


# --- classification ------------------------------------------------------------------

def test_training_vectors_classify_to_own_cluster():
    vectors, _ = blob_data(seed=5)
    model = kmeans(vectors, k=3, seed=9)
    labels = assignments(model, vectors)
    for v, label in zip(vectors, labels):
        c = classify(model, v)
        assert c.cluster == label
        assert not c.novel


def test_vector_at_centroid_never_novel():
    vectors, _ = blob_data(seed=2)
    model = kmeans(vectors, k=3, seed=3)
    raw_centroid = model.centroids[1] * model.std + model.mean
    c = classify(model, raw_centroid)
    assert c.cluster == 1 and not c.novel and c.distance == pytest.approx(0.0)


def test_far_vector_is_novel():
    vectors, _ = blob_data(seed=4)
    model = kmeans(vectors, k=3, seed=5)
    far = vectors[0] + 1e5
    assert classify(model, far).novel


def test_classify_invariant_to_consistent_feature_rescaling():
    vectors, _ = blob_data(seed=8)
    scale = np.linspace(0.5, 50, 15)
    scaled = [v * scale for v in vectors]
    m1 = kmeans(vectors, k=3, seed=6)
    m2 = kmeans(scaled, k=3, seed=6)
    for v, sv in zip(vectors, scaled):
        c1 = classify(m1, v)
        c2 = classify(m2, sv)
        assert c1.cluster == c2.cluster
        assert c1.novel == c2.novel
        assert c1.distance == pytest.approx(c2.distance)


def test_model_save_load_round_trip(tmp_path):
    vectors, _ = blob_data(seed=6)
    model = kmeans(vectors, k=3, seed=7)
    path = tmp_path / "model.json"
    model.save(str(path))
    loaded = ClusterModel.load(str(path))
    assert loaded.to_json() == model.to_json()
    v = vectors[5]
    assert classify(loaded, v) == classify(model, v)


# --- bundled clustering suite ----------------------------------------------------------

def test_bundled_families_cluster_purely():
    traces, labels = cluster_suite(per_family=5)
    vectors = [extract_features(t) for t in traces]
    model = kmeans(vectors, k=3, seed=17)
    predicted = assignments(model, vectors)
    # majority family per cluster; every trace must land in its family's cluster
    from collections import Counter
    cluster_family = {}
    for cluster in range(3):
        members = [labels[i] for i in range(len(labels)) if predicted[i] == cluster]
        assert members, "empty cluster"
        cluster_family[cluster] = Counter(members).most_common(1)[0][0]
    correct = sum(1 for i, label in enumerate(labels)
                  if cluster_family[int(predicted[i])] == label)
    assert correct / len(labels) >= 0.9
