from collections import Counter

import numpy as np
import pytest

from appsessions.embedding import (EmbeddingConfig, EmbeddingError, EmbeddingModel, Vocab,
                                   build_vocab, load_embedding, lookup, permute_embeddings,
                                   save_embedding, train_cbow)
from appsessions.seeding import rng_for

SMALL = EmbeddingConfig(dim=8, epochs=3)


def template_corpus(seed, n_sentences=30, length=60):
    """Sentences built from disjoint app groups; neighbors almost always share a group."""
    rng = np.random.default_rng(seed)
    groups = [["A", "B", "C"], ["D", "E", "F"], ["G", "H", "I"]]
    corpora = []
    for _ in range(n_sentences):
        sentence = []
        while len(sentence) < length:
            g = groups[rng.integers(3)]
            sentence.extend(rng.choice(g, size=6))
        corpora.append([str(a) for a in sentence])
    return corpora, groups


def cosine(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def test_build_vocab_counts_and_threshold():
    v = build_vocab([["A", "B", "A"]], 1)
    assert v.apps == ("A", "B") and v.counts == (2, 1)
    assert build_vocab([["A", "B", "A"]], 2).apps == ("A",)
    with pytest.raises(EmbeddingError, match="empty vocabulary"):
        build_vocab([["A"]], 5)


def test_build_vocab_matches_tally_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        corpora = [[f"a{x}" for x in rng.integers(0, 15, rng.integers(0, 30))] for _ in range(5)]
        if not any(corpora):
            continue
        tally = {}
        for sentence in corpora:
            for a in sentence:
                tally[a] = tally.get(a, 0) + 1
        v = build_vocab(corpora, 1)
        assert dict(zip(v.apps, v.counts)) == tally
        assert sorted(v.index.values()) == list(range(len(v)))


@pytest.mark.parametrize("field", ["dim", "window", "epochs"])
def test_config_errors(field):
    with pytest.raises(EmbeddingError):
        train_cbow([["A", "B"]], EmbeddingConfig(**{field: 0}))


def test_single_token_corpus_finite():
    m = train_cbow([["A"]], EmbeddingConfig(dim=4, epochs=1))
    assert np.all(np.isfinite(m.vectors)) and m.vectors.shape == (1, 4)


def test_deterministic_given_seed():
    corpora, _ = template_corpus(0, 5)
    a = train_cbow(corpora, SMALL)
    b = train_cbow(corpora, SMALL)
    assert np.array_equal(a.vectors, b.vectors)
    c = train_cbow(corpora, EmbeddingConfig(dim=8, epochs=3, seed=1))
    assert not np.array_equal(a.vectors, c.vectors)


def test_initialization_range_when_nothing_trains():
    # one-token sentences never form a context, so vectors stay at their init
    m = train_cbow([["A"], ["B"], ["C"]], EmbeddingConfig(dim=10, epochs=1))
    assert np.all(np.abs(m.vectors) <= 0.5 / 10)


def test_cooccurrence_structure_is_learned():
    gaps = []
    for seed in range(5):
        corpora, groups = template_corpus(seed)
        m = train_cbow(corpora, EmbeddingConfig(seed=seed))
        vec = {a: m.vectors[m.vocab.index[a]].astype(float) for a in m.vocab.apps}
        assert cosine(vec["A"], vec["B"]) > cosine(vec["A"], vec["D"]) - 1.0  # sanity, finite
        gaps.append(cosine(vec["A"], vec["B"]) - cosine(vec["A"], vec["G"]))
    assert np.mean(gaps) > 0


def test_loss_decreases():
    corpora, _ = template_corpus(11)
    m = train_cbow(corpora, EmbeddingConfig(seed=11))
    assert len(m.epoch_losses) == 15
    assert all(l <= m.epoch_losses[0] for l in m.epoch_losses[1:])


def test_norm_guard():
    corpora, _ = template_corpus(2, n_sentences=60, length=200)
    m = train_cbow(corpora, EmbeddingConfig(seed=2))
    assert np.linalg.norm(m.vectors, axis=1).max() <= 10 * np.sqrt(50)


def test_lookup_and_round_trip(tmp_path):
    corpora, _ = template_corpus(4, 5)
    m = train_cbow(corpora, SMALL)
    assert np.array_equal(lookup(m, "A"), m.vectors[m.vocab.index["A"]])
    assert lookup(m, "nope") is None
    save_embedding(m, tmp_path / "emb.bin")
    back = load_embedding(tmp_path / "emb.bin")
    assert back.vocab == m.vocab and back.config == m.config
    for app in m.vocab.apps:
        assert lookup(back, app).tobytes() == lookup(m, app).tobytes()


def test_load_rejects_truncated(tmp_path):
    m = train_cbow([["A", "B", "A"]], SMALL)
    save_embedding(m, tmp_path / "emb.bin")
    data = (tmp_path / "emb.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[:-4])
    with pytest.raises(EmbeddingError):
        load_embedding(tmp_path / "cut.bin")


def test_permutation_properties():
    corpora, _ = template_corpus(5, 5)
    m = train_cbow(corpora, SMALL)
    p = permute_embeddings(m, seed=9)
    assert p.vocab == m.vocab
    assert np.array_equal(np.sort(np.linalg.norm(p.vectors, axis=1)),
                          np.sort(np.linalg.norm(m.vectors, axis=1)))
    assert sorted(map(bytes, p.vectors)) == sorted(map(bytes, m.vectors))
    one = EmbeddingModel(Vocab(("A",), (1,)), np.ones((1, 3), np.float32), SMALL)
    assert np.array_equal(permute_embeddings(one, 3).vectors, one.vectors)


def test_permutation_replay():
    corpora, _ = template_corpus(6, 5)
    m = train_cbow(corpora, SMALL)
    # recorded permutation drawn from the same labelled stream
    perm = rng_for(9, "permute").permutation(len(m.vocab))
    twice = permute_embeddings(permute_embeddings(m, 9), 9)
    assert np.array_equal(twice.vectors, m.vectors[perm][perm])
