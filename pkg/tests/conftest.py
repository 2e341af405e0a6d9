"""Shared fixtures: a tiny hand-built graph plus a small synthetic pipeline.

The hand-built graph gives unit tests exact, enumerable structure; the
synthetic fixtures exercise the full path -> instance -> batch chain at a
size where every test stays fast.
"""

from __future__ import annotations

import numpy as np
import pytest

from kgmlm import (
    ConnectiveLexicon,
    Edge,
    Eventuality,
    KnowledgeGraph,
    MaskingConfig,
    ModelConfig,
    PatternSpec,
    RelationType,
    WalkConfig,
    build_instances,
    build_vocab,
    collate,
    generate,
    init_params,
    sample_corpus,
)

R = RelationType


def make_graph(nodes, edges) -> KnowledgeGraph:
    """Build a graph from (freq, text) tuples and (head, tail, rel, w) tuples."""
    evs = [
        Eventuality(i, tuple(text.split()), freq) for i, (freq, text) in enumerate(nodes)
    ]
    return KnowledgeGraph.from_parts(
        evs, [Edge(h, t, rel, float(w)) for h, t, rel, w in edges]
    )


@pytest.fixture
def tiny_graph() -> KnowledgeGraph:
    """Five nodes with one of each: discourse fan-out, dead end, co-occurrence.

    0 --Condition--> 1 --Reason--> 2; 0 --Reason--> 2; 0 --Contrast--> 3;
    3 is a dead end; 4 is low-frequency; co-occurrence links 0<->4 and 1->4.
    """
    return make_graph(
        [
            (100, "he eats"),
            (50, "he is full"),
            (20, "he naps"),
            (30, "he works"),
            (3, "he sings"),
        ],
        [
            (0, 1, R.Condition, 3.0),
            (0, 2, R.Reason, 1.0),
            (0, 3, R.Contrast, 1.0),
            (1, 2, R.Reason, 2.0),
            (2, 0, R.Precedence, 1.0),
            (0, 4, R.CoOccurrence, 1.0),
            (4, 0, R.CoOccurrence, 1.0),
            (1, 4, R.CoOccurrence, 1.0),
        ],
    )


@pytest.fixture(scope="session")
def small_synth():
    return generate(
        PatternSpec(
            num_nodes=60,
            num_groups=6,
            num_edges=900,
            cooc_partner_groups=1,
            heldout_fraction=0.1,
            seed=7,
        )
    )


@pytest.fixture(scope="session")
def small_corpus(small_synth):
    paths, histogram = sample_corpus(small_synth.graph, WalkConfig(seed=7, num_sequences=300))
    return paths, histogram


@pytest.fixture(scope="session")
def lexicon() -> ConnectiveLexicon:
    return ConnectiveLexicon()


@pytest.fixture(scope="session")
def small_vocab(small_corpus, small_synth, lexicon):
    return build_vocab(small_corpus[0], small_synth.graph, lexicon)


@pytest.fixture(scope="session")
def small_instances(small_corpus, small_synth, small_vocab, lexicon):
    return build_instances(
        small_corpus[0], small_synth.graph, small_vocab, lexicon, MaskingConfig(seed=7)
    )


@pytest.fixture(scope="session")
def small_model(small_vocab):
    config = ModelConfig(
        vocab_size=len(small_vocab), d_model=32, num_layers=2, num_heads=4, d_ff=64, max_len=64
    )
    params = init_params(config, np.random.default_rng(0))
    return config, params


@pytest.fixture
def mixed_batch(small_instances, small_model):
    """A small batch guaranteed to carry all three kinds of supervision."""
    config, _ = small_model
    picked = [i for i in small_instances if i.mlm_targets][:4]
    picked += [i for i in small_instances if i.relation_targets][:4]
    batch = collate(picked, config.max_len)
    assert batch.mlm_targets.size and batch.rel_targets.size and batch.cooc_targets.size
    return batch
