//! Fixtures shared by the benchmarks.

use pau::{
    generate_corpus, init_prototypes, EmbeddingSet, Modality, PrototypeBank, SyntheticCorpus,
    SyntheticSpec,
};

pub fn corpus(n_items: usize, d: usize) -> SyntheticCorpus {
    generate_corpus(&SyntheticSpec {
        n_items,
        d,
        seed: 1,
        ..SyntheticSpec::default()
    })
    .expect("valid fixture spec")
}

pub fn banks(k: usize, d: usize) -> (PrototypeBank, PrototypeBank) {
    (
        init_prototypes(Modality::Vision, k, d, 1).expect("valid bank"),
        init_prototypes(Modality::Text, k, d, 2).expect("valid bank"),
    )
}

/// First `n` captions, aligned with the first `n` items.
pub fn aligned_batch(c: &SyntheticCorpus, n: usize) -> (EmbeddingSet, EmbeddingSet) {
    let items: Vec<usize> = (0..n).collect();
    let caps = c.txt.n() / c.vis.n();
    let texts: Vec<usize> = items.iter().map(|i| i * caps).collect();
    (c.vis.select(&items), c.txt.select(&texts))
}
