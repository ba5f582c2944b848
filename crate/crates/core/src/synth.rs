//! Seeded synthetic cross-modal corpora with known ambiguity.
//!
//! The latent space has `k_true` orthonormal semantic directions. Each item mixes
//! `m` of them with equal weight; vision and caption vectors share the same mix but
//! get independent Gaussian noise. Items with larger `m` overlap with more of the
//! corpus, which is exactly what makes them ambiguous.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embed::{EmbeddingSet, Modality, PairSet};
use crate::error::{PauError, Result};
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub d: usize,
    pub k_true: usize,
    /// `ambiguity_weights[m - 1]` is the probability of mixing `m` semantics.
    pub ambiguity_weights: Vec<f64>,
    pub noise_sigma: f64,
    pub captions_per_item: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 2000 items, d = 64, 8 semantics, m uniform over 1..=4, two captions, seed 7.
    fn default() -> Self {
        SyntheticSpec {
            n_items: 2000,
            d: 64,
            k_true: 8,
            ambiguity_weights: vec![0.25; 4],
            noise_sigma: 0.05,
            captions_per_item: 2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// 1000 items mixing anywhere from one semantic to all eight, with noise
    /// sigma 0.15.
    pub fn ambiguous(seed: u64) -> Self {
        SyntheticSpec {
            n_items: 1000,
            ambiguity_weights: vec![0.125; 8],
            noise_sigma: 0.15,
            seed,
            ..SyntheticSpec::default()
        }
    }

    /// Uniform weights over `1..=m_max`.
    pub fn uniform_weights(m_max: usize) -> Vec<f64> {
        vec![1.0 / m_max as f64; m_max]
    }

    pub fn m_max(&self) -> usize {
        self.ambiguity_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PauError::InvalidSpec(msg));
        if self.n_items == 0 {
            return bad("n_items must be at least 1".into());
        }
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if self.k_true == 0 || self.k_true > self.d {
            return bad(format!("k_true must be in 1..={}, got {}", self.d, self.k_true));
        }
        if self.ambiguity_weights.is_empty() || self.m_max() > self.k_true {
            return bad(format!(
                "need 1 <= m_max <= k_true, got m_max = {}",
                self.m_max()
            ));
        }
        if self.ambiguity_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("ambiguity weights must be non-negative".into());
        }
        let total: f64 = self.ambiguity_weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return bad(format!("ambiguity weights sum to {total}, not 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.captions_per_item == 0 {
            return bad("captions_per_item must be at least 1".into());
        }
        Ok(())
    }
}

/// Ground truth per vision item.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityLabels {
    /// Number of mixed semantics.
    pub m: Vec<usize>,
    /// Indices of the mixed semantics, ascending.
    pub semantics: Vec<Vec<usize>>,
}

impl AmbiguityLabels {
    /// `m` of the vision item behind every text, via the pairs.
    pub fn text_m(&self, pairs: &PairSet, n_txt: usize) -> Vec<usize> {
        let mut out = vec![0; n_txt];
        for &(v, t) in pairs.iter() {
            out[t] = self.m[v];
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vis: EmbeddingSet,
    pub txt: EmbeddingSet,
    pub pairs: PairSet,
    pub labels: AmbiguityLabels,
    /// The latent directions, one per row.
    pub directions: Matrix,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gram-Schmidt on Gaussian draws, with a second projection pass for accuracy.
fn orthonormal_directions(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&v);
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Matrix::from_rows(&basis)
}

pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let (d, caps) = (spec.d, spec.captions_per_item);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions = orthonormal_directions(&mut rng, spec.k_true, d);
    let m_dist = WeightedIndex::new(&spec.ambiguity_weights)
        .map_err(|e| PauError::InvalidSpec(e.to_string()))?;

    let mut vis = Vec::with_capacity(spec.n_items * d);
    let mut txt = Vec::with_capacity(spec.n_items * caps * d);
    let mut pairs = Vec::with_capacity(spec.n_items * caps);
    let mut labels = AmbiguityLabels {
        m: Vec::with_capacity(spec.n_items),
        semantics: Vec::with_capacity(spec.n_items),
    };
    let noisy = |rng: &mut ChaCha8Rng, base: &[f64]| -> Vec<f64> {
        base.iter()
            .map(|b| {
                let z: f64 = StandardNormal.sample(rng);
                b + spec.noise_sigma * z
            })
            .collect()
    };
    for item in 0..spec.n_items {
        let m = m_dist.sample(&mut rng) + 1;
        let mut chosen = sample(&mut rng, spec.k_true, m).into_vec();
        chosen.sort_unstable();
        let mut base = vec![0.0; d];
        for &c in &chosen {
            base.iter_mut().zip(directions.row(c)).for_each(|(b, v)| *b += v);
        }
        vis.extend(noisy(&mut rng, &base));
        for c in 0..caps {
            txt.extend(noisy(&mut rng, &base));
            pairs.push((item, item * caps + c));
        }
        labels.m.push(m);
        labels.semantics.push(chosen);
    }
    Ok(SyntheticCorpus {
        vis: EmbeddingSet::from_flat(Modality::Vision, spec.n_items, d, vis)?,
        txt: EmbeddingSet::from_flat(Modality::Text, spec.n_items * caps, d, txt)?,
        pairs: PairSet::new(pairs)?,
        labels,
        directions,
    })
}
