//! Uncertainty-weighted re-ranking: `M''[i][j] = exp(-beta1 u_v[i]) exp(-beta2 u_t[j]) M'[i][j]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::{PairSet, SimilarityMatrix};
use crate::error::{PauError, Result};
use crate::matrix::Matrix;
use crate::metrics::mean_recall_at_1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RerankParams {
    /// Vision-side weight.
    pub beta1: f64,
    /// Text-side weight.
    pub beta2: f64,
}

impl RerankParams {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        let p = RerankParams { beta1, beta2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(PauError::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {b}"
                )));
            }
        }
        Ok(())
    }
}

/// `{0, 0.25, ..., 5.0}`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.25).collect()
}

pub fn apply_rerank(
    m: &SimilarityMatrix,
    u_v: &[f64],
    u_t: &[f64],
    params: &RerankParams,
) -> Result<SimilarityMatrix> {
    params.validate()?;
    if u_v.len() != m.rows() {
        return Err(PauError::LengthMismatch {
            left: u_v.len(),
            right: m.rows(),
        });
    }
    if u_t.len() != m.cols() {
        return Err(PauError::LengthMismatch {
            left: u_t.len(),
            right: m.cols(),
        });
    }
    let row_w: Vec<f64> = u_v.iter().map(|u| (-params.beta1 * u).exp()).collect();
    let col_w: Vec<f64> = u_t.iter().map(|u| (-params.beta2 * u).exp()).collect();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, rw) in row_w.iter().enumerate() {
        let src = m.row(i);
        for ((o, cw), s) in out.row_mut(i).iter_mut().zip(&col_w).zip(src) {
            *o = rw * cw * s;
        }
    }
    Ok(SimilarityMatrix::from_matrix(out))
}

/// Exhaustive search over `grid x grid` for the betas maximizing the mean of t2v
/// and v2t R@1. Ties go to the smaller `beta1`, then the smaller `beta2`.
pub fn fit_betas(
    m: &SimilarityMatrix,
    u_v: &[f64],
    u_t: &[f64],
    pairs: &PairSet,
    grid: &[f64],
) -> Result<RerankParams> {
    if grid.is_empty() || !grid.contains(&0.0) {
        return Err(PauError::EmptyGrid);
    }
    if let Some(b) = grid.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
        return Err(PauError::InvalidConfig(format!("grid value {b} is not a valid beta")));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let candidates: Vec<RerankParams> = grid
        .iter()
        .flat_map(|&b1| grid.iter().map(move |&b2| RerankParams { beta1: b1, beta2: b2 }))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|p| mean_recall_at_1(&apply_rerank(m, u_v, u_t, p)?, pairs))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(candidates[best])
}

/// A similarity matrix together with the uncertainties and ground-truth pairs
/// needed to fit and judge re-ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankProblem {
    pub m: SimilarityMatrix,
    pub u_v: Vec<f64>,
    pub u_t: Vec<f64>,
    pub pairs: PairSet,
}

impl RerankProblem {
    pub fn new(m: SimilarityMatrix, u_v: Vec<f64>, u_t: Vec<f64>, pairs: PairSet) -> Result<Self> {
        if u_v.len() != m.rows() {
            return Err(PauError::LengthMismatch {
                left: u_v.len(),
                right: m.rows(),
            });
        }
        if u_t.len() != m.cols() {
            return Err(PauError::LengthMismatch {
                left: u_t.len(),
                right: m.cols(),
            });
        }
        pairs.validate(m.rows(), m.cols())?;
        Ok(RerankProblem { m, u_v, u_t, pairs })
    }

    /// Restricts to the pairs whose vision item is marked in `items`, keeping
    /// only the rows and columns those pairs touch.
    pub fn restrict(&self, items: &[bool]) -> Result<RerankProblem> {
        if items.len() != self.m.rows() {
            return Err(PauError::LengthMismatch {
                left: items.len(),
                right: self.m.rows(),
            });
        }
        let keep: Vec<bool> = self.pairs.iter().map(|&(v, _)| items[v]).collect();
        let (pairs, rows, cols) = self.pairs.induced(&keep);
        if pairs.is_empty() {
            return Err(PauError::Empty);
        }
        Ok(RerankProblem {
            m: self.m.select(&rows, &cols),
            u_v: rows.iter().map(|&r| self.u_v[r]).collect(),
            u_t: cols.iter().map(|&c| self.u_t[c]).collect(),
            pairs,
        })
    }

    /// Seeded split of the vision items (with all their captions) into a
    /// validation part of `round(val_fraction * n)` items and a test part.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(RerankProblem, RerankProblem)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(PauError::InvalidConfig(format!(
                "validation fraction must be in (0, 1), got {val_fraction}"
            )));
        }
        let n = self.m.rows();
        let n_val = (val_fraction * n as f64).round() as usize;
        if n_val == 0 || n_val == n {
            return Err(PauError::InsufficientData { needed: 2, got: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut in_val = vec![false; n];
        for &i in &order[..n_val] {
            in_val[i] = true;
        }
        let in_test: Vec<bool> = in_val.iter().map(|b| !b).collect();
        Ok((self.restrict(&in_val)?, self.restrict(&in_test)?))
    }

    pub fn fit(&self, grid: &[f64]) -> Result<RerankParams> {
        fit_betas(&self.m, &self.u_v, &self.u_t, &self.pairs, grid)
    }

    pub fn apply(&self, params: &RerankParams) -> Result<SimilarityMatrix> {
        apply_rerank(&self.m, &self.u_v, &self.u_t, params)
    }

    /// Mean of t2v and v2t R@1 after re-ranking with `params`.
    pub fn mean_r1(&self, params: &RerankParams) -> Result<f64> {
        mean_recall_at_1(&self.apply(params)?, &self.pairs)
    }
}
