//! Retrieval evaluation with removal curves, plus small numeric helpers
//! for entropy, divergence and batch collision odds.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::{Modality, PairSet, SimilarityMatrix};
use crate::error::{PauError, Result};

/// Tolerance on `sum(p) == 1` for probability vectors.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Text queries ranked over the vision gallery (down each column).
    T2V,
    /// Vision queries ranked over the text gallery (along each row).
    V2T,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::T2V, Direction::V2T];

    pub fn gallery(self) -> Modality {
        match self {
            Direction::T2V => Modality::Vision,
            Direction::V2T => Modality::Text,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::T2V => "t2v",
            Direction::V2T => "v2t",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub direction: Direction,
    /// Percentages in `[0, 100]`.
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Median 1-based rank (lower middle for even counts).
    pub mdr: f64,
    /// Mean 1-based rank.
    pub mnr: f64,
    pub n_queries: usize,
}

impl RetrievalReport {
    /// `(metric, value)` rows in a fixed order.
    pub fn metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("R@1", self.r1),
            ("R@5", self.r5),
            ("R@10", self.r10),
            ("MdR", self.mdr),
            ("MnR", self.mnr),
        ]
    }
}

/// 1-based rank of the best-ranked positive for every query.
///
/// Gallery items are ordered by descending score, ties by ascending index, so
/// the rank is one plus the number of items strictly ahead of the best positive.
pub fn query_ranks(m: &SimilarityMatrix, pairs: &PairSet, direction: Direction) -> Result<Vec<usize>> {
    let (rows, cols) = (m.rows(), m.cols());
    for &(v, t) in pairs.iter() {
        if v >= rows {
            return Err(PauError::IndexOutOfRange {
                modality: Modality::Vision,
                index: v,
                size: rows,
            });
        }
        if t >= cols {
            return Err(PauError::IndexOutOfRange {
                modality: Modality::Text,
                index: t,
                size: cols,
            });
        }
    }
    let (n_queries, positives) = match direction {
        Direction::T2V => (cols, pairs.visions_by_text(cols)),
        Direction::V2T => (rows, pairs.texts_by_vision(rows)),
    };
    if let Some(q) = positives.iter().position(Vec::is_empty) {
        return Err(PauError::MissingPositive {
            modality: direction.gallery().other(),
            index: q,
        });
    }
    let n_gallery = match direction {
        Direction::T2V => rows,
        Direction::V2T => cols,
    };
    let score = |q: usize, g: usize| match direction {
        Direction::T2V => m.get(g, q),
        Direction::V2T => m.get(q, g),
    };
    Ok((0..n_queries)
        .into_par_iter()
        .map(|q| {
            let mut best = positives[q][0];
            for &g in &positives[q][1..] {
                let (sg, sb) = (score(q, g), score(q, best));
                if sg > sb || (sg == sb && g < best) {
                    best = g;
                }
            }
            let sb = score(q, best);
            1 + (0..n_gallery)
                .filter(|&g| {
                    let s = score(q, g);
                    s > sb || (s == sb && g < best)
                })
                .count()
        })
        .collect())
}

pub fn evaluate_retrieval(
    m: &SimilarityMatrix,
    pairs: &PairSet,
    direction: Direction,
) -> Result<RetrievalReport> {
    let mut ranks = query_ranks(m, pairs, direction)?;
    let n = ranks.len();
    if n == 0 {
        return Err(PauError::Empty);
    }
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    let (r1, r5, r10) = (recall(1), recall(5), recall(10));
    let mnr = ranks.iter().sum::<usize>() as f64 / n as f64;
    ranks.sort_unstable();
    let mdr = ranks[(n - 1) / 2] as f64;
    Ok(RetrievalReport {
        direction,
        r1,
        r5,
        r10,
        mdr,
        mnr,
        n_queries: n,
    })
}

/// R@1 in percent.
pub fn recall_at_1(m: &SimilarityMatrix, pairs: &PairSet, direction: Direction) -> Result<f64> {
    let ranks = query_ranks(m, pairs, direction)?;
    if ranks.is_empty() {
        return Err(PauError::Empty);
    }
    Ok(100.0 * ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64)
}

/// Mean of t2v and v2t R@1.
pub fn mean_recall_at_1(m: &SimilarityMatrix, pairs: &PairSet) -> Result<f64> {
    Ok((recall_at_1(m, pairs, Direction::T2V)? + recall_at_1(m, pairs, Direction::V2T)?) / 2.0)
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(PauError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(PauError::InsufficientData {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(PauError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalMode {
    Uncertainty,
    Random,
}

impl fmt::Display for RemovalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemovalMode::Uncertainty => "uncertainty",
            RemovalMode::Random => "random",
        })
    }
}

impl FromStr for RemovalMode {
    type Err = PauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(RemovalMode::Uncertainty),
            "random" => Ok(RemovalMode::Random),
            other => Err(PauError::InvalidConfig(format!("unknown removal mode {other:?}"))),
        }
    }
}

/// Which instance's uncertainty ranks a pair for removal in a given direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemovalSide {
    /// The gallery-side instance (vision for t2v, text for v2t).
    #[default]
    Gallery,
    /// The query-side instance.
    Query,
}

impl FromStr for RemovalSide {
    type Err = PauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gallery" => Ok(RemovalSide::Gallery),
            "query" => Ok(RemovalSide::Query),
            other => Err(PauError::InvalidConfig(format!("unknown removal side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalPoint {
    pub removed: usize,
    pub r1_t2v: f64,
    pub r1_v2t: f64,
    pub pairs_remaining: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalCurve {
    pub mode: RemovalMode,
    pub points: Vec<RemovalPoint>,
}

/// R@1 after removing `r` whole pairs, for each `r` in `counts`.
///
/// Uncertainty mode drops the pairs whose ranking-side instance is most uncertain
/// (ties by pair order), chosen separately per direction. Random mode drops a
/// seeded uniform subset shared by both directions; larger counts extend smaller
/// ones. Each point is evaluated on the submatrix induced by the surviving pairs.
#[allow(clippy::too_many_arguments)]
pub fn removal_curve(
    m: &SimilarityMatrix,
    u_v: &[f64],
    u_t: &[f64],
    pairs: &PairSet,
    counts: &[usize],
    mode: RemovalMode,
    side: RemovalSide,
    seed: u64,
) -> Result<RemovalCurve> {
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
    let total = pairs.len();
    let mut counts = counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    if let Some(&bad) = counts.iter().find(|&&r| r >= total) {
        return Err(PauError::TooManyRemoved { removed: bad, total });
    }

    let order_for = |direction: Direction| -> Vec<usize> {
        let use_vision = matches!(
            (direction, side),
            (Direction::T2V, RemovalSide::Gallery) | (Direction::V2T, RemovalSide::Query)
        );
        let key: Vec<f64> = pairs
            .iter()
            .map(|&(v, t)| if use_vision { u_v[v] } else { u_t[t] })
            .collect();
        let mut idx: Vec<usize> = (0..total).collect();
        idx.sort_by(|&a, &b| key[b].total_cmp(&key[a]).then(a.cmp(&b)));
        idx
    };
    let orders: [Vec<usize>; 2] = match mode {
        RemovalMode::Uncertainty => [order_for(Direction::T2V), order_for(Direction::V2T)],
        RemovalMode::Random => {
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            [idx.clone(), idx]
        }
    };

    let mut points = Vec::with_capacity(counts.len());
    for &r in &counts {
        let mut r1 = [0.0; 2];
        for (slot, (direction, order)) in Direction::BOTH.iter().zip(&orders).enumerate() {
            let mut keep = vec![true; total];
            for &p in &order[..r] {
                keep[p] = false;
            }
            let (sub_pairs, rows, cols) = pairs.induced(&keep);
            let sub = m.select(&rows, &cols);
            r1[slot] = recall_at_1(&sub, &sub_pairs, *direction)?;
        }
        points.push(RemovalPoint {
            removed: r,
            r1_t2v: r1[0],
            r1_v2t: r1[1],
            pairs_remaining: total - r,
        });
    }
    Ok(RemovalCurve { mode, points })
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(PauError::NotADistribution("empty".into()));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(PauError::NotADistribution(format!("entry {v} is not a probability")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(PauError::NotADistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(-p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, so it lies in `[0, 1]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PauError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_bits(p, &mid) + 0.5 * kl_bits(q, &mid)).max(0.0))
}

/// Natural log of the probability that a batch of `batch` captions, drawn from
/// `n_captions` captions grouped `group` per video, contains no two captions of
/// the same video.
pub fn msvd_collision_logprob(n_captions: u64, batch: u64, group: u64) -> Result<f64> {
    if batch == 0 || group == 0 {
        return Err(PauError::InvalidCounts("batch and group must be at least 1".into()));
    }
    if batch.checked_mul(group).is_none_or(|need| need > n_captions) {
        return Err(PauError::InvalidCounts(format!(
            "{n_captions} captions cannot fill {batch} distinct groups of {group}"
        )));
    }
    Ok((0..batch)
        .map(|i| {
            let num = (n_captions - group * i) as f64;
            let den = (n_captions - i) as f64;
            num.ln() - den.ln()
        })
        .sum())
}
