//! Embedding containers, cosine similarity and cross-modal similarity matrices.
//!
//! Rows of an [`EmbeddingSet`] are unit-normalized once at construction, so every
//! downstream cosine between two sets is a plain dot product.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::error::{PauError, Result};
use crate::matrix::{dot, norm, Matrix};

/// Rows with a norm below this are rejected as zero vectors.
pub const MIN_NORM: f64 = 1e-12;

/// True for norms too small (or NaN) to divide by.
pub(crate) fn degenerate_norm(n: f64) -> bool {
    n.is_nan() || n < MIN_NORM
}

/// Rows are accepted as already unit when their norm is within this of 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Vision => Modality::Text,
            Modality::Text => Modality::Vision,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Modality::Vision => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Modality> {
        match b {
            0 => Some(Modality::Vision),
            1 => Some(Modality::Text),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Text => "text",
        })
    }
}

/// `n` unit-norm `d`-dimensional vectors for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    modality: Modality,
    vectors: Matrix,
}

impl EmbeddingSet {
    /// Normalizes every row of a flat row-major buffer.
    pub fn from_flat(modality: Modality, n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(PauError::LengthMismatch {
                left: data.len(),
                right: n * d,
            });
        }
        normalize_rows(modality, Matrix::from_vec(n, d, data))
    }

    pub fn from_rows(modality: Modality, rows: &[Vec<f64>]) -> Result<Self> {
        if let Some(first) = rows.first() {
            if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                return Err(PauError::DimensionMismatch {
                    left: first.len(),
                    right: bad.len(),
                });
            }
        }
        normalize_rows(modality, Matrix::from_rows(rows))
    }

    /// Like [`normalize_rows`] but leaves rows that are already unit within
    /// [`UNIT_TOLERANCE`] untouched, so values loaded from disk stay bit-identical.
    pub fn from_stored(modality: Modality, n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = Matrix::from_vec(n, d, data);
        check_shape(&m)?;
        for i in 0..n {
            let row = m.row_mut(i);
            let nrm = norm(row);
            if degenerate_norm(nrm) {
                return Err(PauError::ZeroVector { row: i });
            }
            if (nrm - 1.0).abs() > UNIT_TOLERANCE {
                row.iter_mut().for_each(|v| *v /= nrm);
            }
        }
        Ok(EmbeddingSet {
            modality,
            vectors: m,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn n(&self) -> usize {
        self.vectors.rows()
    }

    pub fn d(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    /// Copies the listed rows (repeats allowed) into a new set of the same modality.
    pub fn select(&self, indices: &[usize]) -> EmbeddingSet {
        let all: Vec<usize> = (0..self.d()).collect();
        EmbeddingSet {
            modality: self.modality,
            vectors: self.vectors.select(indices, &all),
        }
    }

    pub fn max_norm_deviation(&self) -> f64 {
        self.rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn check_shape(m: &Matrix) -> Result<()> {
    if m.cols() < 2 {
        return Err(PauError::DimensionTooSmall(m.cols()));
    }
    if m.rows() == 0 {
        return Err(PauError::Empty);
    }
    Ok(())
}

/// Divides each row by its L2 norm.
pub fn normalize_rows(modality: Modality, mut matrix: Matrix) -> Result<EmbeddingSet> {
    check_shape(&matrix)?;
    for i in 0..matrix.rows() {
        let row = matrix.row_mut(i);
        let nrm = norm(row);
        if degenerate_norm(nrm) {
            return Err(PauError::ZeroVector { row: i });
        }
        row.iter_mut().for_each(|v| *v /= nrm);
    }
    Ok(EmbeddingSet {
        modality,
        vectors: matrix,
    })
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(PauError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = norm(u);
    if degenerate_norm(nu) {
        return Err(PauError::ZeroVector { row: 0 });
    }
    let nv = norm(v);
    if degenerate_norm(nv) {
        return Err(PauError::ZeroVector { row: 1 });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Vision-by-text cosine similarities. Entry `(i, j)` is in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    /// Wraps raw values, e.g. scores produced by an external model.
    pub fn from_matrix(m: Matrix) -> Self {
        SimilarityMatrix(m)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix(self.0.transpose())
    }

    pub fn select(&self, rows: &[usize], cols: &[usize]) -> SimilarityMatrix {
        SimilarityMatrix(self.0.select(rows, cols))
    }
}

/// Cosine similarity of every vision row against every text row.
///
/// Rows are computed in parallel; each entry is an independent dot product, so the
/// result is bit-identical to a sequential pass.
pub fn similarity_matrix(vis: &EmbeddingSet, txt: &EmbeddingSet) -> Result<SimilarityMatrix> {
    if vis.modality() != Modality::Vision {
        return Err(PauError::ModalityMismatch {
            expected: Modality::Vision,
            found: vis.modality(),
        });
    }
    if txt.modality() != Modality::Text {
        return Err(PauError::ModalityMismatch {
            expected: Modality::Text,
            found: txt.modality(),
        });
    }
    if vis.d() != txt.d() {
        return Err(PauError::DimensionMismatch {
            left: vis.d(),
            right: txt.d(),
        });
    }
    let cols = txt.n();
    let mut data = vec![0.0; vis.n() * cols];
    data.par_chunks_mut(cols.max(1))
        .enumerate()
        .for_each(|(i, out)| {
            let v = vis.row(i);
            for (j, o) in out.iter_mut().enumerate() {
                *o = dot(v, txt.row(j)).clamp(-1.0, 1.0);
            }
        });
    Ok(SimilarityMatrix(Matrix::from_vec(vis.n(), cols, data)))
}

/// Row means (one per vision instance) and column means (one per text instance).
pub fn batch_means(m: &SimilarityMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (r, c) = (m.rows(), m.cols());
    if r == 0 || c == 0 {
        return Err(PauError::Empty);
    }
    let mut row_means = Vec::with_capacity(r);
    let mut col_sums = vec![0.0; c];
    for i in 0..r {
        let row = m.row(i);
        row_means.push(row.iter().sum::<f64>() / c as f64);
        for (s, v) in col_sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let col_means = col_sums.into_iter().map(|s| s / r as f64).collect();
    Ok((row_means, col_means))
}

/// Ground-truth `(vision, text)` correspondences, 0-based. Many-to-many, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for &p in &pairs {
            if !seen.insert(p) {
                return Err(PauError::DuplicatePair(p.0, p.1));
            }
        }
        Ok(PairSet { pairs })
    }

    /// `i <-> i` for `i in 0..n`.
    pub fn diagonal(n: usize) -> Self {
        PairSet {
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> + '_ {
        self.pairs.iter()
    }

    /// Checks index ranges and that every vision and text index has at least one pair.
    pub fn validate(&self, n_vis: usize, n_txt: usize) -> Result<()> {
        let mut vis_seen = vec![false; n_vis];
        let mut txt_seen = vec![false; n_txt];
        for &(v, t) in &self.pairs {
            if v >= n_vis {
                return Err(PauError::IndexOutOfRange {
                    modality: Modality::Vision,
                    index: v,
                    size: n_vis,
                });
            }
            if t >= n_txt {
                return Err(PauError::IndexOutOfRange {
                    modality: Modality::Text,
                    index: t,
                    size: n_txt,
                });
            }
            vis_seen[v] = true;
            txt_seen[t] = true;
        }
        if let Some(i) = vis_seen.iter().position(|s| !s) {
            return Err(PauError::MissingPositive {
                modality: Modality::Vision,
                index: i,
            });
        }
        if let Some(j) = txt_seen.iter().position(|s| !s) {
            return Err(PauError::MissingPositive {
                modality: Modality::Text,
                index: j,
            });
        }
        Ok(())
    }

    /// For each vision index, its paired text indices in pair order.
    pub fn texts_by_vision(&self, n_vis: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_vis];
        for &(v, t) in &self.pairs {
            out[v].push(t);
        }
        out
    }

    /// For each text index, its paired vision indices in pair order.
    pub fn visions_by_text(&self, n_txt: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_txt];
        for &(v, t) in &self.pairs {
            out[t].push(v);
        }
        out
    }

    /// Keeps the listed pairs and re-indexes the rows and columns they touch.
    ///
    /// Returns the compacted pairs plus the original vision and text indices
    /// (ascending) that survive.
    pub fn induced(&self, keep: &[bool]) -> (PairSet, Vec<usize>, Vec<usize>) {
        let kept: Vec<(usize, usize)> = self
            .pairs
            .iter()
            .zip(keep)
            .filter_map(|(&p, &k)| k.then_some(p))
            .collect();
        let mut rows: Vec<usize> = kept.iter().map(|p| p.0).collect();
        rows.sort_unstable();
        rows.dedup();
        let mut cols: Vec<usize> = kept.iter().map(|p| p.1).collect();
        cols.sort_unstable();
        cols.dedup();
        let remap = |idx: &[usize], x: usize| idx.binary_search(&x).expect("kept index");
        let pairs = kept
            .iter()
            .map(|&(v, t)| (remap(&rows, v), remap(&cols, t)))
            .collect();
        (PairSet { pairs }, rows, cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalize_examples() {
        let s = EmbeddingSet::from_rows(Modality::Vision, &[vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.0, 0.0]);
        let s = EmbeddingSet::from_rows(Modality::Text, &[vec![3.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(s.row(0)[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s.row(0)[1], 0.8, epsilon = 1e-15);
        assert!(matches!(
            EmbeddingSet::from_rows(Modality::Text, &[vec![0.0, 0.0]]),
            Err(PauError::ZeroVector { row: 0 })
        ));
        assert!(matches!(
            EmbeddingSet::from_rows(Modality::Text, &[vec![1.0]]),
            Err(PauError::DimensionTooSmall(1))
        ));
    }

    #[test]
    fn cosine_examples() {
        let x = [0.3, -2.0, 5.0];
        assert_abs_diff_eq!(cosine(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(PauError::DimensionMismatch { .. })
        ));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(PauError::ZeroVector { .. })));
    }

    #[test]
    fn similarity_matrix_contracts() {
        let x = vec![0.2, 0.5, -0.1];
        let v = EmbeddingSet::from_rows(Modality::Vision, std::slice::from_ref(&x)).unwrap();
        let t = EmbeddingSet::from_rows(Modality::Text, &[x]).unwrap();
        let m = similarity_matrix(&v, &t).unwrap();
        assert_abs_diff_eq!(m.get(0, 0), 1.0, epsilon = 1e-12);

        let v = EmbeddingSet::from_rows(Modality::Vision, &vec![vec![1.0, 2.0]; 3]).unwrap();
        let t = EmbeddingSet::from_rows(Modality::Text, &vec![vec![2.0, -1.0]; 5]).unwrap();
        let m = similarity_matrix(&v, &t).unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 5));

        assert!(matches!(
            similarity_matrix(&t, &v),
            Err(PauError::ModalityMismatch { .. })
        ));
        let t3 = EmbeddingSet::from_rows(Modality::Text, &[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            similarity_matrix(&v, &t3),
            Err(PauError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_means_examples() {
        let m = SimilarityMatrix::from_matrix(Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]));
        let (hv, ht) = batch_means(&m).unwrap();
        assert_eq!(hv, vec![0.5, 0.5]);
        assert_eq!(ht, vec![0.5, 0.5]);

        let m = SimilarityMatrix::from_matrix(Matrix::from_vec(3, 4, vec![0.25; 12]));
        let (hv, ht) = batch_means(&m).unwrap();
        assert!(hv.iter().chain(&ht).all(|&h| h == 0.25));

        let empty = SimilarityMatrix::from_matrix(Matrix::zeros(0, 3));
        assert!(matches!(batch_means(&empty), Err(PauError::Empty)));
    }

    #[test]
    fn pairset_validation() {
        assert!(matches!(
            PairSet::new(vec![(0, 0), (0, 0)]),
            Err(PauError::DuplicatePair(0, 0))
        ));
        let p = PairSet::new(vec![(0, 0), (1, 1), (1, 2)]).unwrap();
        p.validate(2, 3).unwrap();
        assert!(matches!(
            p.validate(2, 2),
            Err(PauError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            p.validate(3, 3),
            Err(PauError::MissingPositive { modality: Modality::Vision, index: 2 })
        ));
    }

    #[test]
    fn induced_reindexes() {
        let p = PairSet::new(vec![(0, 0), (1, 1), (1, 2), (2, 3)]).unwrap();
        let (q, rows, cols) = p.induced(&[false, true, true, true]);
        assert_eq!(rows, vec![1, 2]);
        assert_eq!(cols, vec![1, 2, 3]);
        assert_eq!(q.as_slice(), &[(0, 0), (0, 1), (1, 2)]);
    }
}
