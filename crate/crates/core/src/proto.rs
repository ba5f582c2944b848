//! Prototype banks, the uncertainty and diversity losses, their analytic gradients,
//! and the training loop over frozen embeddings.
//!
//! Vision uncertainties are scored against the *text* bank and text uncertainties
//! against the *vision* bank, so the uncertainty loss of one modality only moves
//! the other modality's prototypes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embed::{batch_means, similarity_matrix, EmbeddingSet, Modality, PairSet};
use crate::embed::degenerate_norm;
use crate::error::{PauError, Result};
use crate::evidence::{prototype_similarities, EvidenceConfig};
use crate::matrix::{dot, norm, Matrix};
use crate::optim::{Optimizer, OptimizerKind};

/// `K` learnable prototypes for one modality. Rows are not kept unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    modality: Modality,
    vectors: Matrix,
}

impl PrototypeBank {
    pub fn new(modality: Modality, vectors: Matrix) -> Result<Self> {
        if vectors.cols() < 2 {
            return Err(PauError::DimensionTooSmall(vectors.cols()));
        }
        if vectors.rows() == 0 {
            return Err(PauError::Empty);
        }
        let bank = PrototypeBank { modality, vectors };
        bank.check_rows()?;
        Ok(bank)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn k(&self) -> usize {
        self.vectors.rows()
    }

    pub fn d(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.k() {
            if degenerate_norm(norm(self.vectors.row(i))) {
                return Err(PauError::ZeroPrototype { row: i });
            }
        }
        Ok(())
    }

    /// Unit-normalized copies of the prototypes.
    pub fn unit_rows(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.k())
            .map(|i| {
                let row = self.vectors.row(i);
                let n = norm(row);
                if degenerate_norm(n) {
                    return Err(PauError::ZeroPrototype { row: i });
                }
                Ok(row.iter().map(|v| v / n).collect())
            })
            .collect()
    }

    /// Cosine matrix between prototypes (`K x K`).
    pub fn gram(&self) -> Result<Matrix> {
        let unit = self.unit_rows()?;
        let k = unit.len();
        let mut g = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                g.set(i, j, dot(&unit[i], &unit[j]));
            }
        }
        Ok(g)
    }

    /// Largest `|cos|` between two distinct prototypes; 0 for a single prototype.
    pub fn max_off_diagonal_cosine(&self) -> Result<f64> {
        let g = self.gram()?;
        let mut worst: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                if i != j {
                    worst = worst.max(g.get(i, j).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Xavier-uniform bank: entries in `[-sqrt(6 / 2d), +sqrt(6 / 2d)]`, seeded.
pub fn init_prototypes(modality: Modality, k: usize, d: usize, seed: u64) -> Result<PrototypeBank> {
    if d < 2 {
        return Err(PauError::DimensionTooSmall(d));
    }
    if k == 0 {
        return Err(PauError::Empty);
    }
    let bound = xavier_bound(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..k * d).map(|_| rng.random_range(-bound..=bound)).collect();
    PrototypeBank::new(modality, Matrix::from_vec(k, d, data))
}

pub fn xavier_bound(d: usize) -> f64 {
    (6.0 / (2.0 * d as f64)).sqrt()
}

/// How batch-mean cosines are turned into uncertainty targets in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMap {
    /// `(h + 1) / 2`.
    #[default]
    Affine,
    /// `clamp(h, 0, 1)`.
    Clamp,
}

impl TargetMap {
    #[inline]
    pub fn apply(self, h: f64) -> f64 {
        match self {
            TargetMap::Affine => (h + 1.0) / 2.0,
            TargetMap::Clamp => h.clamp(0.0, 1.0),
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            TargetMap::Affine => 0,
            TargetMap::Clamp => 1,
        }
    }
}

impl fmt::Display for TargetMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMap::Affine => "affine",
            TargetMap::Clamp => "clamp",
        })
    }
}

impl FromStr for TargetMap {
    type Err = PauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(TargetMap::Affine),
            "clamp" => Ok(TargetMap::Clamp),
            other => Err(PauError::InvalidConfig(format!("unknown target map {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the diversity loss of both banks.
    pub lambda_div: f64,
    pub seed: u64,
    pub evidence: EvidenceConfig,
    pub optimizer: OptimizerKind,
    pub target_map: TargetMap,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 8,
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-4,
            lambda_div: 1.0,
            seed: 0,
            evidence: EvidenceConfig::default(),
            optimizer: OptimizerKind::default(),
            target_map: TargetMap::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.evidence.validate()?;
        if self.k == 0 || self.epochs == 0 {
            return Err(PauError::InvalidConfig("k and epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(PauError::InvalidConfig("batch size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PauError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda_div >= 0.0 && self.lambda_div.is_finite()) {
            return Err(PauError::InvalidConfig(format!(
                "lambda_div must be non-negative, got {}",
                self.lambda_div
            )));
        }
        Ok(())
    }
}

/// Mean squared error between uncertainties and targets.
pub fn loss_uct(u: &[f64], h: &[f64]) -> Result<f64> {
    if u.len() != h.len() {
        return Err(PauError::LengthMismatch {
            left: u.len(),
            right: h.len(),
        });
    }
    if u.is_empty() {
        return Err(PauError::Empty);
    }
    Ok(u.iter().zip(h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / u.len() as f64)
}

/// Mean squared cosine over all `K^2` prototype pairs, diagonal included.
pub fn loss_div(bank: &PrototypeBank) -> Result<f64> {
    let g = bank.gram()?;
    let k = bank.k() as f64;
    Ok(g.as_slice().iter().map(|c| c * c).sum::<f64>() / (k * k))
}

/// Uncertainty loss of `instances` against `targets`, scored on `bank`, with its
/// gradient with respect to the bank entries.
pub fn uct_loss_and_grad(
    instances: &EmbeddingSet,
    targets: &[f64],
    bank: &PrototypeBank,
    evidence: &EvidenceConfig,
) -> Result<(f64, Matrix)> {
    if instances.n() != targets.len() {
        return Err(PauError::LengthMismatch {
            left: instances.n(),
            right: targets.len(),
        });
    }
    if instances.d() != bank.d() {
        return Err(PauError::DimensionMismatch {
            left: instances.d(),
            right: bank.d(),
        });
    }
    let n = instances.n();
    if n == 0 {
        return Err(PauError::Empty);
    }
    let (k, d) = (bank.k(), bank.d());
    let kf = k as f64;
    let unit = bank.unit_rows()?;

    // Per prototype: sum_i c_ik x_i and sum_i c_ik p_ik, where
    // c_ik = dL/du_i * du_i/dS_i * de/dp (p_ik).
    let mut weighted = Matrix::zeros(k, d);
    let mut radial = vec![0.0; k];
    let mut loss = 0.0;
    for (x, &target) in instances.rows().zip(targets) {
        let p = prototype_similarities(x, &unit);
        let strength = kf + p.iter().map(|&s| evidence.evidence(s)).sum::<f64>();
        let u = 1.0 - kf / strength;
        let r = u - target;
        loss += r * r;
        let du = 2.0 * r / n as f64 * kf / (strength * strength);
        for (j, &s) in p.iter().enumerate() {
            let c = du * evidence.derivative(s);
            if c != 0.0 {
                for (w, xv) in weighted.row_mut(j).iter_mut().zip(x) {
                    *w += c * xv;
                }
                radial[j] += c * s;
            }
        }
    }
    let mut grad = Matrix::zeros(k, d);
    for j in 0..k {
        let inv_norm = 1.0 / norm(bank.vectors().row(j));
        let w = weighted.row(j);
        for (c, g) in grad.row_mut(j).iter_mut().enumerate() {
            *g = (w[c] - radial[j] * unit[j][c]) * inv_norm;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Diversity loss with its gradient.
pub fn div_loss_and_grad(bank: &PrototypeBank) -> Result<(f64, Matrix)> {
    let unit = bank.unit_rows()?;
    let (k, d) = (bank.k(), bank.d());
    let kf = k as f64;
    let mut cos = Matrix::zeros(k, k);
    let mut loss = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = dot(&unit[i], &unit[j]);
            cos.set(i, j, c);
            loss += c * c;
        }
    }
    let mut grad = Matrix::zeros(k, d);
    let scale = 4.0 / (kf * kf);
    for i in 0..k {
        // gradient wrt the unit vector, then projected through the normalization
        let mut g_unit = vec![0.0; d];
        for (j, uj) in unit.iter().enumerate() {
            let c = cos.get(i, j);
            for (g, z) in g_unit.iter_mut().zip(uj) {
                *g += scale * c * z;
            }
        }
        let along = dot(&g_unit, &unit[i]);
        let inv_norm = 1.0 / norm(bank.vectors().row(i));
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = (g_unit[c] - along * unit[i][c]) * inv_norm;
        }
    }
    Ok((loss / (kf * kf), grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub uct_vision: f64,
    pub uct_text: f64,
    pub div_vision: f64,
    pub div_text: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Gradient for the vision bank.
    pub vision: Matrix,
    /// Gradient for the text bank.
    pub text: Matrix,
    pub losses: Losses,
}

/// Analytic gradients of
/// `L = L_uct(vision) + L_uct(text) + lambda_div * (L_div(vision bank) + L_div(text bank))`
/// on one aligned batch. Targets come from the batch similarity matrix and are
/// held constant.
pub fn gradients(
    vis: &EmbeddingSet,
    txt: &EmbeddingSet,
    bank_v: &PrototypeBank,
    bank_t: &PrototypeBank,
    cfg: &TrainConfig,
) -> Result<Gradients> {
    if vis.n() != txt.n() {
        return Err(PauError::LengthMismatch {
            left: vis.n(),
            right: txt.n(),
        });
    }
    if vis.n() < 2 {
        return Err(PauError::InsufficientData {
            needed: 2,
            got: vis.n(),
        });
    }
    if bank_v.d() != bank_t.d() {
        return Err(PauError::DimensionMismatch {
            left: bank_v.d(),
            right: bank_t.d(),
        });
    }
    let m = similarity_matrix(vis, txt)?;
    let (hv, ht) = batch_means(&m)?;
    let hv: Vec<f64> = hv.into_iter().map(|h| cfg.target_map.apply(h)).collect();
    let ht: Vec<f64> = ht.into_iter().map(|h| cfg.target_map.apply(h)).collect();
    targeted_gradients(vis, txt, &hv, &ht, bank_v, bank_t, cfg)
}

/// Same as [`gradients`] but with explicit uncertainty targets.
pub fn targeted_gradients(
    vis: &EmbeddingSet,
    txt: &EmbeddingSet,
    targets_v: &[f64],
    targets_t: &[f64],
    bank_v: &PrototypeBank,
    bank_t: &PrototypeBank,
    cfg: &TrainConfig,
) -> Result<Gradients> {
    let (uct_vision, mut grad_t) = uct_loss_and_grad(vis, targets_v, bank_t, &cfg.evidence)?;
    let (uct_text, mut grad_v) = uct_loss_and_grad(txt, targets_t, bank_v, &cfg.evidence)?;
    let (div_vision, gdv) = div_loss_and_grad(bank_v)?;
    let (div_text, gdt) = div_loss_and_grad(bank_t)?;
    if cfg.lambda_div != 0.0 {
        for (g, a) in grad_v.as_mut_slice().iter_mut().zip(gdv.as_slice()) {
            *g += cfg.lambda_div * a;
        }
        for (g, a) in grad_t.as_mut_slice().iter_mut().zip(gdt.as_slice()) {
            *g += cfg.lambda_div * a;
        }
    }
    Ok(Gradients {
        vision: grad_v,
        text: grad_t,
        losses: Losses {
            uct_vision,
            uct_text,
            div_vision,
            div_text,
            total: uct_vision + uct_text + cfg.lambda_div * (div_vision + div_text),
        },
    })
}

/// One row per completed epoch; losses are means over the epoch's batches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<Losses>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bank_v: PrototypeBank,
    pub bank_t: PrototypeBank,
    pub history: TrainHistory,
}

/// Derives independent sub-seeds from the user seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains both banks on aligned batches drawn from `pairs`.
///
/// Each epoch shuffles the vision items and pairs every item with one of its
/// captions, chosen uniformly. Single-threaded and fully determined by `cfg.seed`.
pub fn train(
    vis: &EmbeddingSet,
    txt: &EmbeddingSet,
    pairs: &PairSet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if vis.d() != txt.d() {
        return Err(PauError::DimensionMismatch {
            left: vis.d(),
            right: txt.d(),
        });
    }
    if pairs.len() < 2 {
        return Err(PauError::InsufficientPairs(pairs.len()));
    }
    pairs.validate(vis.n(), txt.n())?;
    let captions = pairs.texts_by_vision(vis.n());
    let mut items: Vec<usize> = (0..vis.n()).filter(|&i| !captions[i].is_empty()).collect();
    if items.len() < 2 {
        return Err(PauError::InsufficientPairs(pairs.len()));
    }

    let d = vis.d();
    let mut bank_v = init_prototypes(Modality::Vision, cfg.k, d, derive_seed(cfg.seed, 1))?;
    let mut bank_t = init_prototypes(Modality::Text, cfg.k, d, derive_seed(cfg.seed, 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut opt_v = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.k * d);
    let mut opt_t = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.k * d);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        items.shuffle(&mut rng);
        let texts: Vec<usize> = items
            .iter()
            .map(|&i| captions[i][rng.random_range(0..captions[i].len())])
            .collect();
        let mut sums = Losses::default();
        let mut batches = 0usize;
        for (vi, ti) in items.chunks(cfg.batch_size).zip(texts.chunks(cfg.batch_size)) {
            if vi.len() < 2 {
                continue;
            }
            let g = gradients(&vis.select(vi), &txt.select(ti), &bank_v, &bank_t, cfg)?;
            opt_v.step(bank_v.vectors_mut().as_mut_slice(), g.vision.as_slice());
            opt_t.step(bank_t.vectors_mut().as_mut_slice(), g.text.as_slice());
            bank_v.check_rows()?;
            bank_t.check_rows()?;
            sums.uct_vision += g.losses.uct_vision;
            sums.uct_text += g.losses.uct_text;
            sums.div_vision += g.losses.div_vision;
            sums.div_text += g.losses.div_text;
            batches += 1;
        }
        if !bank_v.vectors().is_finite() || !bank_t.vectors().is_finite() {
            return Err(PauError::NonFinite { epoch });
        }
        let b = batches.max(1) as f64;
        let mut rec = Losses {
            uct_vision: sums.uct_vision / b,
            uct_text: sums.uct_text / b,
            div_vision: sums.div_vision / b,
            div_text: sums.div_text / b,
            total: 0.0,
        };
        rec.total = rec.uct_vision + rec.uct_text + cfg.lambda_div * (rec.div_vision + rec.div_text);
        history.epochs.push(rec);
    }
    Ok(TrainOutcome {
        bank_v,
        bank_t,
        history,
    })
}
