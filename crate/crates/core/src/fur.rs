//! Feature uncertainty representation: tail features translated along the
//! eigenvectors of a matched head class, and balanced batches built from them.
//!
//! `FUR(z) = z + scale · Σ_{j<k} ε_j w(λ_j) ξ_j` with `ε_j ~ N(0, 1)`, where
//! `(λ_j, ξ_j)` is the head geometry and `w(λ) = λ` (or `√λ`).

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::geometry::GeometryBasis;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Translate by `ε λ`.
    #[default]
    Eigenvalue,
    /// Translate by `ε √λ`, i.e. in standard-deviation units.
    SqrtEigenvalue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FurConfig {
    /// Real tail samples per batch.
    pub n_t: usize,
    /// Synthetic features per real tail sample.
    pub n_a: usize,
    /// Eigenvectors used; `None` means all of them.
    pub k_top: Option<usize>,
    pub scale: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for FurConfig {
    fn default() -> Self {
        FurConfig { n_t: 32, n_a: 3, k_top: None, scale: 1.0, weighting: Weighting::Eigenvalue, seed: 0 }
    }
}

impl FurConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_t == 0 {
            return Err(Error::config("n_t must be at least 1"));
        }
        if let Some(k) = self.k_top {
            if k == 0 || k > dim {
                return Err(Error::config(format!("k_top = {k} outside 1..={dim}")));
            }
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::config("scale must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn k_for(&self, dim: usize) -> usize {
        self.k_top.unwrap_or(dim)
    }

    /// Rows in one composed batch: `2 n_t (1 + n_a)`.
    pub fn batch_size(&self) -> usize {
        2 * self.n_t * (1 + self.n_a)
    }
}

fn weight<T: Scalar>(lambda: T, w: Weighting) -> T {
    match w {
        Weighting::Eigenvalue => lambda,
        Weighting::SqrtEigenvalue => lambda.max(T::zero()).sqrt(),
    }
}

/// Deterministic translation with caller-supplied noise; `eps.len()` must equal
/// the effective `k_top`.
pub fn fur_translate<T: Scalar>(z: &[T], head: &GeometryBasis<T>, eps: &[T], cfg: &FurConfig) -> Result<Vec<T>> {
    let p = head.dim();
    if z.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: z.len() });
    }
    cfg.validate(p)?;
    let k = cfg.k_for(p);
    if eps.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: eps.len() });
    }
    let scale = T::lit(cfg.scale);
    let mut out = z.to_vec();
    for (j, &e) in eps.iter().enumerate() {
        let c = scale * e * weight(head.values()[j], cfg.weighting);
        for (o, &x) in out.iter_mut().zip(head.vector(j)) {
            *o += c * x;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("perturbed feature"));
    }
    Ok(out)
}

/// One stochastic FUR draw.
pub fn fur_perturb<T: Scalar, R: Rng + ?Sized>(
    z: &[T],
    head: &GeometryBasis<T>,
    cfg: &FurConfig,
    rng: &mut R,
) -> Result<Vec<T>> {
    if z.len() != head.dim() {
        return Err(Error::DimensionMismatch { expected: head.dim(), found: z.len() });
    }
    let k = cfg.k_for(head.dim()).min(head.dim());
    let eps: Vec<T> = (0..k).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    fur_translate(z, head, &eps, cfg)
}

/// Where a batch row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    RealTail,
    /// Perturbation of the real tail row at `source_row` of the same batch (or file).
    SyntheticTail { source_row: usize },
    RealHead,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::RealTail => f.write_str("real-tail"),
            Provenance::SyntheticTail { source_row } => write!(f, "synthetic-tail:{source_row}"),
            Provenance::RealHead => f.write_str("real-head"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch<T> {
    pub features: Matrix<T>,
    pub labels: Vec<u32>,
    pub provenance: Vec<Provenance>,
    /// Dataset row each batch row was drawn from (synthetic rows: their source's row).
    pub dataset_rows: Vec<usize>,
}

impl<T: Scalar> AugmentedBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, kind: fn(&Provenance) -> bool) -> usize {
        self.provenance.iter().filter(|p| kind(p)).count()
    }
}

/// Tail-to-head matching plus the head geometries FUR draws from.
#[derive(Debug, Clone)]
pub struct HeadDonors<T> {
    pub matching: BTreeMap<u32, u32>,
    pub geometries: BTreeMap<u32, GeometryBasis<T>>,
}

impl<T: Scalar> HeadDonors<T> {
    pub fn geometry_for_tail(&self, tail: u32) -> Result<&GeometryBasis<T>> {
        let head = self.matching.get(&tail).ok_or(Error::UnmatchedTail(tail))?;
        self.geometries.get(head).ok_or(Error::UnmatchedTail(tail))
    }
}

/// Validated pools for repeated balanced-batch composition over one dataset.
#[derive(Debug)]
pub struct BalancedSampler<'a, T> {
    dataset: &'a FeatureSet<T>,
    donors: &'a HeadDonors<T>,
    cfg: FurConfig,
    tail_pool: Vec<usize>,
    head_pool: Vec<usize>,
}

impl<'a, T: Scalar> BalancedSampler<'a, T> {
    pub fn new(
        dataset: &'a FeatureSet<T>,
        tail_classes: &[u32],
        head_classes: &[u32],
        donors: &'a HeadDonors<T>,
        cfg: &FurConfig,
    ) -> Result<Self> {
        cfg.validate(dataset.dim())?;
        if tail_classes.is_empty() || head_classes.is_empty() {
            return Err(Error::config("tail and head class sets must be non-empty"));
        }
        if let Some(c) = tail_classes.iter().find(|c| head_classes.contains(c)) {
            return Err(Error::config(format!("class {c} is both head and tail")));
        }
        let pool = |classes: &[u32]| -> Vec<usize> {
            (0..dataset.len()).filter(|&i| classes.contains(&dataset.label(i))).collect()
        };
        let tail_pool = pool(tail_classes);
        let head_pool = pool(head_classes);
        if head_pool.is_empty() {
            return Err(Error::InsufficientHeadData);
        }
        if tail_pool.is_empty() {
            return Err(Error::EmptyInput("tail pool"));
        }
        if cfg.n_a > 0 {
            for &c in tail_classes {
                if dataset.indices_of(c).is_empty() {
                    continue;
                }
                let g = donors.geometry_for_tail(c)?;
                if g.dim() != dataset.dim() {
                    return Err(Error::DimensionMismatch { expected: dataset.dim(), found: g.dim() });
                }
            }
        }
        Ok(BalancedSampler { dataset, donors, cfg: cfg.clone(), tail_pool, head_pool })
    }

    pub fn config(&self) -> &FurConfig {
        &self.cfg
    }

    /// Draws one batch: `n_t` real tail rows (uniform over tail samples, with
    /// replacement), `n_a` perturbations of each, and `n_t (1 + n_a)` real head rows,
    /// then shuffles.
    pub fn compose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AugmentedBatch<T>> {
        let (n_t, n_a) = (self.cfg.n_t, self.cfg.n_a);
        let total = self.cfg.batch_size();
        let p = self.dataset.dim();
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        let mut prov = Vec::with_capacity(total);
        let mut src = Vec::with_capacity(total);

        for _ in 0..n_t {
            let i = self.tail_pool[rng.random_range(0..self.tail_pool.len())];
            let label = self.dataset.label(i);
            let z = self.dataset.row(i);
            let real_at = rows.len();
            rows.push(z.to_vec());
            labels.push(label);
            prov.push(Provenance::RealTail);
            src.push(i);
            if n_a > 0 {
                let head = self.donors.geometry_for_tail(label)?;
                for _ in 0..n_a {
                    rows.push(fur_perturb(z, head, &self.cfg, rng)?);
                    labels.push(label);
                    prov.push(Provenance::SyntheticTail { source_row: real_at });
                    src.push(i);
                }
            }
        }
        for _ in 0..n_t * (1 + n_a) {
            let i = self.head_pool[rng.random_range(0..self.head_pool.len())];
            rows.push(self.dataset.row(i).to_vec());
            labels.push(self.dataset.label(i));
            prov.push(Provenance::RealHead);
            src.push(i);
        }

        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(rng);
        let mut new_pos = vec![0; total];
        for (pos, &old) in order.iter().enumerate() {
            new_pos[old] = pos;
        }
        let mut data = Vec::with_capacity(total * p);
        for &old in &order {
            data.extend_from_slice(&rows[old]);
        }
        let provenance = order
            .iter()
            .map(|&old| match prov[old] {
                Provenance::SyntheticTail { source_row } => Provenance::SyntheticTail { source_row: new_pos[source_row] },
                other => other,
            })
            .collect();
        Ok(AugmentedBatch {
            features: Matrix::new(total, p, data)?,
            labels: order.iter().map(|&o| labels[o]).collect(),
            provenance,
            dataset_rows: order.iter().map(|&o| src[o]).collect(),
        })
    }
}

/// One-shot form of [`BalancedSampler::compose`].
pub fn compose_balanced_batch<T: Scalar, R: Rng + ?Sized>(
    dataset: &FeatureSet<T>,
    tail_classes: &[u32],
    head_classes: &[u32],
    donors: &HeadDonors<T>,
    cfg: &FurConfig,
    rng: &mut R,
) -> Result<AugmentedBatch<T>> {
    BalancedSampler::new(dataset, tail_classes, head_classes, donors, cfg)?.compose(rng)
}

/// Whole-file augmentation: every input row in order, tagged real-head or
/// real-tail, followed by `n_a` perturbations of each tail row in input order.
pub fn augment_dataset<T: Scalar, R: Rng + ?Sized>(
    dataset: &FeatureSet<T>,
    tail_classes: &[u32],
    donors: &HeadDonors<T>,
    cfg: &FurConfig,
    rng: &mut R,
) -> Result<(FeatureSet<T>, Vec<Provenance>)> {
    cfg.validate(dataset.dim())?;
    let mut features = dataset.raw_features().to_vec();
    let mut labels = dataset.labels().to_vec();
    let mut prov: Vec<Provenance> = labels
        .iter()
        .map(|l| if tail_classes.contains(l) { Provenance::RealTail } else { Provenance::RealHead })
        .collect();
    if cfg.n_a > 0 {
        for i in 0..dataset.len() {
            let label = dataset.label(i);
            if !tail_classes.contains(&label) {
                continue;
            }
            let head = donors.geometry_for_tail(label)?;
            for _ in 0..cfg.n_a {
                features.extend(fur_perturb(dataset.row(i), head, cfg, rng)?);
                labels.push(label);
                prov.push(Provenance::SyntheticTail { source_row: i });
            }
        }
    }
    let set = FeatureSet::new(dataset.dim(), dataset.num_classes(), features, labels)?;
    Ok((set, prov))
}
