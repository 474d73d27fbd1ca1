//! Per-class covariance geometry and the comparisons built on it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSet;
use crate::error::{Error, Result};
use crate::linalg::{covariance_of_slices, sym_eigen, EigenDecomposition, Matrix};
use crate::scalar::Scalar;

/// Number of leading eigenvector pairs compared by default.
pub const DEFAULT_TOP_P: usize = 5;

/// Eigenvalues within `PSD_CLAMP · trace` of zero are snapped to zero.
pub const PSD_CLAMP: f64 = 1e-9;

/// Descending eigenvalues and orthonormal eigenvectors of one class's feature covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBasis<T> {
    class_id: u32,
    eigen: EigenDecomposition<T>,
    sample_count: usize,
}

impl<T: Scalar> GeometryBasis<T> {
    pub fn new(class_id: u32, eigen: EigenDecomposition<T>, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::EmptyClass(class_id));
        }
        Ok(GeometryBasis { class_id, eigen, sample_count })
    }

    /// Eigen-geometry of a set of sample rows.
    pub fn from_rows(class_id: u32, rows: &[&[T]], dim: usize, centered: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyClass(class_id));
        }
        let cov = covariance_of_slices(rows, dim, centered)?;
        let eps = T::lit(PSD_CLAMP) * cov.trace().abs();
        let eigen = sym_eigen(&cov)?.clamp_near_zero(eps);
        Ok(GeometryBasis { class_id, eigen, sample_count: rows.len() })
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.eigen.dim()
    }

    pub fn values(&self) -> &[T] {
        self.eigen.values()
    }

    /// Eigenvector `i` (0-based, descending eigenvalue order).
    pub fn vector(&self, i: usize) -> &[T] {
        self.eigen.vector(i)
    }

    pub fn eigen(&self) -> &EigenDecomposition<T> {
        &self.eigen
    }

    /// Copy with eigenvector `i` negated. Bypasses the canonical sign, for testing
    /// sign invariance.
    pub fn with_flipped(&self, i: usize) -> Self {
        let mut vectors = self.eigen.vectors().clone();
        for j in 0..self.dim() {
            vectors.set(i, j, -vectors.get(i, j));
        }
        let eigen = EigenDecomposition::from_parts(self.values().to_vec(), vectors)
            .expect("negating a row keeps the decomposition valid");
        GeometryBasis { eigen, ..self.clone() }
    }
}

/// Geometry of the samples of `class_id` in `features`.
pub fn geometry_of<T: Scalar>(features: &FeatureSet<T>, class_id: u32, centered: bool) -> Result<GeometryBasis<T>> {
    if class_id as usize >= features.num_classes() {
        return Err(Error::UnknownClass(class_id));
    }
    let rows = features.rows_of(class_id);
    GeometryBasis::from_rows(class_id, &rows, features.dim(), centered)
}

/// Geometries of every class that has at least one sample, in class order.
pub fn class_geometries<T: Scalar>(features: &FeatureSet<T>, centered: bool) -> Result<Vec<GeometryBasis<T>>> {
    let counts = features.class_counts();
    (0..features.num_classes() as u32)
        .filter(|&c| counts[c as usize] > 0)
        .map(|c| geometry_of(features, c, centered))
        .collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_same_dim<T: Scalar>(a: &GeometryBasis<T>, b: &GeometryBasis<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(())
}

/// `Σ_{i<top_p} |⟨ξ_a^i, ξ_b^i⟩|`: rank-paired eigenvector agreement, in `[0, top_p]`.
pub fn geometry_similarity<T: Scalar>(a: &GeometryBasis<T>, b: &GeometryBasis<T>, top_p: usize) -> Result<T> {
    check_same_dim(a, b)?;
    if top_p == 0 || top_p > a.dim() {
        return Err(Error::OutOfDomain { name: "top_p", value: top_p as f64, domain: "1..=dim" });
    }
    Ok((0..top_p).map(|i| dot(a.vector(i), b.vector(i)).abs()).sum())
}

/// All inner products `M_ij = ⟨ξ_a^i, ξ_b^j⟩` between two eigenbases.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix<T> {
    pub class_a: u32,
    pub class_b: u32,
    matrix: Matrix<T>,
}

impl<T: Scalar> AlignmentMatrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn as_matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    /// `Σ_{i<k} |M_ii|`.
    pub fn diagonal_mass(&self, k: usize) -> T {
        (0..k.min(self.dim())).map(|i| self.matrix.get(i, i).abs()).sum()
    }
}

pub fn alignment_matrix<T: Scalar>(a: &GeometryBasis<T>, b: &GeometryBasis<T>) -> Result<AlignmentMatrix<T>> {
    check_same_dim(a, b)?;
    let p = a.dim();
    let matrix = Matrix::from_fn(p, p, |i, j| dot(a.vector(i), b.vector(j)));
    Ok(AlignmentMatrix { class_a: a.class_id, class_b: b.class_id, matrix })
}

/// Fraction of spectral mass carried by the `k` largest eigenvalues.
pub fn top_k_eigenvalue_ratio<T: Scalar>(g: &GeometryBasis<T>, k: usize) -> Result<T> {
    if k == 0 || k > g.dim() {
        return Err(Error::OutOfDomain { name: "k", value: k as f64, domain: "1..=dim" });
    }
    let total: T = g.values().iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::ZeroSpectrum);
    }
    let top: T = g.values()[..k].iter().copied().sum();
    Ok(top / total)
}

/// Symmetric `C x C` matrix of pairwise geometry similarities.
pub fn similarity_matrix<T: Scalar>(geometries: &[GeometryBasis<T>], top_p: usize) -> Result<Matrix<T>> {
    let n = geometries.len();
    if n == 0 {
        return Err(Error::EmptyInput("geometries"));
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = geometry_similarity(&geometries[i], &geometries[j], top_p)?;
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    Ok(m)
}

/// How per-sample model outputs are turned into class similarity scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Average softmax probabilities.
    #[default]
    Probabilities,
    /// Average raw logits.
    Logits,
}

/// For each class, the other classes ranked by averaged score (descending, lower
/// index first on ties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarityTable {
    rows: Vec<Vec<(u32, f64)>>,
}

impl ClassSimilarityTable {
    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    /// Ranking of class `c`, excluding `c` itself.
    pub fn ranking(&self, c: u32) -> Result<&[(u32, f64)]> {
        self.rows.get(c as usize).map(Vec::as_slice).ok_or(Error::UnknownClass(c))
    }

    /// The most similar other class, if there is one.
    pub fn most_similar(&self, c: u32) -> Result<Option<u32>> {
        Ok(self.ranking(c)?.first().map(|&(k, _)| k))
    }

    /// Position of class `k` in `c`'s ranking (0 = most similar).
    pub fn rank_of(&self, c: u32, k: u32) -> Result<Option<usize>> {
        Ok(self.ranking(c)?.iter().position(|&(x, _)| x == k))
    }
}

/// Builds the table from score vectors (`N x C`, used as given) and labels.
pub fn class_similarity_table<T: Scalar>(scores: &Matrix<T>, labels: &[u32]) -> Result<ClassSimilarityTable> {
    if scores.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    let c_n = scores.cols();
    let mut sums = vec![vec![0.0f64; c_n]; c_n];
    let mut counts = vec![0usize; c_n];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= c_n {
            return Err(Error::ShapeMismatch(format!("label {l} but only {c_n} score columns")));
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(scores.row(i)) {
            *s += v.to_f64_lossless();
        }
    }
    if let Some(missing) = counts.iter().position(|&n| n == 0) {
        return Err(Error::MissingClass(missing as u32));
    }
    let rows = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (s, &n))| {
            let mut row: Vec<(u32, f64)> = s
                .into_iter()
                .enumerate()
                .filter(|&(k, _)| k != c)
                .map(|(k, v)| (k as u32, v / n as f64))
                .collect();
            // Stable sort keeps ascending class index among equal scores.
            row.sort_by(|a, b| b.1.total_cmp(&a.1));
            row
        })
        .collect();
    Ok(ClassSimilarityTable { rows })
}

/// Applies `mode` to raw logits, then builds the table.
pub fn class_similarity_from_logits<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[u32],
    mode: ScoreMode,
) -> Result<ClassSimilarityTable> {
    match mode {
        ScoreMode::Logits => class_similarity_table(logits, labels),
        ScoreMode::Probabilities => class_similarity_table(&softmax_rows(logits), labels),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        for (j, e) in exps.into_iter().enumerate() {
            out.set(i, j, e / total);
        }
    }
    out
}

/// Highest-ranked member of `head_set` in `c`'s row.
pub fn most_similar_head(c: u32, table: &ClassSimilarityTable, head_set: &[u32]) -> Result<u32> {
    table
        .ranking(c)?
        .iter()
        .find(|(k, _)| head_set.contains(k))
        .map(|&(k, _)| k)
        .ok_or(Error::NoHeadClass(c))
}

/// Which classes count as head (augmentation donors) and which as tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadTailSplit {
    /// Listed classes are head; every other class present is tail.
    Explicit { head: Vec<u32> },
    /// Classes with at least `min_count` training samples are head.
    Threshold { min_count: usize },
}

impl Default for HeadTailSplit {
    fn default() -> Self {
        HeadTailSplit::Threshold { min_count: 100 }
    }
}

impl HeadTailSplit {
    /// `(head, tail)` class lists in ascending order. Classes with zero samples are
    /// left out of both.
    pub fn split(&self, class_counts: &[usize]) -> Result<(Vec<u32>, Vec<u32>)> {
        let present = (0..class_counts.len() as u32).filter(|&c| class_counts[c as usize] > 0);
        let (head, tail): (Vec<u32>, Vec<u32>) = match self {
            HeadTailSplit::Explicit { head } => {
                let set: BTreeSet<u32> = head.iter().copied().collect();
                if let Some(&bad) = set.iter().find(|&&c| c as usize >= class_counts.len()) {
                    return Err(Error::UnknownClass(bad));
                }
                present.partition(|c| set.contains(c))
            }
            HeadTailSplit::Threshold { min_count } => {
                present.partition(|&c| class_counts[c as usize] >= *min_count)
            }
        };
        if head.is_empty() || tail.is_empty() {
            return Err(Error::config(format!(
                "head/tail split is degenerate: {} head and {} tail classes",
                head.len(),
                tail.len()
            )));
        }
        Ok((head, tail))
    }
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or shorter than two.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "rank correlation needs equal-length inputs");
    if a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        let r = (start + end - 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// 2-D principal-component coordinates of every row (centered), plus the
/// fraction of variance each of the two axes explains.
pub fn pca_project<T: Scalar>(features: &FeatureSet<T>) -> Result<(Matrix<T>, [T; 2])> {
    if features.is_empty() {
        return Err(Error::EmptyInput("feature set"));
    }
    if features.dim() < 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: features.dim() });
    }
    let rows: Vec<&[T]> = (0..features.len()).map(|i| features.row(i)).collect();
    let cov = covariance_of_slices(&rows, features.dim(), true)?;
    let eig = sym_eigen(&cov)?;
    let n = T::from_usize(rows.len()).expect("row count fits the scalar type");
    let mean: Vec<T> = (0..features.dim()).map(|j| rows.iter().map(|r| r[j]).sum::<T>() / n).collect();
    let coords = Matrix::from_fn(rows.len(), 2, |i, k| {
        rows[i].iter().zip(&mean).zip(eig.vector(k)).map(|((&x, &m), &v)| (x - m) * v).sum()
    });
    let total: T = eig.values().iter().map(|&v| v.max(T::zero())).sum();
    let explained = if total > T::zero() {
        [eig.values()[0].max(T::zero()) / total, eig.values()[1].max(T::zero()) / total]
    } else {
        [T::zero(), T::zero()]
    };
    Ok((coords, explained))
}
