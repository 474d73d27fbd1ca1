//! Labeled feature sets, a synthetic long-tailed generator, and the two on-disk
//! feature formats.
//!
//! CSV:
//!
//! ```text
//! label,f0,f1,...,f{P-1}
//! 3,0.25,-1.5,...
//! ```
//!
//! Labels are non-negative integers; values are written in shortest round-trip
//! decimal. Lines starting with `#` are comments and are skipped on load. A
//! trailing `provenance` column (written by augmentation) is accepted and ignored.
//!
//! Binary (all little-endian):
//!
//! ```text
//! "FGEO"            4 bytes
//! version   u32     = 1
//! N         u64     rows
//! P         u32     feature dimension
//! C         u32     class count
//! labels    N x u32
//! features  N x P x f32, row-major
//! ```
//!
//! Binary storage is single precision, so a `FeatureSet<f64>` round-trips exactly
//! only when its values are representable as `f32`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::randvec::sample_orthonormal_basis;
use crate::scalar::Scalar;

pub const BINARY_MAGIC: &[u8; 4] = b"FGEO";
pub const BINARY_VERSION: u32 = 1;

/// Labeled `N x P` feature vectors with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    dim: usize,
    num_classes: usize,
    features: Vec<T>,
    labels: Vec<u32>,
}

impl<T: Scalar> FeatureSet<T> {
    /// `features` is row-major with `labels.len()` rows of `dim` values.
    pub fn new(dim: usize, num_classes: usize, features: Vec<T>, labels: Vec<u32>) -> Result<Self> {
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::UnknownClass(bad));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature set"));
        }
        Ok(FeatureSet { dim, num_classes, features, labels })
    }

    /// Class count inferred as `max label + 1`.
    pub fn from_rows(rows: &[Vec<T>], labels: Vec<u32>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::DimensionInconsistent { row: i, expected: dim, found: r.len() });
            }
            features.extend_from_slice(r);
        }
        let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
        Self::new(dim, classes, features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw_features(&self) -> &[T] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Row indices belonging to `class`.
    pub fn indices_of(&self, class: u32) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    }

    pub fn rows_of(&self, class: u32) -> Vec<&[T]> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| self.row(i))
            .collect()
    }

    /// All features as an `N x P` matrix. Fails for an empty set.
    pub fn to_matrix(&self) -> Result<Matrix<T>> {
        Matrix::new(self.len(), self.dim, self.features.clone())
    }

    /// Subset of rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        FeatureSet { dim: self.dim, num_classes: self.num_classes, features, labels }
    }

    /// Same labels with new per-row features (e.g. embeddings of these inputs).
    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: features.rows() });
        }
        Self::new(features.cols(), self.num_classes, features.into_vec(), self.labels.clone())
    }

    pub fn cast<U: Scalar>(&self) -> FeatureSet<U> {
        FeatureSet {
            dim: self.dim,
            num_classes: self.num_classes,
            features: self.features.iter().map(|v| U::lit(v.to_f64_lossless())).collect(),
            labels: self.labels.clone(),
        }
    }
}

/// Class-count profile `n_c = round(max_count · IF^{-c/(C-1)})`, floored at 1.
pub fn longtail_counts(classes: usize, max_count: usize, imbalance_factor: f64) -> Vec<usize> {
    if classes == 1 {
        return vec![max_count];
    }
    (0..classes)
        .map(|c| {
            let frac = c as f64 / (classes - 1) as f64;
            ((max_count as f64 * imbalance_factor.powf(-frac)).round() as usize).max(1)
        })
        .collect()
}

/// Per-class eigenvalue profile of the generating covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spectrum {
    /// `λ_i = top · decay^i`.
    Geometric { top: f64, decay: f64 },
    /// All eigenvalues equal to `variance`.
    Isotropic { variance: f64 },
    /// Explicit eigenvalues; must have length `dim`, non-negative, descending.
    Explicit { values: Vec<f64> },
}

impl Spectrum {
    pub fn eigenvalues(&self, dim: usize) -> Result<Vec<f64>> {
        let vals = match self {
            Spectrum::Geometric { top, decay } => (0..dim).map(|i| top * decay.powi(i as i32)).collect(),
            Spectrum::Isotropic { variance } => vec![*variance; dim],
            Spectrum::Explicit { values } => {
                if values.len() != dim {
                    return Err(Error::config(format!(
                        "explicit spectrum has {} values for dimension {dim}",
                        values.len()
                    )));
                }
                values.clone()
            }
        };
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("spectrum values must be finite and non-negative"));
        }
        if vals.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::config("spectrum must be non-increasing"));
        }
        Ok(vals)
    }
}

/// How the synthetic class covariances share eigenbases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BasisSharing {
    /// Class `c` joins group `c mod ceil(C/2)`: with a long-tailed count profile
    /// every tail class shares its basis with exactly one head class.
    Paired,
    /// Every class gets an independent random basis.
    Independent,
    /// Explicit class-to-group map.
    Groups { groups: Vec<usize> },
}

impl BasisSharing {
    pub fn groups(&self, classes: usize) -> Result<Vec<usize>> {
        match self {
            BasisSharing::Paired => {
                let half = classes.div_ceil(2);
                Ok((0..classes).map(|c| c % half).collect())
            }
            BasisSharing::Independent => Ok((0..classes).collect()),
            BasisSharing::Groups { groups } => {
                if groups.len() != classes {
                    return Err(Error::config(format!(
                        "basis groups list has {} entries for {classes} classes",
                        groups.len()
                    )));
                }
                Ok(groups.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub imbalance_factor: f64,
    pub max_count: usize,
    /// Samples per class in the balanced test split.
    pub test_per_class: usize,
    /// Distance scale between class means.
    pub separation: f64,
    /// Pulls the means of classes in the same basis group towards each other,
    /// as a fraction of `separation`.
    pub group_pull: f64,
    pub basis_sharing: BasisSharing,
    pub spectrum: Spectrum,
    /// Optional per-class override of `spectrum`.
    pub class_spectra: Option<Vec<Spectrum>>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            dim: 16,
            imbalance_factor: 100.0,
            max_count: 1000,
            test_per_class: 200,
            separation: 0.75,
            group_pull: 1.0,
            basis_sharing: BasisSharing::Paired,
            spectrum: Spectrum::Geometric { top: 9.0, decay: 0.5 },
            class_spectra: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.dim < 2 {
            return Err(Error::config("need dimension >= 2"));
        }
        if !(self.imbalance_factor >= 1.0) || !self.imbalance_factor.is_finite() {
            return Err(Error::config("imbalance factor must be >= 1"));
        }
        if self.max_count == 0 {
            return Err(Error::config("max_count must be positive"));
        }
        if !self.separation.is_finite() || !self.group_pull.is_finite() {
            return Err(Error::config("separation and group_pull must be finite"));
        }
        if let Some(cs) = &self.class_spectra {
            if cs.len() != self.classes {
                return Err(Error::config("class_spectra needs one entry per class"));
            }
        }
        self.basis_sharing.groups(self.classes)?;
        Ok(())
    }
}

/// Generators behind a synthetic dataset, kept for oracle checks.
#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub class_counts: Vec<usize>,
    pub groups: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    /// One orthonormal basis per group, rows are eigenvectors.
    pub bases: Vec<Vec<Vec<f64>>>,
    /// Per-class generating eigenvalues.
    pub spectra: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Eigenvectors (rows) of class `c`'s generating covariance.
    pub fn basis_of(&self, class: usize) -> &[Vec<f64>] {
        &self.bases[self.groups[class]]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: FeatureSet<f64>,
    pub test: FeatureSet<f64>,
    pub truth: GroundTruth,
}

/// Draws a long-tailed training split and a balanced test split.
///
/// Class `c` is Gaussian with mean `μ_c` and covariance `Q_g Λ_c Q_gᵀ`, where `Q_g`
/// is the random orthonormal basis of the class's sharing group. Means sit on a
/// scaled simplex (`separation · e_c`) when `C <= P`, otherwise on random unit
/// directions; classes of one group additionally share `group_pull · separation`
/// along a group axis when the dimension leaves room for one.
pub fn generate_longtailed<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<SyntheticData> {
    cfg.validate()?;
    let (c_n, p) = (cfg.classes, cfg.dim);
    let counts = longtail_counts(c_n, cfg.max_count, cfg.imbalance_factor);
    let groups = cfg.basis_sharing.groups(c_n)?;
    let n_groups = groups.iter().max().map_or(0, |&g| g + 1);

    let spectra = (0..c_n)
        .map(|c| {
            cfg.class_spectra.as_ref().map_or(&cfg.spectrum, |cs| &cs[c]).eigenvalues(p)
        })
        .collect::<Result<Vec<_>>>()?;

    // Remap group ids to a dense 0..k range in first-appearance order.
    let mut dense = vec![usize::MAX; n_groups];
    let mut next = 0;
    let groups: Vec<usize> = groups
        .iter()
        .map(|&g| {
            if dense[g] == usize::MAX {
                dense[g] = next;
                next += 1;
            }
            dense[g]
        })
        .collect();
    let n_groups = next;

    let bases: Vec<Vec<Vec<f64>>> = (0..n_groups)
        .map(|_| {
            let m: Matrix<f64> = sample_orthonormal_basis(p, rng);
            (0..p).map(|i| m.row(i).to_vec()).collect()
        })
        .collect();

    let means: Vec<Vec<f64>> = (0..c_n)
        .map(|c| {
            let mut mu = vec![0.0; p];
            if c_n <= p {
                mu[c] = cfg.separation;
            } else {
                let dir: Vec<f64> = crate::randvec::sample_unit_vector(p, rng);
                for (m, d) in mu.iter_mut().zip(dir) {
                    *m = cfg.separation * d;
                }
            }
            let axis = c_n + groups[c];
            if c_n + n_groups <= p && n_groups < c_n {
                mu[axis] += cfg.group_pull * cfg.separation;
            }
            mu
        })
        .collect();

    let truth = GroundTruth { class_counts: counts.clone(), groups, means, bases, spectra };
    let train = draw_split(&truth, &counts, rng)?;
    let test_counts = vec![cfg.test_per_class; c_n];
    let test = draw_split(&truth, &test_counts, rng)?;
    Ok(SyntheticData { train, test, truth })
}

fn draw_split<R: Rng + ?Sized>(truth: &GroundTruth, counts: &[usize], rng: &mut R) -> Result<FeatureSet<f64>> {
    let p = truth.means[0].len();
    let total: usize = counts.iter().sum();
    let mut features = Vec::with_capacity(total * p);
    let mut labels = Vec::with_capacity(total);
    for (c, &n) in counts.iter().enumerate() {
        let basis = truth.basis_of(c);
        let sd: Vec<f64> = truth.spectra[c].iter().map(|l| l.sqrt()).collect();
        for _ in 0..n {
            let mut x = truth.means[c].clone();
            for (q, s) in basis.iter().zip(&sd) {
                let z: f64 = rng.sample(StandardNormal);
                for (xi, qi) in x.iter_mut().zip(q) {
                    *xi += s * z * qi;
                }
            }
            features.extend(x);
            labels.push(c as u32);
        }
    }
    FeatureSet::new(p, counts.len(), features, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` means CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

pub fn save_features<T: Scalar>(set: &FeatureSet<T>, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(set, &mut w, None)?,
        Format::Binary => write_binary(set, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_features<T: Scalar>(path: &Path, format: Format) -> Result<FeatureSet<T>> {
    let f = File::open(path)?;
    match format {
        Format::Csv => read_csv(BufReader::new(f)),
        Format::Binary => read_binary(&mut BufReader::new(f)),
    }
}

fn csv_header(dim: usize, provenance: bool) -> String {
    let mut h = String::from("label");
    for j in 0..dim {
        h.push_str(&format!(",f{j}"));
    }
    if provenance {
        h.push_str(",provenance");
    }
    h
}

/// Writes the CSV form. With `provenance`, each row gets one extra trailing column.
pub fn write_csv<T: Scalar, W: Write>(
    set: &FeatureSet<T>,
    w: &mut W,
    provenance: Option<&[String]>,
) -> io::Result<()> {
    if let Some(p) = provenance {
        assert_eq!(p.len(), set.len(), "one provenance tag per row");
    }
    writeln!(w, "{}", csv_header(set.dim, provenance.is_some()))?;
    for i in 0..set.len() {
        write!(w, "{}", set.labels[i])?;
        for v in set.row(i) {
            // `Display` for f32/f64 is the shortest string that parses back exactly.
            write!(w, ",{v}")?;
        }
        if let Some(p) = provenance {
            write!(w, ",{}", p[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_csv<T: Scalar, R: BufRead>(reader: R) -> Result<FeatureSet<T>> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim_start().starts_with('#') && !s.trim().is_empty(),
        Err(_) => true,
    });
    let (hline, header) = match lines.next() {
        Some((i, l)) => (i + 1, l?),
        None => return Err(Error::parse("line 1", "missing header")),
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") {
        return Err(Error::parse(format!("line {hline}"), "header must start with `label`"));
    }
    let has_prov = cols.last() == Some(&"provenance");
    let dim = cols.len() - 1 - has_prov as usize;
    for (j, c) in cols[1..1 + dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::parse(format!("line {hline}"), format!("expected column f{j}, found `{c}`")));
        }
    }
    let width = cols.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, (i, line)) in lines.enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != width {
            return Err(Error::parse(
                format!("line {lineno} (row {row})"),
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let label: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(format!("line {lineno} (row {row})"), format!("bad label: {e}")))?;
        labels.push(label);
        for (j, f) in fields[1..1 + dim].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|e| {
                Error::parse(format!("line {lineno} (row {row}), column f{j}"), format!("{e}"))
            })?;
            let v = T::from_f64(v).filter(|x| x.is_finite()).ok_or_else(|| {
                Error::parse(format!("line {lineno} (row {row}), column f{j}"), "non-finite value")
            })?;
            features.push(v);
        }
    }
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    FeatureSet::new(dim, classes, features, labels)
}

pub fn write_binary<T: Scalar, W: Write>(set: &FeatureSet<T>, w: &mut W) -> io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_u32::<LittleEndian>(BINARY_VERSION)?;
    w.write_u64::<LittleEndian>(set.len() as u64)?;
    w.write_u32::<LittleEndian>(set.dim as u32)?;
    w.write_u32::<LittleEndian>(set.num_classes as u32)?;
    for &l in &set.labels {
        w.write_u32::<LittleEndian>(l)?;
    }
    for v in &set.features {
        w.write_f32::<LittleEndian>(v.to_f64_lossless() as f32)?;
    }
    Ok(())
}

fn truncated(offset: usize, what: &'static str) -> impl Fn(io::Error) -> Error {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::parse(format!("byte {offset}"), format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    }
}

pub fn read_binary<T: Scalar, R: Read>(r: &mut R) -> Result<FeatureSet<T>> {
    let mut offset = 0usize;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated(offset, "magic"))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::parse("byte 0", "bad magic, expected FGEO"));
    }
    offset += 4;
    let version = r.read_u32::<LittleEndian>().map_err(truncated(offset, "version"))?;
    if version != BINARY_VERSION {
        return Err(Error::parse(format!("byte {offset}"), format!("unsupported version {version}")));
    }
    offset += 4;
    let n = r.read_u64::<LittleEndian>().map_err(truncated(offset, "row count"))? as usize;
    offset += 8;
    let p = r.read_u32::<LittleEndian>().map_err(truncated(offset, "dimension"))? as usize;
    offset += 4;
    let c = r.read_u32::<LittleEndian>().map_err(truncated(offset, "class count"))? as usize;
    offset += 4;
    let mut labels = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        labels.push(r.read_u32::<LittleEndian>().map_err(truncated(offset, "labels"))?);
        offset += 4;
    }
    let total = n.checked_mul(p).ok_or_else(|| Error::parse("header", "N x P overflows"))?;
    let mut features = Vec::with_capacity(total.min(1 << 26));
    for _ in 0..total {
        let v = r.read_f32::<LittleEndian>().map_err(truncated(offset, "features"))?;
        if !v.is_finite() {
            return Err(Error::parse(format!("byte {offset}"), "non-finite feature value"));
        }
        features.push(T::lit(v as f64));
        offset += 4;
    }
    FeatureSet::new(p, c, features, labels)
}
