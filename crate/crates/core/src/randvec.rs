//! Angles and inner products between independent uniformly random unit vectors.
//!
//! For unit vectors `u, v` drawn uniformly from the sphere in `R^n`, the angle
//! `θ = ∠(u, v)` has density
//!
//! ```text
//! f_n(θ) = Γ(n/2) / (Γ((n-1)/2) √π) · sin^{n-2} θ,        θ ∈ [0, π]
//! ```
//!
//! and `δ = cos θ = ⟨u, v⟩` has density
//!
//! ```text
//! f_n(δ) = Γ(n/2) / (Γ((n-1)/2) √π) · (1 - δ²)^{(n-3)/2},  δ ∈ [-1, 1]
//! ```
//!
//! As `n` grows the mass concentrates around `δ = 0`: random directions in high
//! dimension are nearly orthogonal. The samplers and the histogram validator let
//! the closed forms be checked against Monte-Carlo draws.
//!
//! Gamma ratios are evaluated in log space so nothing overflows for large `n`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Absolute tolerance used for every integral in this module.
pub const QUAD_TOLERANCE: f64 = 1e-9;

const MAX_DEPTH: u32 = 50;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma is only defined here for positive arguments");
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Surface area of the unit sphere in `R^n`: `2 π^{n/2} / Γ(n/2)`.
pub fn sphere_surface_area(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(dim_error(n, "n >= 1"));
    }
    let half = n as f64 / 2.0;
    Ok(2.0 * (half * PI.ln() - ln_gamma(half)).exp())
}

/// `ln( Γ(n/2) / (Γ((n-1)/2) √π) )`, the shared normalising constant.
fn ln_norm_const(n: usize) -> f64 {
    let n = n as f64;
    ln_gamma(n / 2.0) - ln_gamma((n - 1.0) / 2.0) - 0.5 * PI.ln()
}

fn dim_error(n: usize, domain: &'static str) -> Error {
    Error::OutOfDomain { name: "dim", value: n as f64, domain }
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        Err(dim_error(n, "n >= 2"))
    } else {
        Ok(())
    }
}

fn check_angle(theta: f64) -> Result<()> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::OutOfDomain { name: "theta", value: theta, domain: "[0, π]" });
    }
    Ok(())
}

/// Density of the angle between two random unit vectors in `R^n`.
pub fn angle_pdf(n: usize, theta: f64) -> Result<f64> {
    check_dim(n)?;
    check_angle(theta)?;
    let c = ln_norm_const(n).exp();
    if n == 2 {
        return Ok(c);
    }
    Ok(c * theta.sin().powi(n as i32 - 2))
}

/// Density of the inner product of two random unit vectors in `R^p`.
///
/// For `p = 2` the density diverges at the endpoints and `+∞` is returned at
/// exactly `|δ| = 1`.
pub fn inner_product_pdf(p: usize, delta: f64) -> Result<f64> {
    check_dim(p)?;
    if !(-1.0..=1.0).contains(&delta) {
        return Err(Error::OutOfDomain { name: "delta", value: delta, domain: "[-1, 1]" });
    }
    let exponent = (p as f64 - 3.0) / 2.0;
    let one_minus_sq = (1.0 - delta) * (1.0 + delta);
    if one_minus_sq == 0.0 {
        return Ok(match p {
            2 => f64::INFINITY,
            3 => ln_norm_const(3).exp(),
            _ => 0.0,
        });
    }
    Ok((ln_norm_const(p) + exponent * one_minus_sq.ln()).exp())
}

/// `P(φ ≤ θ)` for the angle `φ` between two random unit vectors in `R^n`.
pub fn angle_cdf(n: usize, theta: f64) -> Result<f64> {
    check_dim(n)?;
    check_angle(theta)?;
    let half_pi = PI / 2.0;
    if theta == half_pi {
        return Ok(0.5);
    }
    // The density is symmetric about π/2; integrate over the shorter side only.
    let (upper, mirrored) = if theta > half_pi { (PI - theta, true) } else { (theta, false) };
    let c = ln_norm_const(n).exp();
    let k = n as i32 - 2;
    let mass = c * integrate(|t| t.sin().powi(k), 0.0, upper, QUAD_TOLERANCE);
    let mass = mass.clamp(0.0, 0.5);
    Ok(if mirrored { 1.0 - mass } else { mass })
}

/// `P(⟨u, v⟩ ≤ δ)` for random unit vectors in `R^p`, via the angle distribution.
pub fn inner_product_cdf(p: usize, delta: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&delta) {
        return Err(Error::OutOfDomain { name: "delta", value: delta, domain: "[-1, 1]" });
    }
    // P(cos φ ≤ δ) = P(φ ≥ acos δ) = P(φ ≤ acos(-δ)) by symmetry about π/2.
    angle_cdf(p, (-delta).acos())
}

/// Probability that a random pair has `|⟨u, v⟩| ≥ |delta|`.
pub fn inner_product_tail_probability(p: usize, delta: f64) -> Result<f64> {
    let d = delta.abs().min(1.0);
    // P(|δ| ≥ d) = 2 P(δ ≤ -d) = 2 P(θ ≤ acos d); acos d ≤ π/2 keeps the integral short.
    Ok((2.0 * angle_cdf(p, d.acos())?).clamp(0.0, 1.0))
}

/// `E|⟨u, v⟩| = Γ(p/2) / (√π Γ((p+1)/2))` for random unit vectors in `R^p`.
pub fn mean_abs_inner_product(p: usize) -> Result<f64> {
    check_dim(p)?;
    let p = p as f64;
    Ok((ln_gamma(p / 2.0) - ln_gamma((p + 1.0) / 2.0) - 0.5 * PI.ln()).exp())
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first split into 8 panels so that narrow peaks of high
/// dimensional densities are not stepped over.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let lo = a + h * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + h };
        let (flo, fhi, fmid) = (f(lo), f(hi), f(0.5 * (lo + hi)));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        total += simpson_step(&f, lo, hi, flo, fmid, fhi, whole, tol / PANELS as f64, MAX_DEPTH);
    }
    total
}

/// Quadrature over the open interval `(a, b)`, tolerating integrable endpoint
/// singularities such as `(1 - x²)^{-1/2}`.
///
/// Uses `x = (a+b)/2 - (b-a)/2 · cos t`; the Jacobian `sin t` vanishes at the
/// endpoints, which are therefore never evaluated.
pub fn integrate_open(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let g = |t: f64| {
        let x = mid - half * t.cos();
        if x <= a || x >= b {
            0.0
        } else {
            f(x) * half * t.sin()
        }
    };
    integrate(g, 0.0, PI, tol)
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // The second clause stops refinement once the requested tolerance is below
    // what double precision can resolve for this panel.
    if depth == 0 || delta.abs() <= 15.0 * tol || delta.abs() <= 1e-15 * (left + right).abs() {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Draws a point uniformly from the unit sphere in `R^p` by normalising a
/// standard normal vector. Near-zero draws are rejected and redrawn.
pub fn sample_unit_vector<T: Scalar, R: Rng + ?Sized>(p: usize, rng: &mut R) -> Vec<T> {
    assert!(p >= 1, "unit vectors need at least one dimension");
    loop {
        let raw: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm >= 1e-12 {
            return raw.into_iter().map(|v| T::lit(v / norm)).collect();
        }
    }
}

/// Uniformly random orthonormal basis of `R^p` (rows), by Gram–Schmidt on
/// Gaussian vectors with one re-orthogonalisation pass.
pub fn sample_orthonormal_basis<T: Scalar, R: Rng + ?Sized>(p: usize, rng: &mut R) -> Matrix<T> {
    assert!(p >= 1, "basis dimension must be positive");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p);
    while rows.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(r) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        rows.push(v);
    }
    Matrix::from_fn(p, p, |i, j| T::lit(rows[i][j]))
}

/// Inner products of `draws` independent pairs of random unit vectors.
pub fn sample_inner_products<R: Rng + ?Sized>(p: usize, draws: usize, rng: &mut R) -> Vec<f64> {
    (0..draws)
        .map(|_| {
            let u: Vec<f64> = sample_unit_vector(p, rng);
            let v: Vec<f64> = sample_unit_vector(p, rng);
            u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the empirical distribution of `samples`
/// and the continuous CDF `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub empirical: f64,
    /// Exact mean density over the bin, `(F(hi) - F(lo)) / width`.
    pub analytic: f64,
    /// Density at the bin midpoint.
    pub analytic_midpoint: f64,
}

impl HistogramBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HistogramReport {
    pub dim: usize,
    pub draws: usize,
    pub bins: Vec<HistogramBin>,
    /// `max |empirical - analytic|` over bins (bin-averaged density).
    pub max_abs_deviation: f64,
    /// `max |empirical - analytic_midpoint|`; carries an O(width²) curvature bias.
    pub max_midpoint_deviation: f64,
}

/// Histograms `draws` sampled inner products in `p` dimensions over `bins`
/// equal bins of `[-1, 1]` and compares each bin's empirical density to the
/// closed form.
///
/// Meaningful checks want `draws >= 10⁴` and `bins >= 10`; smaller values are
/// accepted.
pub fn mc_validate_pdf<R: Rng + ?Sized>(
    p: usize,
    draws: usize,
    bins: usize,
    rng: &mut R,
) -> Result<HistogramReport> {
    check_dim(p)?;
    if draws == 0 || bins == 0 {
        return Err(Error::config("draws and bins must be positive"));
    }
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for d in sample_inner_products(p, draws, rng) {
        let idx = (((d + 1.0) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { 1.0 } else { -1.0 + width * i as f64 }).collect();
    let cdfs = edges.iter().map(|&e| inner_product_cdf(p, e)).collect::<Result<Vec<_>>>()?;

    let mut out = Vec::with_capacity(bins);
    let (mut max_dev, mut max_mid) = (0.0f64, 0.0f64);
    for (i, &count) in counts.iter().enumerate() {
        let (lo, hi) = (edges[i], edges[i + 1]);
        let empirical = count as f64 / (draws as f64 * width);
        let analytic = (cdfs[i + 1] - cdfs[i]) / width;
        let analytic_midpoint = inner_product_pdf(p, 0.5 * (lo + hi))?;
        max_dev = max_dev.max((empirical - analytic).abs());
        max_mid = max_mid.max((empirical - analytic_midpoint).abs());
        out.push(HistogramBin { lo, hi, empirical, analytic, analytic_midpoint });
    }
    Ok(HistogramReport {
        dim: p,
        draws,
        bins: out,
        max_abs_deviation: max_dev,
        max_midpoint_deviation: max_mid,
    })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_dev: f64,
    pub trials: usize,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        SampleStats { mean, std_dev: var.sqrt(), trials: xs.len() }
    }

    /// `(x - mean) / std_dev`.
    pub fn z_score(&self, x: f64) -> f64 {
        (x - self.mean) / self.std_dev
    }
}

/// Monte-Carlo distribution of the rank-paired similarity
/// `Σ_{i<top} |⟨ξ_i, η_i⟩|` between two independent random orthonormal bases of
/// `R^p`.
pub fn random_basis_similarity<R: Rng + ?Sized>(
    p: usize,
    top: usize,
    trials: usize,
    rng: &mut R,
) -> Result<SampleStats> {
    check_dim(p)?;
    if top == 0 || top > p {
        return Err(Error::OutOfDomain { name: "top", value: top as f64, domain: "1..=dim" });
    }
    if trials == 0 {
        return Err(Error::config("trials must be positive"));
    }
    let values: Vec<f64> = (0..trials)
        .map(|_| {
            let a: Matrix<f64> = sample_orthonormal_basis(p, rng);
            let b: Matrix<f64> = sample_orthonormal_basis(p, rng);
            (0..top)
                .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| x * y).sum::<f64>().abs())
                .sum()
        })
        .collect();
    Ok(SampleStats::from_samples(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(0.5), 0.5 * PI.ln(), epsilon = 1e-14);
        // ln(10!) = ln(3628800)
        assert_relative_eq!(ln_gamma(11.0), 3_628_800f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(ln_gamma(0.25), 1.288_022_524_698_077_5, max_relative = 1e-13);
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_surface_area(2).unwrap(), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_surface_area(3).unwrap(), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_surface_area(1).unwrap(), 2.0, max_relative = 1e-14);
        // 40-digit reference value.
        assert_relative_eq!(
            sphere_surface_area(7).unwrap(),
            33.073_361_792_319_808_187,
            max_relative = 1e-13
        );
        assert_relative_eq!(sphere_surface_area(100).unwrap(), 2.368_202_101_882_833_961e-38, max_relative = 1e-12);
        assert!(sphere_surface_area(0).is_err());
    }

    #[test]
    fn angle_pdf_closed_forms() {
        for theta in [0.0, 0.3, 1.7, PI] {
            assert_relative_eq!(angle_pdf(2, theta).unwrap(), 1.0 / PI, max_relative = 1e-14);
        }
        assert_relative_eq!(angle_pdf(3, PI / 2.0).unwrap(), 0.5, max_relative = 1e-14);
        assert!(matches!(angle_pdf(3, -0.1), Err(Error::OutOfDomain { .. })));
        assert!(matches!(angle_pdf(3, 3.2), Err(Error::OutOfDomain { .. })));
        assert!(angle_pdf(1, 1.0).is_err());
    }

    #[test]
    fn angle_pdf_peaks_at_right_angle() {
        for n in [3, 8, 64] {
            let peak = angle_pdf(n, PI / 2.0).unwrap();
            for theta in [0.2, 1.0, 1.5, 1.65, 2.5] {
                assert!(angle_pdf(n, theta).unwrap() < peak);
            }
        }
    }

    #[test]
    fn inner_product_pdf_closed_forms() {
        for d in [-0.99, -0.3, 0.0, 0.5, 0.999] {
            assert_relative_eq!(inner_product_pdf(3, d).unwrap(), 0.5, max_relative = 1e-14);
        }
        assert!(inner_product_pdf(64, 0.0).unwrap() > inner_product_pdf(8, 0.0).unwrap());
        assert_eq!(inner_product_pdf(2, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(inner_product_pdf(2, -1.0).unwrap(), f64::INFINITY);
        assert_eq!(inner_product_pdf(8, 1.0).unwrap(), 0.0);
        assert!(inner_product_pdf(8, 1.0 + 1e-9).is_err());
        // 40-digit reference for the P = 64 normalising constant.
        assert_relative_eq!(
            inner_product_pdf(64, 0.0).unwrap(),
            3.153_966_107_509_388_868_6,
            max_relative = 1e-13
        );
    }

    #[test]
    fn angle_cdf_values() {
        for n in [2, 3, 8, 64, 512] {
            assert_eq!(angle_cdf(n, PI / 2.0).unwrap(), 0.5);
            assert_abs_diff_eq!(angle_cdf(n, 0.0).unwrap(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(angle_cdf(n, PI).unwrap(), 1.0, epsilon = 1e-6);
        }
        // Antiderivative of sin θ / 2 is (1 - cos θ) / 2.
        assert_abs_diff_eq!(angle_cdf(3, PI / 3.0).unwrap(), 0.25, epsilon = 1e-9);
        // 40-digit reference computed by arbitrary precision quadrature.
        assert_abs_diff_eq!(angle_cdf(8, 1.0).unwrap(), 0.066_578_803_689_118_463, epsilon = 1e-9);
    }

    #[test]
    fn angle_cdf_is_monotone() {
        let mut prev = 0.0;
        for i in 0..=200 {
            let v = angle_cdf(16, PI * i as f64 / 200.0).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn mean_abs_inner_product_reference() {
        // 40-digit reference; equals ∫|δ| f_64(δ) dδ.
        assert_relative_eq!(
            mean_abs_inner_product(64).unwrap(),
            0.100_125_908_174_901_233_92,
            max_relative = 1e-13
        );
        // p = 2: E|cos θ| for uniform θ is 2/π.
        assert_relative_eq!(mean_abs_inner_product(2).unwrap(), 2.0 / PI, max_relative = 1e-13);
    }

    #[test]
    fn integrators() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 3.0, 1e-12), 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(integrate(f64::sin, 0.0, PI, 1e-12), 2.0, epsilon = 1e-10);
        let arcsine = integrate_open(|x| 1.0 / (1.0 - x * x).sqrt(), -1.0, 1.0, QUAD_TOLERANCE);
        // Cancellation in 1 - x² next to the endpoints limits this one.
        assert_abs_diff_eq!(arcsine, PI, epsilon = 1e-7);
    }

    #[test]
    fn unit_vectors_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [1, 2, 3, 17, 256] {
            let v: Vec<f64> = sample_unit_vector(p, &mut rng);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn orthonormal_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b: Matrix<f64> = sample_orthonormal_basis(20, &mut rng);
        let g = b.matmul(&b.transpose()).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g.get(i, j), e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_bin_histogram_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = mc_validate_pdf(10, 500, 1, &mut rng).unwrap();
        assert_eq!(r.bins.len(), 1);
        assert_abs_diff_eq!(r.bins[0].empirical, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.bins[0].analytic, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn flat_histogram_in_three_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = mc_validate_pdf(3, 200_000, 20, &mut rng).unwrap();
        for b in &r.bins {
            assert_abs_diff_eq!(b.analytic, 0.5, epsilon = 1e-8);
            // 10⁴ expected per bin: σ of the density estimate is 0.005.
            assert_abs_diff_eq!(b.empirical, 0.5, epsilon = 0.02);
        }
    }

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&xs, |x| x) <= 0.0005 + 1e-12);
    }

    #[test]
    fn tail_probability_bounds() {
        assert_abs_diff_eq!(inner_product_tail_probability(64, 0.0).unwrap(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(inner_product_tail_probability(3, 0.5).unwrap(), 0.5, epsilon = 1e-9);
        assert!(inner_product_tail_probability(64, 0.9).unwrap() < 1e-15);
    }
}
