//! Noise generators with known moment behaviour, and the whitening reduction
//! that turns correlated Gaussian noise into i.i.d. Gaussian noise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stationary Gaussian process described by its autocovariance `c(0), c(1), ...`
/// (lags past the end are zero). Samples are drawn in independent windows of
/// `window` consecutive values, each with the Toeplitz covariance section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatedGaussianSpec {
    pub autocovariance: Vec<f64>,
    pub window: usize,
    /// Spectral bound. Defaults to the row l1 bound of the section.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl CorrelatedGaussianSpec {
    pub fn section(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| self.autocovariance.get(i.abs_diff(j)).copied().unwrap_or(0.0))
    }

    pub fn spectral_bound(&self) -> f64 {
        self.lambda.unwrap_or_else(|| ell1_spectral_bound(&self.section(self.window)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseFamily {
    /// Uniform on `[-half_width, half_width]`; a zero width gives `Z = 0`.
    BoundedUniform { half_width: f64 },
    Gaussian { sigma: f64 },
    StudentT { dof: f64, #[serde(default = "one")] scale: f64 },
    /// `|Z| = scale * U^(-1/tail_index)` with a fair random sign.
    SymmetricPareto { tail_index: f64, #[serde(default = "one")] scale: f64 },
    CorrelatedGaussian(CorrelatedGaussianSpec),
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    /// Declared moment order: `E|Z|^alpha` is claimed finite.
    pub alpha: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, alpha: f64) -> Self {
        Self { family, alpha }
    }

    pub fn zero() -> Self {
        Self::new(NoiseFamily::BoundedUniform { half_width: 0.0 }, f64::INFINITY)
    }

    pub fn bounded(half_width: f64) -> Self {
        Self::new(NoiseFamily::BoundedUniform { half_width }, f64::INFINITY)
    }

    pub fn student_t(dof: f64, alpha: f64) -> Self {
        Self::new(NoiseFamily::StudentT { dof, scale: 1.0 }, alpha)
    }

    /// Supremum of the moment orders that are finite for this family.
    pub fn moment_limit(&self) -> f64 {
        match &self.family {
            NoiseFamily::StudentT { dof, .. } => *dof,
            NoiseFamily::SymmetricPareto { tail_index, .. } => *tail_index,
            _ => f64::INFINITY,
        }
    }

    /// Almost-sure bound on `|Z|`, if any.
    pub fn support_bound(&self) -> Option<f64> {
        match &self.family {
            NoiseFamily::BoundedUniform { half_width } => Some(*half_width),
            _ => None,
        }
    }

    pub fn is_correlated(&self) -> bool {
        matches!(self.family, NoiseFamily::CorrelatedGaussian(_))
    }

    /// Law of the noise the controller sees: correlated Gaussian noise is
    /// whitened to i.i.d. `N(0, lambda)`.
    pub fn effective(&self) -> NoiseSpec {
        match &self.family {
            NoiseFamily::CorrelatedGaussian(c) => {
                Self::new(NoiseFamily::Gaussian { sigma: c.spectral_bound().sqrt() }, self.alpha)
            }
            _ => self.clone(),
        }
    }

    /// Every parameter problem of the spec, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match &self.family {
            NoiseFamily::BoundedUniform { half_width } => {
                if !(half_width.is_finite() && *half_width >= 0.0) {
                    out.push(format!("half_width must be finite and nonnegative, got {half_width}"));
                }
            }
            NoiseFamily::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    out.push(format!("sigma must be finite and nonnegative, got {sigma}"));
                }
            }
            NoiseFamily::StudentT { dof, scale } => {
                if !pos(*dof) || !pos(*scale) {
                    out.push(format!("student-t needs positive dof and scale, got ({dof}, {scale})"));
                }
            }
            NoiseFamily::SymmetricPareto { tail_index, scale } => {
                if !pos(*tail_index) || !pos(*scale) {
                    out.push(format!("pareto needs positive tail_index and scale, got ({tail_index}, {scale})"));
                }
            }
            NoiseFamily::CorrelatedGaussian(c) => {
                if c.window == 0 {
                    out.push("correlated window must be positive".into());
                }
                if c.autocovariance.is_empty() || c.autocovariance.iter().any(|v| !v.is_finite()) {
                    out.push("autocovariance must be a nonempty list of finite values".into());
                } else if c.window > 0 {
                    let sec = c.section(c.window);
                    let lambda = c.spectral_bound();
                    if let Err(e) = psd_sqrt(&sec, lambda) {
                        out.push(format!("covariance section: {e}"));
                    }
                    if let Err(e) = whitening_complement(&sec, lambda) {
                        out.push(format!("covariance section: {e}"));
                    }
                }
            }
        }
        if !(self.alpha > 0.0) {
            out.push(format!("declared alpha must be positive, got {}", self.alpha));
        } else if self.moment_limit().is_finite() && self.alpha >= self.moment_limit() {
            out.push(format!(
                "declared alpha {} is not below the family's moment limit {}",
                self.alpha,
                self.moment_limit()
            ));
        }
        out
    }

    pub fn sampler(&self) -> Result<NoiseSampler> {
        if let Some(p) = self.problems().into_iter().next() {
            return Err(Error::InvalidParameter { name: "noise", reason: p });
        }
        Ok(match &self.family {
            NoiseFamily::BoundedUniform { half_width } => NoiseSampler::Uniform(*half_width),
            NoiseFamily::Gaussian { sigma } => NoiseSampler::Gaussian(*sigma),
            NoiseFamily::StudentT { dof, scale } => NoiseSampler::StudentT(
                StudentT::new(*dof).map_err(|e| Error::InvalidParameter { name: "dof", reason: e.to_string() })?,
                *scale,
            ),
            NoiseFamily::SymmetricPareto { tail_index, scale } => {
                NoiseSampler::Pareto { inv_index: 1.0 / tail_index, scale: *scale }
            }
            NoiseFamily::CorrelatedGaussian(c) => {
                NoiseSampler::Window(GaussianWindow::new(psd_sqrt(&c.section(c.window), c.spectral_bound())?))
            }
        })
    }
}

/// Draws blocks of Gaussian values `factor * xi` one value at a time.
#[derive(Debug, Clone)]
pub struct GaussianWindow {
    factor: DMatrix<f64>,
    buf: DVector<f64>,
    pos: usize,
}

impl GaussianWindow {
    pub fn new(factor: DMatrix<f64>) -> Self {
        let n = factor.nrows();
        Self { factor, buf: DVector::zeros(n), pos: n }
    }

    pub fn next<G: Rng + ?Sized>(&mut self, rng: &mut G) -> f64 {
        if self.pos == self.buf.len() {
            let xi = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            self.buf = &self.factor * xi;
            self.pos = 0;
        }
        let v = self.buf[self.pos];
        self.pos += 1;
        v
    }
}

#[derive(Debug, Clone)]
pub enum NoiseSampler {
    Uniform(f64),
    Gaussian(f64),
    StudentT(StudentT<f64>, f64),
    Pareto { inv_index: f64, scale: f64 },
    Window(GaussianWindow),
}

impl NoiseSampler {
    pub fn next<G: Rng + ?Sized>(&mut self, rng: &mut G) -> f64 {
        match self {
            Self::Uniform(w) => {
                if *w == 0.0 {
                    0.0
                } else {
                    rng.random_range(-*w..=*w)
                }
            }
            Self::Gaussian(s) => *s * rng.sample::<f64, _>(StandardNormal),
            Self::StudentT(t, scale) => *scale * t.sample(rng),
            Self::Pareto { inv_index, scale } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let mag = *scale * u.powf(-*inv_index);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
            Self::Window(w) => w.next(rng),
        }
    }
}

/// `n` samples from `spec`.
pub fn sample_noise<G: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut G, n: usize) -> Result<Vec<f64>> {
    let mut s = spec.sampler()?;
    Ok((0..n).map(|_| s.next(rng)).collect())
}

/// Symmetric square root of a PSD matrix. Eigenvalues down to `-1e-10 * scale`
/// are treated as zero.
pub fn psd_sqrt(cov: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let tol = 1e-10 * scale.abs().max(f64::MIN_POSITIVE);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -tol {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `lambda * I - cov`, the covariance of the compensating noise that makes the
/// sum white.
pub fn whitening_complement(cov: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !cov.is_square() {
        return Err(Error::NotSquare { rows: cov.nrows(), cols: cov.ncols() });
    }
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-12 * cov.amax().max(1.0) {
        return Err(Error::InvalidParameter { name: "cov", reason: format!("not symmetric (asymmetry {asym:e})") });
    }
    let tol = 1e-10 * lambda.abs();
    let eig = SymmetricEigen::new(cov.clone());
    for &v in eig.eigenvalues.iter() {
        if v > lambda + tol {
            return Err(Error::SpectrumExceeded { eigenvalue: v, bound: lambda });
        }
        if v < -tol {
            return Err(Error::NotPsd(v));
        }
    }
    let n = cov.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { lambda - cov[(i, j)] } else { -cov[(i, j)] }))
}

/// Largest row l1 norm, an upper bound on the spectral radius.
pub fn ell1_spectral_bound(cov: &DMatrix<f64>) -> f64 {
    cov.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Monte Carlo estimate of `E|Z|^alpha` with a tail diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub estimate: f64,
    pub samples: usize,
    /// Log-log slope of `t^alpha * P(|Z| > t)` over the empirical upper tail.
    /// Negative when the moment is finite.
    pub tail_slope: f64,
    pub suspect: bool,
}

const SUSPECT_SLOPE: f64 = -0.15;

pub fn verify_alpha_moment<G: Rng + ?Sized>(spec: &NoiseSpec, alpha: f64, budget: usize, rng: &mut G) -> Result<MomentCheck> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter { name: "alpha", reason: format!("must be positive, got {alpha}") });
    }
    let n = budget.max(100);
    let mut mags: Vec<f64> = sample_noise(spec, rng, n)?.into_iter().map(f64::abs).collect();
    let estimate = mags.iter().map(|m| m.powf(alpha)).sum::<f64>() / n as f64;
    mags.sort_by(|a, b| b.total_cmp(a));

    let lo = if n >= 3000 { 30 } else { 10 };
    let hi = (n / 100).max(lo * 4).min(n - 1);
    let mut pts = Vec::new();
    let mut c = lo as f64;
    while (c as usize) <= hi {
        let count = c as usize;
        let t = mags[count];
        if t > 0.0 {
            pts.push((t.ln(), alpha * t.ln() + (count as f64 / n as f64).ln()));
        }
        c *= 1.25;
    }
    let tail_slope = if pts.len() >= 3 { ls_slope(&pts) } else { f64::NEG_INFINITY };
    Ok(MomentCheck { estimate, samples: n, tail_slope, suspect: tail_slope > SUSPECT_SLOPE || !estimate.is_finite() })
}

/// Least-squares slope of `y` on `x`.
pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Smallest power of two `B >= 1` for which the fraction of windows of `window`
/// consecutive noise samples containing some `|Z| > B` is below `threshold`.
pub fn auto_noise_bound<G: Rng + ?Sized>(
    spec: &NoiseSpec,
    dim: usize,
    window: usize,
    threshold: f64,
    budget: usize,
    rng: &mut G,
) -> Result<f64> {
    let window = window.max(1);
    let dim = dim.max(1);
    let rounds = (budget / (window * dim)).max(1000);
    let mut sampler = spec.effective().sampler()?;
    let mut magnitude = || (0..dim).map(|_| sampler.next(rng).powi(2)).sum::<f64>().sqrt();
    let maxima: Vec<f64> = (0..rounds).map(|_| (0..window).map(|_| magnitude()).fold(0.0, f64::max)).collect();
    let mut b = 1.0_f64;
    for _ in 0..64 {
        let over = maxima.iter().filter(|&&m| m > b).count();
        if (over as f64) < threshold * rounds as f64 {
            return Ok(b);
        }
        b *= 2.0;
    }
    Err(Error::Infeasible(format!("no noise bound below {b} reaches failure rate {threshold}")))
}

/// Sampler for the compensating noise `Z'` with covariance `lambda*I - Sigma` per window.
pub fn whitening_sampler(spec: &CorrelatedGaussianSpec) -> Result<GaussianWindow> {
    let lambda = spec.spectral_bound();
    let comp = whitening_complement(&spec.section(spec.window), lambda)?;
    Ok(GaussianWindow::new(psd_sqrt(&comp, lambda)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn uniform_support() {
        let z = sample_noise(&NoiseSpec::bounded(1.0), &mut rng(), 10_000).unwrap();
        assert!(z.iter().all(|v| v.abs() <= 1.0));
        let z = sample_noise(&NoiseSpec::zero(), &mut rng(), 100).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn student_t_variance() {
        let z = sample_noise(&NoiseSpec::student_t(3.0, 2.0), &mut rng(), 1_000_000).unwrap();
        let m2 = z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        assert!((m2 - 3.0).abs() < 0.15, "second moment {m2}");
    }

    #[test]
    fn pareto_tail_slope() {
        let spec = NoiseSpec::new(NoiseFamily::SymmetricPareto { tail_index: 2.5, scale: 1.0 }, 1.0);
        let n = 1_000_000;
        let mut z: Vec<f64> = sample_noise(&spec, &mut rng(), n).unwrap().into_iter().map(f64::abs).collect();
        z.sort_by(|a, b| b.total_cmp(a));
        let pts: Vec<(f64, f64)> = [100usize, 300, 1000, 3000, 10_000, 30_000, 100_000]
            .iter()
            .map(|&c| (z[c].ln(), (c as f64 / n as f64).ln()))
            .collect();
        let slope = ls_slope(&pts);
        assert!((slope + 2.5).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn moment_checks() {
        let g = verify_alpha_moment(&NoiseSpec::new(NoiseFamily::Gaussian { sigma: 1.0 }, 2.0), 2.0, 200_000, &mut rng()).unwrap();
        assert!((g.estimate - 1.0).abs() < 0.02 && !g.suspect, "{g:?}");
        let t = verify_alpha_moment(&NoiseSpec::student_t(3.0, 2.0), 2.0, 1_000_000, &mut rng()).unwrap();
        assert!((t.estimate - 3.0).abs() < 0.3 && !t.suspect, "{t:?}");
        let heavy = verify_alpha_moment(&NoiseSpec::student_t(3.0, 2.0), 3.5, 1_000_000, &mut rng()).unwrap();
        assert!(heavy.suspect, "{heavy:?}");
    }

    #[test]
    fn complement_examples() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let w = whitening_complement(&cov, 1.5).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        let mut ev: Vec<f64> = SymmetricEigen::new(w).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 1.0, epsilon = 1e-12);

        let id = DMatrix::<f64>::identity(3, 3) * 1.5;
        assert_eq!(whitening_complement(&id, 1.5).unwrap(), DMatrix::zeros(3, 3));

        let big = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        match whitening_complement(&big, 1.5) {
            Err(Error::SpectrumExceeded { eigenvalue, .. }) => assert_abs_diff_eq!(eigenvalue, 2.0, epsilon = 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ell1_examples() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(ell1_spectral_bound(&cov), 1.5);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 2.0, 1.0]));
        assert_eq!(ell1_spectral_bound(&d), 2.0);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]);
        assert_abs_diff_eq!(ell1_spectral_bound(&neg), 1.3, epsilon = 1e-15);
    }

    #[test]
    fn whitened_sum_is_white() {
        let spec = CorrelatedGaussianSpec { autocovariance: vec![1.0, 0.25], window: 4, lambda: None };
        assert_eq!(spec.spectral_bound(), 1.5);
        let mut zs = NoiseSpec::new(NoiseFamily::CorrelatedGaussian(spec.clone()), 2.0).sampler().unwrap();
        let mut ws = whitening_sampler(&spec).unwrap();
        let mut r = rng();
        let windows = 100_000;
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..windows {
            let v = DVector::from_fn(4, |_, _| zs.next(&mut r) + ws.next(&mut r));
            acc += &v * v.transpose();
        }
        acc /= windows as f64;
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.5 } else { 0.0 };
                // standard error of a product of two N(0, 1.5) entries
                let se = if i == j { 1.5 * 2f64.sqrt() } else { 1.5 } / (windows as f64).sqrt();
                assert!((acc[(i, j)] - target).abs() < 3.0 * se, "entry ({i},{j}) = {}", acc[(i, j)]);
            }
        }
    }

    #[test]
    fn auto_bound_for_bounded_noise() {
        let b = auto_noise_bound(&NoiseSpec::bounded(3.0), 1, 4, 1e-3, 100_000, &mut rng()).unwrap();
        assert_eq!(b, 4.0);
    }
}
