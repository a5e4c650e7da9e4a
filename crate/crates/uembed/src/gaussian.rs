//! Diagonal Gaussians: the sample posterior and class prior representation,
//! with the closed-form divergences the losses and soft labels are built on.
//!
//! The second-moment vector is stored as a variance (not a standard
//! deviation) throughout the crate.

use crate::rng::Rng;
use std::fmt;

/// Smallest admissible variance entry; guards logs and divisions.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum GaussianError {
    DimensionMismatch { left: usize, right: usize },
    InvalidParameter { detail: String },
}

impl fmt::Display for GaussianError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GaussianError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
            GaussianError::InvalidParameter { detail } => write!(f, "invalid parameter: {detail}"),
        }
    }
}

impl std::error::Error for GaussianError {}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// A diagonal Gaussian in R^d: one mean and one strictly positive variance
/// per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagGaussian {
    /// Variance entries are clamped up to [`VARIANCE_FLOOR`].
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != variance.len() {
            return Err(GaussianError::DimensionMismatch {
                left: mean.len(),
                right: variance.len(),
            });
        }
        if variance.iter().any(|v| !v.is_finite()) {
            return Err(GaussianError::InvalidParameter {
                detail: "non-finite variance".into(),
            });
        }
        let variance = variance.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Ok(DiagGaussian { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    fn check_dim(&self, other_dim: usize) -> Result<()> {
        if self.dim() != other_dim {
            return Err(GaussianError::DimensionMismatch {
                left: self.dim(),
                right: other_dim,
            });
        }
        Ok(())
    }

    /// Log density at `z`.
    pub fn log_pdf(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z.len())?;
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let diff = z[i] - self.mean[i];
            acc += (2.0 * std::f64::consts::PI * self.variance[i]).ln()
                + diff * diff / self.variance[i];
        }
        Ok(-0.5 * acc)
    }

    /// `n` samples, z = mean + sqrt(variance) * eps with eps standard normal.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                (0..self.dim())
                    .map(|i| self.mean[i] + self.variance[i].sqrt() * rng.normal())
                    .collect()
            })
            .collect()
    }
}

/// KL divergence between diagonal Gaussians, D(q || p):
/// 1/2 sum_i [ ln(p_i/q_i) + q_i/p_i - 1 + (mq_i - mp_i)^2 / p_i ]
/// over variances q_i, p_i. Non-negative; zero iff q = p.
pub fn kl_divergence(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    q.check_dim(p.dim())?;
    let mut acc = 0.0;
    for i in 0..q.dim() {
        let vq = q.variance[i];
        let vp = p.variance[i];
        let dm = q.mean[i] - p.mean[i];
        acc += (vp / vq).ln() + vq / vp - 1.0 + dm * dm / vp;
    }
    Ok(0.5 * acc)
}

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// ||mean_a - mean_b||^2 + sum_i (sqrt(var_a_i) - sqrt(var_b_i))^2.
/// Symmetric; zero iff a = b.
pub fn wasserstein_sq(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    a.check_dim(b.dim())?;
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let dm = a.mean[i] - b.mean[i];
        let ds = a.variance[i].sqrt() - b.variance[i].sqrt();
        acc += dm * dm + ds * ds;
    }
    Ok(acc)
}

/// Monte-Carlo estimate of D(q || p) with its standard error: the sample mean
/// of ln q(z) - ln p(z) over n draws from q. Used as an independent oracle
/// for the closed form.
pub fn mc_kl_estimate(q: &DiagGaussian, p: &DiagGaussian, n: usize, seed: u64) -> Result<(f64, f64)> {
    q.check_dim(p.dim())?;
    assert!(n >= 2, "mc_kl_estimate needs n >= 2");
    let samples = q.sample(n, seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for z in &samples {
        let v = q.log_pdf(z)? - p.log_pdf(z)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = (var / (n as f64 - 1.0)).sqrt();
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let q = g(&[0.3, -1.2, 4.0], &[0.5, 2.0, 1.0]);
        assert!(kl_divergence(&q, &q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_unit_mean_shift_is_half() {
        let q = g(&[0.0], &[1.0]);
        let p = g(&[1.0], &[1.0]);
        assert!((kl_divergence(&q, &p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_variance_case_matches_monte_carlo() {
        // D(N(0,0.5) || N(0,1)) = 0.5 ln 2 - 0.25
        let q = g(&[0.0], &[0.5]);
        let p = g(&[0.0], &[1.0]);
        let closed = kl_divergence(&q, &p).unwrap();
        let expected = 0.5 * std::f64::consts::LN_2 - 0.25;
        assert!((closed - expected).abs() < 1e-12);
        let (estimate, se) = mc_kl_estimate(&q, &p, 100_000, 42).unwrap();
        assert!(
            (closed - estimate).abs() < 3.0 * se,
            "closed {closed}, mc {estimate} +- {se}"
        );
    }

    #[test]
    fn kl_dimension_mismatch() {
        let q = g(&[0.0], &[1.0]);
        let p = g(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(kl_divergence(&q, &p).is_err());
    }

    #[test]
    fn wasserstein_hand_case() {
        // d=2: means differ by 3 in one axis, stds swap 1<->2
        let a = g(&[0.0, 0.0], &[1.0, 4.0]);
        let b = g(&[3.0, 0.0], &[4.0, 1.0]);
        let d = wasserstein_sq(&a, &b).unwrap();
        assert!((d - 11.0).abs() < 1e-12, "{d}");
        assert!((wasserstein_sq(&b, &a).unwrap() - d).abs() < 1e-12);
        assert!(wasserstein_sq(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn wasserstein_unit_mean_offset() {
        let a = g(&[0.0, 1.0], &[0.7, 0.7]);
        let b = g(&[1.0, 1.0], &[0.7, 0.7]);
        assert!((wasserstein_sq(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_standard_at_origin() {
        let g1 = DiagGaussian::standard(1);
        let v = g1.log_pdf(&[0.0]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_at_mean_is_normalizer_only() {
        let g1 = g(&[2.0, -3.0], &[0.5, 4.0]);
        let v = g1.log_pdf(&[2.0, -3.0]).unwrap();
        let expected: f64 = -0.5
            * g1.variance()
                .iter()
                .map(|&s| (2.0 * std::f64::consts::PI * s).ln())
                .sum::<f64>();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one_on_grid() {
        // 2-D grid quadrature over +-6 sigma
        let g1 = g(&[0.4, -0.2], &[0.8, 1.7]);
        let steps = 400usize;
        let mut total = 0.0;
        let (s0, s1) = (g1.variance()[0].sqrt(), g1.variance()[1].sqrt());
        let (lo0, hi0) = (g1.mean()[0] - 6.0 * s0, g1.mean()[0] + 6.0 * s0);
        let (lo1, hi1) = (g1.mean()[1] - 6.0 * s1, g1.mean()[1] + 6.0 * s1);
        let (d0, d1) = ((hi0 - lo0) / steps as f64, (hi1 - lo1) / steps as f64);
        for i in 0..steps {
            for j in 0..steps {
                let z = [lo0 + (i as f64 + 0.5) * d0, lo1 + (j as f64 + 0.5) * d1];
                total += g1.log_pdf(&z).unwrap().exp() * d0 * d1;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn sampling_with_floor_variance_stays_at_mean() {
        let g1 = g(&[5.0, -5.0], &[0.0, 0.0]); // clamped to the floor
        for z in g1.sample(5, 7) {
            for (s, m) in z.iter().zip(g1.mean()) {
                assert!((s - m).abs() <= 3.0 * VARIANCE_FLOOR.sqrt());
            }
        }
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let g1 = DiagGaussian::standard(1);
        let samples = g1.sample(100_000, 13);
        let mean = samples.iter().map(|z| z[0]).sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|z| (z[0] - mean) * (z[0] - mean)).sum::<f64>()
            / samples.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert_eq!(g1.sample(10, 99), g1.sample(10, 99));
    }

    #[test]
    fn mc_estimate_of_identical_covers_zero() {
        let q = g(&[1.0, 2.0], &[1.5, 0.25]);
        let (estimate, se) = mc_kl_estimate(&q, &q, 10_000, 3).unwrap();
        assert!(estimate.abs() <= 3.0 * se.max(1e-15), "{estimate} vs {se}");
    }

    #[test]
    fn mc_standard_error_shrinks_with_n() {
        let q = g(&[0.0], &[0.5]);
        let p = g(&[0.4], &[1.0]);
        let (_, se_small) = mc_kl_estimate(&q, &p, 20_000, 5).unwrap();
        let (_, se_big) = mc_kl_estimate(&q, &p, 40_000, 5).unwrap();
        let ratio = se_small / se_big;
        assert!((ratio - std::f64::consts::SQRT_2).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn kl_is_generally_asymmetric() {
        let mut rng = Rng::new(31);
        let mut found = false;
        for _ in 0..100 {
            let q = g(
                &[rng.normal(), rng.normal()],
                &[rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)],
            );
            let p = g(
                &[rng.normal(), rng.normal()],
                &[rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)],
            );
            if (kl_divergence(&q, &p).unwrap() - kl_divergence(&p, &q).unwrap()).abs() > 1e-3 {
                found = true;
                break;
            }
        }
        assert!(found, "no asymmetric pair found");
    }

    #[test]
    fn kl_non_negative_over_random_pairs() {
        let mut rng = Rng::new(17);
        for _ in 0..10_000 {
            let d = 1 + rng.below(4);
            let q = DiagGaussian::new(
                (0..d).map(|_| rng.normal()).collect(),
                (0..d).map(|_| rng.uniform(0.05, 3.0)).collect(),
            )
            .unwrap();
            let p = DiagGaussian::new(
                (0..d).map(|_| rng.normal()).collect(),
                (0..d).map(|_| rng.uniform(0.05, 3.0)).collect(),
            )
            .unwrap();
            assert!(kl_divergence(&q, &p).unwrap() >= 0.0);
        }
    }
}
