//! 2D visualization of learned distributions: sample codes from each
//! diagonal Gaussian, project the pooled samples to the plane, re-fit a 2D
//! Gaussian per distribution, and export drawable ellipse data.
//!
//! PCA (top two principal directions of the pooled, centered samples) is the
//! built-in projector. An exact t-SNE is not built in; requesting it returns
//! a capability error that points at PCA.

use crate::gaussian::DiagGaussian;
use crate::rng::seed_chain;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectError {
    EmptyInput,
    CapabilityMissing { detail: String },
    DimensionMismatch { detail: String },
    Io { detail: String },
}

impl fmt::Display for ProjectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectError::EmptyInput => write!(f, "no distributions to project"),
            ProjectError::CapabilityMissing { detail } => write!(f, "{detail}"),
            ProjectError::DimensionMismatch { detail } => write!(f, "dimension mismatch: {detail}"),
            ProjectError::Io { detail } => write!(f, "io: {detail}"),
        }
    }
}

impl std::error::Error for ProjectError {}

pub type Result<T> = std::result::Result<T, ProjectError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

/// A distribution flattened to the plane: refit 2D moments plus the
/// projected point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDistribution {
    pub label: String,
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
/// Returns eigenvalues (descending) with matching eigenvectors as rows.
fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row * n + col]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}

/// Samples `samples_per` codes from each distribution (derived seeds per
/// distribution), projects the pooled samples, and refits per-distribution
/// 2D means and per-axis variances.
pub fn project_distributions(
    distributions: &[(String, DiagGaussian)],
    samples_per: usize,
    method: ProjectionMethod,
    seed: u64,
) -> Result<Vec<ProjectedDistribution>> {
    if distributions.is_empty() {
        return Err(ProjectError::EmptyInput);
    }
    if method == ProjectionMethod::Tsne {
        return Err(ProjectError::CapabilityMissing {
            detail: "t-SNE projection is not built in; use the pca method".into(),
        });
    }
    let dim = distributions[0].1.dim();
    if distributions.iter().any(|(_, g)| g.dim() != dim) {
        return Err(ProjectError::DimensionMismatch {
            detail: "distributions have differing dimensionality".into(),
        });
    }
    let samples_per = samples_per.max(2);

    // pooled sampling
    let mut clouds: Vec<Vec<Vec<f64>>> = Vec::with_capacity(distributions.len());
    for (i, (_, g)) in distributions.iter().enumerate() {
        clouds.push(g.sample(samples_per, seed_chain(&[seed, 0x9C0, i as u64])));
    }
    let total = distributions.len() * samples_per;
    let mut center = vec![0.0; dim];
    for cloud in &clouds {
        for z in cloud {
            for (c, v) in center.iter_mut().zip(z) {
                *c += v;
            }
        }
    }
    for c in &mut center {
        *c /= total as f64;
    }

    // covariance of pooled, centered samples
    let mut cov = vec![0.0; dim * dim];
    for cloud in &clouds {
        for z in cloud {
            for i in 0..dim {
                let zi = z[i] - center[i];
                for j in i..dim {
                    cov[i * dim + j] += zi * (z[j] - center[j]);
                }
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let value = cov[i * dim + j] / total as f64;
            cov[i * dim + j] = value;
            cov[j * dim + i] = value;
        }
    }

    let (_, eigenvectors) = symmetric_eigen(&cov, dim);
    let axes: [&[f64]; 2] = [&eigenvectors[0], &eigenvectors[1.min(dim - 1)]];

    let mut out = Vec::with_capacity(distributions.len());
    for ((label, _), cloud) in distributions.iter().zip(&clouds) {
        let points: Vec<[f64; 2]> = cloud
            .iter()
            .map(|z| {
                let mut p = [0.0; 2];
                for (axis, slot) in axes.iter().zip(p.iter_mut()) {
                    *slot = z
                        .iter()
                        .zip(*axis)
                        .zip(&center)
                        .map(|((zv, av), cv)| (zv - cv) * av)
                        .sum();
                }
                p
            })
            .collect();
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        for p in &points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut variance = [0.0; 2];
        for p in &points {
            variance[0] += (p[0] - mean[0]) * (p[0] - mean[0]);
            variance[1] += (p[1] - mean[1]) * (p[1] - mean[1]);
        }
        variance[0] /= n;
        variance[1] /= n;
        out.push(ProjectedDistribution {
            label: label.clone(),
            mean,
            variance,
            points,
        });
    }
    Ok(out)
}

/// Companion CSV: label, mean_x, mean_y, var_x, var_y.
pub fn ellipses_csv(projected: &[ProjectedDistribution]) -> String {
    let mut out = String::from("label,mean_x,mean_y,var_x,var_y\n");
    for p in projected {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            p.label, p.mean[0], p.mean[1], p.variance[0], p.variance[1]
        ));
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Renders one ellipse per distribution at two projected standard deviations
/// per axis, labeled, with optional point clouds. Output bytes are a pure
/// function of the input.
pub fn render_ellipses_svg(projected: &[ProjectedDistribution], include_points: bool) -> String {
    let (mut lo_x, mut hi_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in projected {
        let rx = 2.0 * p.variance[0].sqrt();
        let ry = 2.0 * p.variance[1].sqrt();
        lo_x = lo_x.min(p.mean[0] - rx);
        hi_x = hi_x.max(p.mean[0] + rx);
        lo_y = lo_y.min(p.mean[1] - ry);
        hi_y = hi_y.max(p.mean[1] + ry);
        if include_points {
            for q in &p.points {
                lo_x = lo_x.min(q[0]);
                hi_x = hi_x.max(q[0]);
                lo_y = lo_y.min(q[1]);
                hi_y = hi_y.max(q[1]);
            }
        }
    }
    let span_x = (hi_x - lo_x).max(1e-9);
    let span_y = (hi_y - lo_y).max(1e-9);
    let size = 640.0;
    let margin = 40.0;
    let scale = ((size - 2.0 * margin) / span_x).min((size - 2.0 * margin) / span_y);
    let tx = |x: f64| margin + (x - lo_x) * scale;
    let ty = |y: f64| size - margin - (y - lo_y) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, p) in projected.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if include_points {
            for q in &p.points {
                svg.push_str(&format!(
                    "  <circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"1\" fill=\"{}\" fill-opacity=\"0.25\"/>\n",
                    tx(q[0]),
                    ty(q[1]),
                    color
                ));
            }
        }
        let rx = 2.0 * p.variance[0].sqrt() * scale;
        let ry = 2.0 * p.variance[1].sqrt() * scale;
        if rx < 0.5 && ry < 0.5 {
            // degenerate distribution collapses to a dot marker
            svg.push_str(&format!(
                "  <circle class=\"dot\" cx=\"{:.3}\" cy=\"{:.3}\" r=\"2.5\" fill=\"{}\"/>\n",
                tx(p.mean[0]),
                ty(p.mean[1]),
                color
            ));
        } else {
            svg.push_str(&format!(
                "  <ellipse cx=\"{:.3}\" cy=\"{:.3}\" rx=\"{:.3}\" ry=\"{:.3}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                tx(p.mean[0]),
                ty(p.mean[1]),
                rx.max(0.5),
                ry.max(0.5),
                color,
                color
            ));
        }
        svg.push_str(&format!(
            "  <text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            tx(p.mean[0]) + 4.0,
            ty(p.mean[1]) - 4.0,
            color,
            p.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn export_ellipses(
    projected: &[ProjectedDistribution],
    include_points: bool,
    path: &Path,
) -> Result<()> {
    let svg = render_ellipses_svg(projected, include_points);
    std::fs::write(path, svg).map_err(|e| ProjectError::Io {
        detail: format!("{}: {e}", path.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn gaussian(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    #[test]
    fn jacobi_solves_random_symmetric_matrices() {
        let mut rng = Rng::new(3);
        let n = 6;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let (values, vectors) = symmetric_eigen(&m, n);
        for (lambda, vector) in values.iter().zip(&vectors) {
            for row in 0..n {
                let av: f64 = (0..n).map(|col| m[row * n + col] * vector[col]).sum();
                assert!((av - lambda * vector[row]).abs() < 1e-8, "residual too big");
            }
        }
        // descending order
        for pair in values.windows(2) {
            assert!(pair[0] >= pair[1] - 1e-12);
        }
    }

    #[test]
    fn isotropic_distribution_projects_isotropically() {
        let g = gaussian(&[0.0; 8], &[1.0; 8]);
        let projected =
            project_distributions(&[("iso".into(), g)], 2000, ProjectionMethod::Pca, 7).unwrap();
        let ratio = projected[0].variance[0] / projected[0].variance[1];
        assert!((0.9..=1.1).contains(&ratio), "axis ratio {ratio}");
        assert_eq!(projected[0].points.len(), 2000);
    }

    #[test]
    fn separated_means_stay_separated() {
        let a = gaussian(&[0.0, 0.0, 0.0, 0.0], &[0.5, 0.5, 0.5, 0.5]);
        let b = gaussian(&[30.0, 0.0, 0.0, 0.0], &[0.5, 0.5, 0.5, 0.5]);
        let projected = project_distributions(
            &[("a".into(), a), ("b".into(), b)],
            2000,
            ProjectionMethod::Pca,
            11,
        )
        .unwrap();
        let dx = projected[0].mean[0] - projected[1].mean[0];
        let dy = projected[0].mean[1] - projected[1].mean[1];
        let dist = (dx * dx + dy * dy).sqrt();
        let spread = projected
            .iter()
            .map(|p| p.variance[0].max(p.variance[1]).sqrt())
            .fold(0.0, f64::max);
        assert!(dist > 6.0 * spread, "dist {dist} vs spread {spread}");
    }

    #[test]
    fn projection_is_deterministic() {
        let dists = vec![
            ("x".to_string(), gaussian(&[0.0, 1.0, 2.0, 1.0], &[1.0, 0.5, 2.0, 1.0])),
            ("y".to_string(), gaussian(&[4.0, -1.0, 0.0, 2.0], &[0.5, 1.5, 1.0, 2.0])),
        ];
        let a = project_distributions(&dists, 500, ProjectionMethod::Pca, 13).unwrap();
        let b = project_distributions(&dists, 500, ProjectionMethod::Pca, 13).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            render_ellipses_svg(&a, true),
            render_ellipses_svg(&b, true)
        );
    }

    #[test]
    fn tsne_is_a_capability_error_suggesting_pca() {
        let g = gaussian(&[0.0], &[1.0]);
        match project_distributions(&[("g".into(), g)], 100, ProjectionMethod::Tsne, 1) {
            Err(ProjectError::CapabilityMissing { detail }) => {
                assert!(detail.contains("pca"), "{detail}");
            }
            other => panic!("expected capability error, got {other:?}"),
        }
    }

    #[test]
    fn dominant_separation_direction_survives_projection() {
        // four clusters; the pair (0, 3) is by far the farthest apart
        let dists: Vec<(String, DiagGaussian)> = vec![
            ("p0".into(), gaussian(&[0.0, 0.0, 0.0], &[0.3, 0.3, 0.3])),
            ("p1".into(), gaussian(&[5.0, 1.0, 0.0], &[0.3, 0.3, 0.3])),
            ("p2".into(), gaussian(&[10.0, -1.0, 0.5], &[0.3, 0.3, 0.3])),
            ("p3".into(), gaussian(&[40.0, 0.0, 0.0], &[0.3, 0.3, 0.3])),
        ];
        let projected = project_distributions(&dists, 800, ProjectionMethod::Pca, 17).unwrap();
        let planar = |i: usize, j: usize| -> f64 {
            let dx = projected[i].mean[0] - projected[j].mean[0];
            let dy = projected[i].mean[1] - projected[j].mean[1];
            (dx * dx + dy * dy).sqrt()
        };
        let mut best = (0, 0, 0.0);
        for i in 0..4 {
            for j in i + 1..4 {
                if planar(i, j) > best.2 {
                    best = (i, j, planar(i, j));
                }
            }
        }
        assert_eq!((best.0, best.1), (0, 3));
    }

    #[test]
    fn refit_variance_scales_with_source_variance() {
        let means: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![3.0, 1.0, -1.0, 0.5],
            vec![-2.0, 4.0, 0.0, 1.0],
        ];
        let base_var = [0.5, 1.0, 0.8, 1.2];
        let build = |scale: f64| -> Vec<(String, DiagGaussian)> {
            means
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    (
                        format!("d{i}"),
                        gaussian(m, &base_var.iter().map(|&v| v * scale).collect::<Vec<_>>()),
                    )
                })
                .collect()
        };
        let single = project_distributions(&build(1.0), 1000, ProjectionMethod::Pca, 23).unwrap();
        let doubled = project_distributions(&build(2.0), 1000, ProjectionMethod::Pca, 23).unwrap();
        for (a, b) in single.iter().zip(&doubled) {
            assert!(b.variance[0] + 1e-12 >= a.variance[0], "axis 0 shrank");
            assert!(b.variance[1] + 1e-12 >= a.variance[1], "axis 1 shrank");
            assert!(b.variance[0] >= 0.0 && b.variance[1] >= 0.0);
        }
    }

    #[test]
    fn svg_contains_one_labeled_ellipse_per_distribution() {
        let dists = vec![
            ("left".to_string(), gaussian(&[0.0, 0.0], &[1.0, 1.0])),
            ("right".to_string(), gaussian(&[8.0, 0.0], &[2.0, 0.5])),
        ];
        let projected = project_distributions(&dists, 300, ProjectionMethod::Pca, 29).unwrap();
        let svg = render_ellipses_svg(&projected, false);
        assert_eq!(svg.matches("<ellipse").count(), 2);
        assert!(svg.contains(">left</text>"));
        assert!(svg.contains(">right</text>"));
    }

    #[test]
    fn degenerate_variance_renders_a_dot() {
        let tight = ProjectedDistribution {
            label: "point".into(),
            mean: [0.0, 0.0],
            variance: [0.0, 0.0],
            points: vec![[0.0, 0.0]],
        };
        let wide = ProjectedDistribution {
            label: "wide".into(),
            mean: [5.0, 5.0],
            variance: [1.0, 1.0],
            points: vec![],
        };
        let svg = render_ellipses_svg(&[tight, wide], false);
        assert_eq!(svg.matches("class=\"dot\"").count(), 1);
        assert_eq!(svg.matches("<ellipse").count(), 1);
    }

    #[test]
    fn csv_parses_back() {
        let dists = vec![("a".to_string(), gaussian(&[1.0, 2.0], &[0.5, 0.25]))];
        let projected = project_distributions(&dists, 200, ProjectionMethod::Pca, 31).unwrap();
        let csv = ellipses_csv(&projected);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 2);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "a");
        assert_eq!(fields.len(), 5);
        for f in &fields[1..] {
            f.parse::<f64>().unwrap();
        }
    }
}
