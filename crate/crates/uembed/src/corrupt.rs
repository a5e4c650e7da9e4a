//! Seeded degradation protocols: label noise, Gaussian blur, motion blur,
//! interpolation degradation, and random erasing.
//!
//! Every operation is a pure function of (input, parameters, seed). Image
//! operations take and return H x W x C tensors with values in [0, 1] and
//! clamp their outputs back into that range. Blur convolutions reflect at
//! the borders (symmetric reflection, edge included).

use crate::rng::Rng;
use crate::tensor::Tensor;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CorruptError {
    InvalidConfig { detail: String },
    BadImage { detail: String },
    BadSpec { detail: String },
}

impl fmt::Display for CorruptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorruptError::InvalidConfig { detail } => write!(f, "invalid corruption config: {detail}"),
            CorruptError::BadImage { detail } => write!(f, "bad image: {detail}"),
            CorruptError::BadSpec { detail } => write!(f, "bad corruption spec: {detail}"),
        }
    }
}

impl std::error::Error for CorruptError {}

pub type Result<T> = std::result::Result<T, CorruptError>;

/// What a corruption applies to during an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionTarget {
    QuerySet,
    TrainLabels,
}

/// One degradation, parsed from a spec string such as `gaussian-blur:k=5`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CorruptionKind {
    LabelNoise { fraction: f64 },
    GaussianBlur { kernel: usize },
    MotionBlur { kernel: usize },
    Interp { ratio: f64 },
    Erase { fraction: f64 },
}

impl CorruptionKind {
    pub fn target(&self) -> CorruptionTarget {
        match self {
            CorruptionKind::LabelNoise { .. } => CorruptionTarget::TrainLabels,
            _ => CorruptionTarget::QuerySet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CorruptionKind::LabelNoise { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(CorruptError::InvalidConfig {
                        detail: format!("label-noise fraction {fraction} outside [0,1]"),
                    });
                }
            }
            CorruptionKind::GaussianBlur { kernel } => {
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(CorruptError::InvalidConfig {
                        detail: format!("gaussian blur kernel {kernel} must be odd"),
                    });
                }
            }
            CorruptionKind::MotionBlur { kernel } => {
                if kernel < 3 {
                    return Err(CorruptError::InvalidConfig {
                        detail: format!("motion blur kernel {kernel} must be >= 3"),
                    });
                }
            }
            CorruptionKind::Interp { ratio } => {
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(CorruptError::InvalidConfig {
                        detail: format!("interp ratio {ratio} outside (0,1]"),
                    });
                }
            }
            CorruptionKind::Erase { fraction } => {
                if !(0.0..1.0).contains(&fraction) {
                    return Err(CorruptError::InvalidConfig {
                        detail: format!("erase fraction {fraction} outside [0,1)"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn spec_string(&self) -> String {
        match self {
            CorruptionKind::LabelNoise { fraction } => format!("label-noise:frac={fraction}"),
            CorruptionKind::GaussianBlur { kernel } => format!("gaussian-blur:k={kernel}"),
            CorruptionKind::MotionBlur { kernel } => format!("motion-blur:k={kernel}"),
            CorruptionKind::Interp { ratio } => format!("interp:ratio={ratio}"),
            CorruptionKind::Erase { fraction } => format!("erase:frac={fraction}"),
        }
    }
}

/// Parses CLI-facing spec strings: `gaussian-blur:k=5`, `motion-blur:k=10`,
/// `interp:ratio=0.5`, `erase:frac=0.3`, `label-noise:frac=0.1`.
pub fn parse_spec(text: &str) -> Result<CorruptionKind> {
    let bad = |detail: String| CorruptError::BadSpec { detail };
    let (name, rest) = text
        .split_once(':')
        .ok_or_else(|| bad(format!("missing ':' in {text:?}")))?;
    let (key, value) = rest
        .split_once('=')
        .ok_or_else(|| bad(format!("missing '=' in {text:?}")))?;
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| bad(format!("bad number {v:?} in {text:?}")))
    };
    let parse_usize = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| bad(format!("bad integer {v:?} in {text:?}")))
    };
    let kind = match (name, key) {
        ("label-noise", "frac") => CorruptionKind::LabelNoise {
            fraction: parse_f64(value)?,
        },
        ("gaussian-blur", "k") => CorruptionKind::GaussianBlur {
            kernel: parse_usize(value)?,
        },
        ("motion-blur", "k") => CorruptionKind::MotionBlur {
            kernel: parse_usize(value)?,
        },
        ("interp", "ratio") => CorruptionKind::Interp {
            ratio: parse_f64(value)?,
        },
        ("erase", "frac") => CorruptionKind::Erase {
            fraction: parse_f64(value)?,
        },
        _ => return Err(bad(format!("unknown corruption {text:?}"))),
    };
    kind.validate()?;
    Ok(kind)
}

/// A k x k convolution kernel whose weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != size * size {
            return Err(CorruptError::InvalidConfig {
                detail: format!("{} weights for {size}x{size} kernel", weights.len()),
            });
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(CorruptError::InvalidConfig {
                detail: format!("kernel weights must be non-negative and sum to 1, got {sum}"),
            });
        }
        Ok(Kernel2D { size, weights })
    }

    /// Separable Gaussian with the kernel-size convention
    /// sigma = 0.3 * ((k - 1)/2 - 1) + 0.8.
    pub fn gaussian(k: usize) -> Result<Self> {
        let taps = gaussian_taps(k)?;
        let mut weights = Vec::with_capacity(k * k);
        for y in 0..k {
            for x in 0..k {
                weights.push(taps[y] * taps[x]);
            }
        }
        Kernel2D::new(k, weights)
    }

    /// Center column 1/k, everything else 0 (vertical smear).
    pub fn motion_vertical(k: usize) -> Result<Self> {
        let mut weights = vec![0.0; k * k];
        let center = k / 2;
        for y in 0..k {
            weights[y * k + center] = 1.0 / k as f64;
        }
        Kernel2D::new(k, weights)
    }

    /// Center row 1/k, everything else 0 (horizontal smear).
    pub fn motion_horizontal(k: usize) -> Result<Self> {
        let mut weights = vec![0.0; k * k];
        let center = k / 2;
        for x in 0..k {
            weights[center * k + x] = 1.0 / k as f64;
        }
        Kernel2D::new(k, weights)
    }
}

fn gaussian_taps(k: usize) -> Result<Vec<f64>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(CorruptError::InvalidConfig {
            detail: format!("gaussian kernel {k} must be odd"),
        });
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let sigma = 0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let half = (k / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Ok(taps)
}

fn check_image(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [h, w, c] if *h > 0 && *w > 0 && *c > 0 => Ok((*h, *w, *c)),
        other => Err(CorruptError::BadImage {
            detail: format!("expected [H,W,C], got {other:?}"),
        }),
    }
}

/// Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Full 2D convolution with reflect padding, per channel.
pub fn convolve_reflect(image: &Tensor, kernel: &Kernel2D) -> Result<Tensor> {
    let (h, w, c) = check_image(image)?;
    let k = kernel.size;
    let half = (k / 2) as isize;
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..k {
                    let sy = reflect(y as isize + ky as isize - half, h);
                    for kx in 0..k {
                        let sx = reflect(x as isize + kx as isize - half, w);
                        acc += kernel.weights[ky * k + kx] * src[(sy * w + sx) * c + ch];
                    }
                }
                out[(y * w + x) * c + ch] = clamp01(acc);
            }
        }
    }
    Ok(Tensor::new(vec![h, w, c], out).expect("convolve shape"))
}

/// Reassigns exactly round(fraction * N) labels, chosen without replacement,
/// to a uniformly random different label.
pub fn corrupt_labels(labels: &[usize], fraction: f64, classes: usize, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CorruptError::InvalidConfig {
            detail: format!("fraction {fraction} outside [0,1]"),
        });
    }
    let count = (fraction * labels.len() as f64).round() as usize;
    if count == 0 {
        return Ok(labels.to_vec());
    }
    if classes < 2 {
        return Err(CorruptError::InvalidConfig {
            detail: "label noise needs at least 2 classes".into(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CorruptError::InvalidConfig {
            detail: format!("label {bad} out of range for {classes} classes"),
        });
    }
    let mut rng = Rng::new(seed);
    let mut out = labels.to_vec();
    let chosen = rng.sample_without_replacement(labels.len(), count);
    for idx in chosen {
        let r = rng.below(classes - 1);
        out[idx] = if r < out[idx] { r } else { r + 1 };
    }
    Ok(out)
}

/// Separable Gaussian blur; k = 1 is the identity.
pub fn gaussian_blur(image: &Tensor, k: usize) -> Result<Tensor> {
    let (h, w, c) = check_image(image)?;
    let taps = gaussian_taps(k)?;
    if k == 1 {
        return Ok(image.clone());
    }
    let half = (k / 2) as isize;
    let src = image.data();
    // horizontal pass
    let mut mid = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - half, w);
                    acc += tap * src[(y * w + sx) * c + ch];
                }
                mid[(y * w + x) * c + ch] = acc;
            }
        }
    }
    // vertical pass
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &tap) in taps.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - half, h);
                    acc += tap * mid[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = clamp01(acc);
            }
        }
    }
    Ok(Tensor::new(vec![h, w, c], out).expect("blur shape"))
}

/// Vertical or horizontal smear kernel, each chosen with probability 1/2.
pub fn motion_blur(image: &Tensor, k: usize, seed: u64) -> Result<Tensor> {
    if k < 3 {
        return Err(CorruptError::InvalidConfig {
            detail: format!("motion blur kernel {k} must be >= 3"),
        });
    }
    let mut rng = Rng::new(seed);
    let kernel = if rng.next_f64() < 0.5 {
        Kernel2D::motion_vertical(k)?
    } else {
        Kernel2D::motion_horizontal(k)?
    };
    convolve_reflect(image, &kernel)
}

fn bilinear_resize(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let mut out = vec![0.0; out_h * out_w * c];
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for oy in 0..out_h {
        // align-corners-false sampling: src = (dst + 0.5) * scale - 0.5
        let fy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let v00 = src[(y0 * w + x0) * c + ch];
                let v01 = src[(y0 * w + x1) * c + ch];
                let v10 = src[(y1 * w + x0) * c + ch];
                let v11 = src[(y1 * w + x1) * c + ch];
                let top = v00 + wx * (v01 - v00);
                let bottom = v10 + wx * (v11 - v10);
                out[(oy * out_w + ox) * c + ch] = clamp01(top + wy * (bottom - top));
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out).expect("resize shape")
}

/// Downsize by `ratio` then bilinearly recover the original extents.
/// Ratio 1.0 is a bit-exact identity.
pub fn interp_degrade(image: &Tensor, ratio: f64) -> Result<Tensor> {
    let (h, w, _) = check_image(image)?;
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(CorruptError::InvalidConfig {
            detail: format!("ratio {ratio} outside (0,1]"),
        });
    }
    if ratio == 1.0 {
        return Ok(image.clone());
    }
    let small_h = (ratio * h as f64).round() as usize;
    let small_w = (ratio * w as f64).round() as usize;
    if small_h < 1 || small_w < 1 {
        return Err(CorruptError::InvalidConfig {
            detail: format!("ratio {ratio} collapses {h}x{w} below one pixel"),
        });
    }
    let small = bilinear_resize(image, small_h, small_w);
    Ok(bilinear_resize(&small, h, w))
}

/// Erases one axis-aligned rectangle of area round(fraction * H * W). The
/// aspect ratio (height over width) is drawn uniformly from [0.5, 2], the
/// rectangle is clipped to fit and placed uniformly at random, then filled
/// with the provided per-channel values (typically the dataset channel
/// means).
pub fn random_erase(image: &Tensor, area_fraction: f64, fill: &[f64], seed: u64) -> Result<Tensor> {
    let (h, w, c) = check_image(image)?;
    if !(0.0..1.0).contains(&area_fraction) {
        return Err(CorruptError::InvalidConfig {
            detail: format!("area fraction {area_fraction} outside [0,1)"),
        });
    }
    if fill.len() != c {
        return Err(CorruptError::BadImage {
            detail: format!("{} fill values for {c} channels", fill.len()),
        });
    }
    if area_fraction == 0.0 {
        return Ok(image.clone());
    }
    let area = (area_fraction * (h * w) as f64).round().max(1.0);
    let mut rng = Rng::new(seed);
    let aspect = rng.uniform(0.5, 2.0);
    let mut rect_h = ((area * aspect).sqrt().round() as usize).clamp(1, h);
    // derive width from the clipped height to track the requested area
    let mut rect_w = ((area / rect_h as f64).round() as usize).clamp(1, w);
    rect_h = rect_h.min(h);
    rect_w = rect_w.min(w);
    let top = rng.below(h - rect_h + 1);
    let left = rng.below(w - rect_w + 1);
    let mut out = image.clone();
    for y in top..top + rect_h {
        for x in left..left + rect_w {
            for ch in 0..c {
                out.data_mut()[(y * w + x) * c + ch] = clamp01(fill[ch]);
            }
        }
    }
    Ok(out)
}

/// Per-channel means over a set of images, the conventional erase fill.
pub fn channel_means(images: &[Tensor]) -> Result<Vec<f64>> {
    let (_, _, c) = check_image(images.first().ok_or_else(|| CorruptError::BadImage {
        detail: "no images".into(),
    })?)?;
    let mut sums = vec![0.0; c];
    let mut count = 0usize;
    for image in images {
        let (h, w, ci) = check_image(image)?;
        if ci != c {
            return Err(CorruptError::BadImage {
                detail: "inconsistent channel counts".into(),
            });
        }
        for cell in 0..h * w {
            for ch in 0..c {
                sums[ch] += image.data()[cell * c + ch];
            }
        }
        count += h * w;
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// Applies an image-level corruption. `fill` is used by the erase kind.
pub fn apply_image(image: &Tensor, kind: &CorruptionKind, fill: &[f64], seed: u64) -> Result<Tensor> {
    kind.validate()?;
    match *kind {
        CorruptionKind::GaussianBlur { kernel } => gaussian_blur(image, kernel),
        CorruptionKind::MotionBlur { kernel } => motion_blur(image, kernel, seed),
        CorruptionKind::Interp { ratio } => interp_degrade(image, ratio),
        CorruptionKind::Erase { fraction } => random_erase(image, fraction, fill, seed),
        CorruptionKind::LabelNoise { .. } => Err(CorruptError::InvalidConfig {
            detail: "label noise does not apply to images".into(),
        }),
    }
}
