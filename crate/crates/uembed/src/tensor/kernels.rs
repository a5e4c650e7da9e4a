//! Raw convolution and pooling kernels over row-major H x W x C buffers.
//!
//! These do no shape validation; the tape validates before calling. Backward
//! routines scatter-accumulate into caller-provided gradient buffers.

use super::tape::PoolKind;

pub(crate) struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// input [H,W,Cin], weight [kh,kw,Cin,Cout], bias [Cout] -> output [H',W',Cout].
/// Zero padding.
pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let mut out = vec![0.0; g.out_h * g.out_w * g.out_c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let out_base = (oy * g.out_w + ox) * g.out_c;
            out[out_base..out_base + g.out_c].copy_from_slice(bias);
            for ky in 0..g.k_h {
                let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.k_w {
                    let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let w_base = ((ky * g.k_w + kx) * g.in_c) * g.out_c;
                    for ci in 0..g.in_c {
                        let x = input[in_base + ci];
                        let w_row = w_base + ci * g.out_c;
                        for co in 0..g.out_c {
                            out[out_base + co] += x * weight[w_row + co];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    grad_out: &[f64],
    input: &[f64],
    weight: &[f64],
    g: &ConvGeometry,
    grad_input: &mut [f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let out_base = (oy * g.out_w + ox) * g.out_c;
            for co in 0..g.out_c {
                grad_bias[co] += grad_out[out_base + co];
            }
            for ky in 0..g.k_h {
                let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.k_w {
                    let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let in_base = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let w_base = ((ky * g.k_w + kx) * g.in_c) * g.out_c;
                    for ci in 0..g.in_c {
                        let x = input[in_base + ci];
                        let w_row = w_base + ci * g.out_c;
                        let mut acc = 0.0;
                        for co in 0..g.out_c {
                            let go = grad_out[out_base + co];
                            acc += go * weight[w_row + co];
                            grad_weight[w_row + co] += go * x;
                        }
                        grad_input[in_base + ci] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) struct PoolGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

/// Windowed per-channel reduction. For min/max the chosen input flat index is
/// recorded per output cell (first occurrence in row-major scan wins ties);
/// for avg `chosen` records the true in-bounds cell count of the window.
/// Padded cells never participate: min/max skip them, avg divides by the true
/// count.
pub(crate) fn pool_forward(input: &[f64], kind: PoolKind, g: &PoolGeometry) -> (Vec<f64>, Vec<usize>) {
    let out_numel = g.out_h * g.out_w * g.channels;
    let mut out = vec![0.0; out_numel];
    let mut chosen = vec![0usize; out_numel];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            for c in 0..g.channels {
                let out_idx = (oy * g.out_w + ox) * g.channels + c;
                let mut best = match kind {
                    PoolKind::Max => f64::NEG_INFINITY,
                    PoolKind::Min => f64::INFINITY,
                    PoolKind::Avg => 0.0,
                };
                let mut best_idx = usize::MAX;
                let mut count = 0usize;
                for ky in 0..g.kernel.0 {
                    let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel.1 {
                        let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                        if ix < 0 || ix >= g.in_w as isize {
                            continue;
                        }
                        let idx = (iy as usize * g.in_w + ix as usize) * g.channels + c;
                        let v = input[idx];
                        count += 1;
                        match kind {
                            PoolKind::Avg => best += v,
                            PoolKind::Max => {
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                            PoolKind::Min => {
                                if v < best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                }
                debug_assert!(count > 0, "window with no in-bounds cells");
                match kind {
                    PoolKind::Avg => {
                        out[out_idx] = best / count as f64;
                        chosen[out_idx] = count;
                    }
                    _ => {
                        out[out_idx] = best;
                        chosen[out_idx] = best_idx;
                    }
                }
            }
        }
    }
    (out, chosen)
}

pub(crate) fn pool_backward(
    grad_out: &[f64],
    kind: PoolKind,
    chosen: &[usize],
    g: &PoolGeometry,
    grad_input: &mut [f64],
) {
    match kind {
        PoolKind::Min | PoolKind::Max => {
            for (i, &g_out) in grad_out.iter().enumerate() {
                grad_input[chosen[i]] += g_out;
            }
        }
        PoolKind::Avg => {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for c in 0..g.channels {
                        let out_idx = (oy * g.out_w + ox) * g.channels + c;
                        let share = grad_out[out_idx] / chosen[out_idx] as f64;
                        for ky in 0..g.kernel.0 {
                            let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                            if iy < 0 || iy >= g.in_h as isize {
                                continue;
                            }
                            for kx in 0..g.kernel.1 {
                                let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                                if ix < 0 || ix >= g.in_w as isize {
                                    continue;
                                }
                                grad_input[(iy as usize * g.in_w + ix as usize) * g.channels + c] += share;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// a [m,k] @ b [k,n] -> [m,n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let b_row = p * n;
            let o_row = i * n;
            for j in 0..n {
                out[o_row + j] += x * b[b_row + j];
            }
        }
    }
    out
}
