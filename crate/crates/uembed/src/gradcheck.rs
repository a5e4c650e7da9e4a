//! Central-difference gradient checking.
//!
//! The numeric side rebuilds the forward pass from scratch for every probe,
//! so it stays independent of the tape's backward implementation. Relative
//! error is guarded below magnitude 1: err = |a - n| / max(1, |a|, |n|).

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of checking one parameter block.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub component: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares `analytic` against central differences of `f` at `x`, probing the
/// coordinates in `indices` (all coordinates when empty). `f` must be a pure
/// function of its argument.
pub fn check_gradient(
    component: &str,
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    x: &[f64],
    indices: &[usize],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), x.len(), "gradient/input length mismatch");
    let all: Vec<usize>;
    let probe: &[usize] = if indices.is_empty() {
        all = (0..x.len()).collect();
        &all
    } else {
        indices
    };
    let mut work = x.to_vec();
    let mut max_rel_err: f64 = 0.0;
    for &i in probe {
        let original = work[i];
        work[i] = original + step;
        let plus = f(&work);
        work[i] = original - step;
        let minus = f(&work);
        work[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        max_rel_err = max_rel_err.max(relative_error(analytic[i], numeric));
    }
    GradCheckReport {
        component: component.to_string(),
        max_rel_err,
        checked: probe.len(),
        tolerance,
    }
}

// ---- component suites ----
//
// One entry per differentiable component of the crate. Each suite flattens
// the component's inputs and parameters into one vector, rebuilds the
// forward pass from that vector for the numeric side, and reads the
// analytic side off a single tape backward.

use crate::loss::{
    distribution_loss_graph, gm_loss_graph, make_targets, LossConfig, PosteriorNodes, PriorBank,
    TargetMode,
};
use crate::model::{EmbedModel, ModelConfig};
use crate::rng::{seed_chain, Rng};
use crate::sigma::{
    affine_norm_graph, bm_forward_graph, mlp_forward_graph, sigma_forward_graph, MlpParams,
    SigmaNetConfig, SigmaNetParams,
};
use crate::tensor::{Phase, PoolKind, Tape, Tensor};

const LINEAR_TOLERANCE: f64 = 1e-6;

fn probe_loss(tape: &mut Tape, out: crate::tensor::TensorId, weights: &Tensor) -> f64 {
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(out, w).expect("probe shapes");
    let loss = tape.sum_all(weighted).expect("probe sum");
    tape.value(loss).item()
}

fn probe_backward(tape: &mut Tape, out: crate::tensor::TensorId, weights: &Tensor) {
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(out, w).expect("probe shapes");
    let loss = tape.sum_all(weighted).expect("probe sum");
    tape.backward(loss).expect("probe backward");
}

fn elementwise_suite(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, 1]));
    let n = 12;
    let a = Tensor::randn(&[n], 1.0, &mut rng);
    let b = Tensor::randn(&[n], 0.5, &mut rng);
    let probe = Tensor::randn(&[n], 1.0, &mut rng);

    let build = |tape: &mut Tape, a: Tensor, b: Tensor| -> crate::tensor::TensorId {
        let ia = tape.leaf(a, true);
        let ib = tape.leaf(b, true);
        let sum = tape.add(ia, ib).unwrap();
        let diff = tape.sub(ia, ib).unwrap();
        let prod = tape.mul(sum, diff).unwrap();
        let sq = tape.square(ib).unwrap();
        let safe = tape.add_scalar(sq, 1.0).unwrap();
        let quot = tape.div(prod, safe).unwrap();
        let ln_in = tape.add_scalar(sq, 0.5).unwrap();
        let ln = tape.ln(ln_in).unwrap();
        let root = tape.sqrt(safe).unwrap();
        let soft = tape.softplus(ia).unwrap();
        let rect = tape.relu(quot).unwrap();
        let scaled = tape.mul_scalar(ia, 0.3).unwrap();
        let e = tape.exp(scaled).unwrap();
        let neg = tape.neg(ln).unwrap();
        let mut acc = tape.add(rect, soft).unwrap();
        acc = tape.add(acc, e).unwrap();
        acc = tape.add(acc, neg).unwrap();
        tape.add(acc, root).unwrap()
    };

    let x0: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let fa = Tensor::new(vec![n], flat[..n].to_vec()).unwrap();
        let fb = Tensor::new(vec![n], flat[n..].to_vec()).unwrap();
        let out = build(&mut tape, fa, fb);
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let out = build(&mut tape, a.clone(), b.clone());
    probe_backward(&mut tape, out, &probe);
    let ia = crate::tensor::TensorId(0);
    let ib = crate::tensor::TensorId(1);
    let mut analytic = tape.grad_or_zeros(ia).into_data();
    analytic.extend(tape.grad_or_zeros(ib).into_data());
    check_gradient("elementwise", forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn matmul_suite(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, 2]));
    let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
    let probe = Tensor::randn(&[3, 2], 1.0, &mut rng);
    let x0: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let ia = tape.leaf(Tensor::new(vec![3, 4], flat[..12].to_vec()).unwrap(), true);
        let ib = tape.leaf(Tensor::new(vec![4, 2], flat[12..].to_vec()).unwrap(), true);
        let out = tape.matmul(ia, ib).unwrap();
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let ia = tape.leaf(a.clone(), true);
    let ib = tape.leaf(b.clone(), true);
    let out = tape.matmul(ia, ib).unwrap();
    probe_backward(&mut tape, out, &probe);
    let mut analytic = tape.grad_or_zeros(ia).into_data();
    analytic.extend(tape.grad_or_zeros(ib).into_data());
    check_gradient("matmul", forward, &analytic, &x0, &[], DEFAULT_STEP, LINEAR_TOLERANCE)
}

fn conv_suite(seed: u64, one_by_one: bool) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, if one_by_one { 3 } else { 4 }]));
    let (h, w, cin, cout) = (2usize, 2, 3, 2);
    let input = Tensor::randn(&[h, w, cin], 1.0, &mut rng);
    let (kh, kw) = if one_by_one { (1, 1) } else { (3, 3) };
    let weight = if one_by_one {
        Tensor::randn(&[cin, cout], 1.0, &mut rng)
    } else {
        Tensor::randn(&[kh, kw, cin, cout], 1.0, &mut rng)
    };
    let bias = Tensor::randn(&[cout], 0.5, &mut rng);
    let probe = Tensor::randn(&[h, w, cout], 1.0, &mut rng);
    let sizes = [input.numel(), weight.numel(), bias.numel()];
    let x0: Vec<f64> = input
        .data()
        .iter()
        .chain(weight.data())
        .chain(bias.data())
        .copied()
        .collect();
    let w_shape = weight.shape().to_vec();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let ii = tape.leaf(Tensor::new(vec![h, w, cin], flat[..sizes[0]].to_vec()).unwrap(), true);
        let iw = tape.leaf(
            Tensor::new(w_shape.clone(), flat[sizes[0]..sizes[0] + sizes[1]].to_vec()).unwrap(),
            true,
        );
        let ib = tape.leaf(
            Tensor::new(vec![cout], flat[sizes[0] + sizes[1]..].to_vec()).unwrap(),
            true,
        );
        let out = if one_by_one {
            tape.conv1x1(ii, iw, ib).unwrap()
        } else {
            tape.conv2d(ii, iw, ib, (1, 1), (1, 1)).unwrap()
        };
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let ii = tape.leaf(input.clone(), true);
    let iw = tape.leaf(weight.clone(), true);
    let ib = tape.leaf(bias.clone(), true);
    let out = if one_by_one {
        tape.conv1x1(ii, iw, ib).unwrap()
    } else {
        tape.conv2d(ii, iw, ib, (1, 1), (1, 1)).unwrap()
    };
    probe_backward(&mut tape, out, &probe);
    let mut analytic = tape.grad_or_zeros(ii).into_data();
    analytic.extend(tape.grad_or_zeros(iw).into_data());
    analytic.extend(tape.grad_or_zeros(ib).into_data());
    let tolerance = if one_by_one { LINEAR_TOLERANCE } else { DEFAULT_TOLERANCE };
    let name = if one_by_one { "conv1x1" } else { "conv2d" };
    check_gradient(name, forward, &analytic, &x0, &[], DEFAULT_STEP, tolerance)
}

fn pool_suite(seed: u64, kind: PoolKind) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, 5, kind as u64]));
    let input = Tensor::randn(&[4, 4, 2], 1.0, &mut rng);
    let probe = Tensor::randn(&[4, 4, 2], 1.0, &mut rng);
    let x0 = input.data().to_vec();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let ii = tape.leaf(Tensor::new(vec![4, 4, 2], flat.to_vec()).unwrap(), true);
        let out = tape.pool(kind, ii, (3, 3), (1, 1), (1, 1)).unwrap();
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let ii = tape.leaf(input.clone(), true);
    let out = tape.pool(kind, ii, (3, 3), (1, 1), (1, 1)).unwrap();
    probe_backward(&mut tape, out, &probe);
    let analytic = tape.grad_or_zeros(ii).into_data();
    let name = match kind {
        PoolKind::Avg => "pool_avg",
        PoolKind::Min => "pool_min",
        PoolKind::Max => "pool_max",
    };
    check_gradient(name, forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn log_softmax_suite(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, 6]));
    let input = Tensor::randn(&[3, 5], 1.5, &mut rng);
    let probe = Tensor::randn(&[3, 5], 1.0, &mut rng);
    let x0 = input.data().to_vec();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let ii = tape.leaf(Tensor::new(vec![3, 5], flat.to_vec()).unwrap(), true);
        let out = tape.log_softmax(ii).unwrap();
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let ii = tape.leaf(input.clone(), true);
    let out = tape.log_softmax(ii).unwrap();
    probe_backward(&mut tape, out, &probe);
    let analytic = tape.grad_or_zeros(ii).into_data();
    check_gradient("log_softmax", forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn affine_norm_suite(seed: u64) -> GradCheckReport {
    let mut rng = Rng::new(seed_chain(&[seed, 7]));
    let input = Tensor::randn(&[3, 4, 2], 1.0, &mut rng);
    let gamma = Tensor::randn(&[2], 0.5, &mut rng);
    let beta = Tensor::randn(&[2], 0.5, &mut rng);
    let probe = Tensor::randn(&[3, 4, 2], 1.0, &mut rng);
    let sizes = [input.numel(), gamma.numel(), beta.numel()];
    let x0: Vec<f64> = input
        .data()
        .iter()
        .chain(gamma.data())
        .chain(beta.data())
        .copied()
        .collect();
    let forward = |flat: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let ii = tape.leaf(Tensor::new(vec![3, 4, 2], flat[..sizes[0]].to_vec()).unwrap(), true);
        let ig = tape.leaf(Tensor::new(vec![2], flat[sizes[0]..sizes[0] + 2].to_vec()).unwrap(), true);
        let ib = tape.leaf(Tensor::new(vec![2], flat[sizes[0] + 2..].to_vec()).unwrap(), true);
        let out = affine_norm_graph(&mut tape, ii, ig, ib).unwrap();
        probe_loss(&mut tape, out, &probe)
    };
    let mut tape = Tape::new();
    let ii = tape.leaf(input.clone(), true);
    let ig = tape.leaf(gamma.clone(), true);
    let ib = tape.leaf(beta.clone(), true);
    let out = affine_norm_graph(&mut tape, ii, ig, ib).unwrap();
    probe_backward(&mut tape, out, &probe);
    let mut analytic = tape.grad_or_zeros(ii).into_data();
    analytic.extend(tape.grad_or_zeros(ig).into_data());
    analytic.extend(tape.grad_or_zeros(ib).into_data());
    check_gradient("affine_norm", forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn head_suite(seed: u64, head: &'static str) -> GradCheckReport {
    let config = SigmaNetConfig::new(4);
    let mut rng = Rng::new(seed_chain(&[seed, 8]));
    let params = SigmaNetParams::init(&config, &mut rng);
    let mlp = MlpParams::init(&config, &mut rng);
    let feature = Tensor::randn(&[3, 3, 4], 1.0, &mut rng);
    let probe = Tensor::randn(&[4], 1.0, &mut rng);

    let sigma_sizes: Vec<usize> = params.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mlp_sizes: Vec<usize> = mlp.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut x0: Vec<f64> = Vec::new();
    for (_, t) in params.named_tensors() {
        x0.extend_from_slice(t.data());
    }
    for (_, t) in mlp.named_tensors() {
        x0.extend_from_slice(t.data());
    }
    x0.extend_from_slice(feature.data());

    let rebuild = |flat: &[f64]| -> (SigmaNetParams, MlpParams, Tensor) {
        let mut p = params.clone();
        let mut m = mlp.clone();
        let mut offset = 0usize;
        for ((_, t), n) in p.named_tensors_mut().into_iter().zip(&sigma_sizes) {
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        for ((_, t), n) in m.named_tensors_mut().into_iter().zip(&mlp_sizes) {
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        let mut f = feature.clone();
        let n = f.numel();
        f.data_mut().copy_from_slice(&flat[offset..offset + n]);
        (p, m, f)
    };
    let run = |tape: &mut Tape, p: &SigmaNetParams, m: &MlpParams, f: Tensor| -> crate::tensor::TensorId {
        let fid = tape.leaf(f, true);
        match head {
            "sigma_net" => {
                let nodes = p.insert(tape, "sigma");
                sigma_forward_graph(tape, fid, &nodes, &config, Phase::Train, 7).unwrap()
            }
            "bm_head" => {
                let nodes = p.insert(tape, "sigma");
                bm_forward_graph(tape, fid, &nodes, &config).unwrap()
            }
            _ => {
                let nodes = m.insert(tape, "mlp");
                mlp_forward_graph(tape, fid, &nodes, &config).unwrap()
            }
        }
    };

    let forward = |flat: &[f64]| -> f64 {
        let (p, m, f) = rebuild(flat);
        let mut tape = Tape::new();
        let out = run(&mut tape, &p, &m, f);
        probe_loss(&mut tape, out, &probe)
    };

    let mut tape = Tape::new();
    let out = run(&mut tape, &params, &mlp, feature.clone());
    probe_backward(&mut tape, out, &probe);
    let mut analytic: Vec<f64> = Vec::new();
    for (name, t) in params.named_tensors() {
        match tape.find_named(&format!("sigma.{name}")) {
            Some(id) => analytic.extend(tape.grad_or_zeros(id).into_data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    for (name, t) in mlp.named_tensors() {
        match tape.find_named(&format!("mlp.{name}")) {
            Some(id) => analytic.extend(tape.grad_or_zeros(id).into_data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    analytic.extend(tape.grad_or_zeros(crate::tensor::TensorId(0)).into_data());
    check_gradient(head, forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn loss_suite(seed: u64, gm: bool) -> GradCheckReport {
    let (classes, dim, batch) = (3usize, 4usize, 2usize);
    let bank = PriorBank::init(classes, dim, seed_chain(&[seed, 9]));
    let mut rng = Rng::new(seed_chain(&[seed, 10]));
    let means: Vec<Tensor> = (0..batch).map(|_| Tensor::randn(&[dim], 1.0, &mut rng)).collect();
    let raw_vars: Vec<Tensor> = (0..batch)
        .map(|_| {
            Tensor::new(
                vec![dim],
                (0..dim).map(|_| rng.uniform(0.3, 1.5)).collect(),
            )
            .unwrap()
        })
        .collect();
    let labels = vec![0usize, 2];
    let targets = make_targets(&labels, &TargetMode::Smoothed(0.1), classes).unwrap();
    let config = LossConfig::default();

    let bank_sizes = [bank.means().numel(), bank.rho().numel()];
    let mut x0: Vec<f64> = Vec::new();
    x0.extend_from_slice(bank.means().data());
    x0.extend_from_slice(bank.rho().data());
    for (m, v) in means.iter().zip(&raw_vars) {
        x0.extend_from_slice(m.data());
        if !gm {
            x0.extend_from_slice(v.data());
        }
    }

    let build = |flat: &[f64]| -> (PriorBank, Vec<Tensor>, Vec<Tensor>) {
        let bank_means = Tensor::new(vec![classes, dim], flat[..bank_sizes[0]].to_vec()).unwrap();
        let bank_rho = Tensor::new(
            vec![classes, dim],
            flat[bank_sizes[0]..bank_sizes[0] + bank_sizes[1]].to_vec(),
        )
        .unwrap();
        let new_bank = PriorBank::from_parts(
            bank_means,
            bank_rho,
            vec![1.0 / classes as f64; classes],
        )
        .unwrap();
        let mut offset = bank_sizes[0] + bank_sizes[1];
        let mut new_means = Vec::with_capacity(batch);
        let mut new_vars = Vec::with_capacity(batch);
        for _ in 0..batch {
            new_means.push(Tensor::new(vec![dim], flat[offset..offset + dim].to_vec()).unwrap());
            offset += dim;
            if !gm {
                new_vars.push(Tensor::new(vec![dim], flat[offset..offset + dim].to_vec()).unwrap());
                offset += dim;
            }
        }
        (new_bank, new_means, new_vars)
    };

    let eval_loss = |tape: &mut Tape, b: &PriorBank, ms: &[Tensor], vs: &[Tensor]| -> crate::tensor::TensorId {
        let nodes = b.insert(tape);
        if gm {
            let features: Vec<_> = ms.iter().map(|m| tape.leaf(m.clone(), true)).collect();
            gm_loss_graph(tape, &features, &targets, &labels, &nodes, 0.3)
                .unwrap()
                .total
        } else {
            let posteriors: Vec<PosteriorNodes> = ms
                .iter()
                .zip(vs)
                .map(|(m, v)| PosteriorNodes {
                    mean: tape.leaf(m.clone(), true),
                    variance: tape.leaf(v.clone(), true),
                })
                .collect();
            distribution_loss_graph(tape, &posteriors, &targets, &labels, &nodes, &config)
                .unwrap()
                .total
        }
    };

    let forward = |flat: &[f64]| -> f64 {
        let (b, ms, vs) = build(flat);
        let mut tape = Tape::new();
        let total = eval_loss(&mut tape, &b, &ms, &vs);
        tape.value(total).item()
    };

    let mut tape = Tape::new();
    let total = eval_loss(&mut tape, &bank, &means, &raw_vars);
    tape.backward(total).unwrap();
    let mut analytic: Vec<f64> = Vec::new();
    analytic.extend(tape.grad_or_zeros(tape.find_named("prior.means").unwrap()).into_data());
    analytic.extend(tape.grad_or_zeros(tape.find_named("prior.rho").unwrap()).into_data());
    // sample leaves follow the two bank leaves and one constant in insertion
    // order; walk ids to find unnamed requires-grad leaves
    let mut sample_grads: Vec<Vec<f64>> = Vec::new();
    for id in 0..tape.len() {
        let tid = crate::tensor::TensorId(id);
        if tape.leaf_name(tid).is_none() && tape.requires_grad(tid) && tape.is_leaf(tid) {
            sample_grads.push(tape.grad_or_zeros(tid).into_data());
        }
    }
    for grads in sample_grads {
        analytic.extend(grads);
    }
    let name = if gm { "gm_loss" } else { "distribution_loss" };
    check_gradient(name, forward, &analytic, &x0, &[], DEFAULT_STEP, DEFAULT_TOLERANCE)
}

fn full_model_suite(seed: u64) -> GradCheckReport {
    let mut config = ModelConfig::tiny_conv(8, 3);
    config.input_hw = (16, 8);
    let model = EmbedModel::init(config, seed_chain(&[seed, 11])).unwrap();
    let mut rng = Rng::new(seed_chain(&[seed, 12]));
    let images: Vec<Tensor> = (0..2)
        .map(|_| {
            let data: Vec<f64> = (0..16 * 8 * 3).map(|_| rng.next_f64()).collect();
            Tensor::new(vec![16, 8, 3], data).unwrap()
        })
        .collect();
    let labels = vec![0usize, 2];
    let targets = make_targets(&labels, &TargetMode::Smoothed(0.1), 3).unwrap();
    let loss_config = LossConfig::default();

    let sizes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.numel()).collect();
    let mut x0: Vec<f64> = Vec::new();
    for (_, t) in model.named_tensors() {
        x0.extend_from_slice(t.data());
    }

    let rebuild = |flat: &[f64]| -> EmbedModel {
        let mut m = model.clone();
        let mut offset = 0usize;
        for ((_, t), n) in m.named_tensors_mut().into_iter().zip(&sizes) {
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        m
    };
    let eval_total = |m: &EmbedModel, tape: &mut Tape| -> crate::tensor::TensorId {
        let nodes = m.insert(tape);
        let posteriors: Vec<PosteriorNodes> = images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                m.forward_sample(tape, &nodes, img, Phase::Train, 1000 + i as u64)
                    .unwrap()
                    .posterior()
            })
            .collect();
        distribution_loss_graph(tape, &posteriors, &targets, &labels, &nodes.bank, &loss_config)
            .unwrap()
            .total
    };

    let forward = |flat: &[f64]| -> f64 {
        let m = rebuild(flat);
        let mut tape = Tape::new();
        let total = eval_total(&m, &mut tape);
        tape.value(total).item()
    };

    let mut tape = Tape::new();
    let total = eval_total(&model, &mut tape);
    tape.backward(total).unwrap();
    let mut analytic: Vec<f64> = Vec::new();
    for (name, _) in model.named_tensors() {
        let id = tape.find_named(&name).expect("parameter on tape");
        analytic.extend(tape.grad_or_zeros(id).into_data());
    }

    // probe a seeded subset per tensor; the flat vector is large
    let mut probe_rng = Rng::new(seed_chain(&[seed, 13]));
    let mut indices: Vec<usize> = Vec::new();
    let mut offset = 0usize;
    for n in &sizes {
        let take = 12.min(*n);
        let mut chosen = probe_rng.sample_without_replacement(*n, take);
        chosen.sort_unstable();
        indices.extend(chosen.into_iter().map(|i| offset + i));
        offset += n;
    }
    check_gradient("full_model", forward, &analytic, &x0, &indices, DEFAULT_STEP, DEFAULT_TOLERANCE)
}

/// Runs every component's central-difference check.
pub fn run_component_suites(seed: u64) -> Vec<GradCheckReport> {
    vec![
        elementwise_suite(seed),
        matmul_suite(seed),
        conv_suite(seed, true),
        conv_suite(seed, false),
        pool_suite(seed, PoolKind::Avg),
        pool_suite(seed, PoolKind::Min),
        pool_suite(seed, PoolKind::Max),
        log_softmax_suite(seed),
        affine_norm_suite(seed),
        head_suite(seed, "sigma_net"),
        head_suite(seed, "bm_head"),
        head_suite(seed, "mlp_head"),
        loss_suite(seed, false),
        loss_suite(seed, true),
        full_model_suite(seed),
    ]
}
