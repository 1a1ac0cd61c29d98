//! Checks shared by the acceptance run and the focused integration tests.
//! Each returns an [`Outcome`] instead of panicking so a caller can report
//! every result before failing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mindts::alignment::{loss_ma, loss_ma_value, similarity_matrix};
use mindts::condenser::{
    lemma1_validate, loss_cc, loss_cc_value, loss_sm, loss_sm_value, sample_mask, Channel, Condensed, MaskLaw,
    MaskMode, Prior,
};
use mindts::config::ModelConfig;
use mindts::data::{make_windows, synth_multimodal, SynthConfig};
use mindts::error::TensorError;
use mindts::exec::Execution;
use mindts::metrics::{
    affiliation_metrics, average_precision, binary_labels, events, point_metrics, range_metrics, roc_auc, vus,
    Cardinality, PositionalBias, RangeParams,
};
use mindts::model::{stream_rng, Gate, MindTs, StepOptions};
use mindts::recon::loss_rec;
use mindts::tensor::nn::scaled_dot_attention;
use mindts::tensor::{grad_check, grad_check_params, GradCheckReport, Graph, Tensor, Var};

use super::oracle;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

type TResult<T> = Result<T, TensorError>;
type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> TResult<Var>>;

fn lib(e: mindts::Error) -> TensorError {
    match e {
        mindts::Error::Tensor(t) => t,
        other => TensorError::Config(other.to_string()),
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_rows(rows, cols, v).unwrap()
}

/// Values of magnitude in [0.2, 1] with random signs, away from kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| rng.gen_range(0.2..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::from_rows(rows, cols, v).unwrap()
}

/// Scalar probe `Σ w ⊙ y` with fixed irregular weights, so every output
/// entry reaches the gradient with a distinct factor.
fn probe(g: &mut Graph, y: Var) -> TResult<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin() + 0.1).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let m = g.mul(y, w)?;
    g.sum(m)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpFn, Vec<Tensor>)> {
    let mut out: Vec<(&'static str, OpFn, Vec<Tensor>)> = Vec::new();
    let a34 = |rng: &mut ChaCha8Rng| uniform(rng, 3, 4, -1.0, 1.0);
    out.push(("matmul", Box::new(|g, v| { let y = g.matmul(v[0], v[1])?; probe(g, y) }), vec![a34(rng), uniform(rng, 4, 2, -1.0, 1.0)]));
    out.push(("add", Box::new(|g, v| { let y = g.add(v[0], v[1])?; probe(g, y) }), vec![a34(rng), a34(rng)]));
    out.push(("sub", Box::new(|g, v| { let y = g.sub(v[0], v[1])?; probe(g, y) }), vec![a34(rng), a34(rng)]));
    out.push(("mul", Box::new(|g, v| { let y = g.mul(v[0], v[1])?; probe(g, y) }), vec![a34(rng), a34(rng)]));
    out.push(("add_row", Box::new(|g, v| { let y = g.add_row(v[0], v[1])?; probe(g, y) }), vec![a34(rng), uniform(rng, 1, 4, -1.0, 1.0)]));
    out.push(("mul_col", Box::new(|g, v| { let y = g.mul_col(v[0], v[1])?; probe(g, y) }), vec![a34(rng), uniform(rng, 3, 1, -1.0, 1.0)]));
    let k = rng.gen_range(-2.0..2.0);
    out.push(("scale", Box::new(move |g, v| { let y = g.scale(v[0], k)?; probe(g, y) }), vec![a34(rng)]));
    out.push(("add_scalar", Box::new(move |g, v| { let y = g.add_scalar(v[0], k)?; probe(g, y) }), vec![a34(rng)]));
    out.push(("rsub_scalar", Box::new(move |g, v| { let y = g.rsub_scalar(k, v[0])?; probe(g, y) }), vec![a34(rng)]));
    out.push(("transpose", Box::new(|g, v| { let y = g.transpose(v[0])?; probe(g, y) }), vec![a34(rng)]));
    out.push(("reshape", Box::new(|g, v| { let y = g.reshape(v[0], &[2, 6])?; probe(g, y) }), vec![a34(rng)]));
    out.push(("softmax_rows", Box::new(|g, v| { let y = g.softmax_rows(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, -2.0, 2.0)]));
    out.push(("log_softmax_rows", Box::new(|g, v| { let y = g.log_softmax_rows(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, -2.0, 2.0)]));
    out.push((
        "layer_norm",
        Box::new(|g, v| { let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?; probe(g, y) }),
        vec![uniform(rng, 3, 5, -2.0, 2.0), uniform(rng, 1, 5, 0.5, 1.5), uniform(rng, 1, 5, -0.5, 0.5)],
    ));
    out.push(("gelu", Box::new(|g, v| { let y = g.gelu(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, -3.0, 3.0)]));
    out.push(("sigmoid", Box::new(|g, v| { let y = g.sigmoid(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, -3.0, 3.0)]));
    out.push(("exp", Box::new(|g, v| { let y = g.exp(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, -2.0, 2.0)]));
    out.push(("log", Box::new(|g, v| { let y = g.log(v[0])?; probe(g, y) }), vec![uniform(rng, 3, 4, 0.5, 2.0)]));
    out.push(("abs", Box::new(|g, v| { let y = g.abs(v[0])?; probe(g, y) }), vec![away_from_zero(rng, 3, 4)]));
    // Entries sit at least 0.05 from the clamp bounds ±0.5.
    let clamp_in: Vec<f64> = (0..12)
        .map(|_| {
            let m = if rng.gen::<bool>() { rng.gen_range(0.0..0.45) } else { rng.gen_range(0.55..1.0) };
            m * if rng.gen::<bool>() { 1.0 } else { -1.0 }
        })
        .collect();
    out.push(("clamp", Box::new(|g, v| { let y = g.clamp(v[0], -0.5, 0.5)?; probe(g, y) }), vec![Tensor::from_rows(3, 4, clamp_in).unwrap()]));
    out.push(("sum", Box::new(|g, v| { let y = g.sum(v[0])?; let y = g.mul(y, y)?; g.sum(y) }), vec![a34(rng)]));
    out.push(("mean", Box::new(|g, v| { let y = g.mean(v[0])?; let y = g.mul(y, y)?; g.sum(y) }), vec![a34(rng)]));
    out.push(("mean_rows", Box::new(|g, v| { let y = g.mean_rows(v[0])?; probe(g, y) }), vec![a34(rng)]));
    out.push(("slice_cols", Box::new(|g, v| { let y = g.slice_cols(v[0], 1, 3)?; probe(g, y) }), vec![a34(rng)]));
    out.push(("concat_cols", Box::new(|g, v| { let y = g.concat_cols(&[v[0], v[1]])?; probe(g, y) }), vec![a34(rng), uniform(rng, 3, 2, -1.0, 1.0)]));
    out.push(("slice_rows", Box::new(|g, v| { let y = g.slice_rows(v[0], 1, 3)?; probe(g, y) }), vec![a34(rng)]));
    out.push(("concat_rows", Box::new(|g, v| { let y = g.concat_rows(&[v[0], v[1]])?; probe(g, y) }), vec![a34(rng), uniform(rng, 2, 4, -1.0, 1.0)]));
    out.push(("diag", Box::new(|g, v| { let y = g.diag(v[0])?; probe(g, y) }), vec![uniform(rng, 4, 4, -1.0, 1.0)]));
    let bags: Vec<Vec<u32>> = (0..3)
        .map(|_| (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)).collect())
        .collect();
    out.push((
        "embedding_bag_mean",
        Box::new(move |g, v| { let y = g.embedding_bag_mean(v[0], &bags)?; probe(g, y) }),
        vec![uniform(rng, 6, 4, -1.0, 1.0)],
    ));
    out.push(("normalize_rows", Box::new(|g, v| { let y = g.normalize_rows(v[0], 1e-12)?; probe(g, y) }), vec![away_from_zero(rng, 3, 4)]));
    out.push((
        "fold_patches",
        Box::new(|g, v| { let y = g.fold_patches(v[0], 4, 2, 2)?; probe(g, y) }),
        vec![uniform(rng, 3, 8, -1.0, 1.0)],
    ));
    out.push((
        "attention",
        Box::new(|g, v| { let y = scaled_dot_attention(g, v[0], v[1], v[2], 2)?; probe(g, y) }),
        vec![a34(rng), uniform(rng, 5, 4, -1.0, 1.0), uniform(rng, 5, 4, -1.0, 1.0)],
    ));

    // Loss terms.
    let tau = rng.gen_range(0.05..1.0);
    for (name, rows) in [("l_ma", false), ("l_ma_row_denominators", true)] {
        out.push((
            name,
            Box::new(move |g, v| {
                let k = similarity_matrix(g, v[0], v[1]).map_err(lib)?;
                loss_ma(g, k, tau, rows).map_err(lib)
            }),
            vec![uniform(rng, 4, 6, -1.0, 1.0), uniform(rng, 4, 6, -1.0, 1.0)],
        ));
    }
    let mu = rng.gen_range(0.1..0.9);
    out.push(("l_cc", Box::new(move |g, v| loss_cc(g, v[0], mu).map_err(lib)), vec![uniform(rng, 5, 1, 0.05, 0.95)]));
    let mut psi: Vec<f64> = Vec::new();
    while psi.len() < 5 {
        let p = rng.gen_range(0.05..0.95);
        if psi.last().map_or(true, |q: &f64| (p - q).abs() > 0.02) {
            psi.push(p);
        }
    }
    out.push(("l_sm", Box::new(|g, v| loss_sm(g, v[0]).map_err(lib)), vec![Tensor::col_vector(psi)]));
    out.push((
        "l_rec",
        Box::new(|g, v| loss_rec(g, v[0], v[1], false).map_err(lib)),
        vec![uniform(rng, 8, 2, -2.0, 2.0), uniform(rng, 8, 2, -2.0, 2.0)],
    ));
    out
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        window: 24,
        patch: 4,
        patch_stride: 4,
        d_model: 8,
        layers: 1,
        heads: 2,
        ff_mult: 2,
        vocab_size: 256,
        ..ModelConfig::default()
    }
}

/// Joint loss of a small model against sampled parameter entries. The mask
/// gate is soft here: a sampled mask is piecewise constant in ψ, so finite
/// differences cannot see the straight-through path.
fn joint_check(trial: u64, entries_per_trial: usize) -> TResult<GradCheckReport> {
    let data = synth_multimodal(trial, &SynthConfig { n_points: 200, ..SynthConfig::default() }).map_err(lib)?;
    let model = MindTs::new(&tiny_model_config(), 1, trial).map_err(lib)?;
    let wins = make_windows(&data.series, 24, 24).map_err(lib)?;
    let w = &wins[trial as usize % wins.len()];
    let prep = model.prepare(&data.series, w, &data.docs).map_err(lib)?;
    let opts = StepOptions {
        mask_ratio: 0.5,
        gate: Gate::Soft,
        mu: 0.5,
        rec_raw_sum: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(trial ^ 0x9e37);
    let ids: Vec<_> = model.store.ids().collect();
    let entries: Vec<_> = (0..entries_per_trial)
        .map(|_| {
            let id = ids[rng.gen_range(0..ids.len())];
            (id, rng.gen_range(0..model.store.get(id).len()))
        })
        .collect();
    grad_check_params(
        &model.store,
        |g| {
            let mut r = stream_rng(trial, 0, 0);
            let f = model.forward(g, &prep, &opts, &mut r).map_err(lib)?;
            Ok(f.total)
        },
        &entries,
        1e-4,
    )
}

/// Every op and loss term against central differences over `trials` seeds.
pub fn gradient_suite(trials: u64) -> Outcome {
    let mut reports: BTreeMap<&'static str, GradCheckReport> = BTreeMap::new();
    let mut errors = Vec::new();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        for (name, f, inputs) in op_cases(&mut rng) {
            match grad_check(|g, v| f(g, v), &inputs, 1e-4) {
                Ok(r) => match reports.get_mut(name) {
                    Some(acc) => acc.merge(&r),
                    None => {
                        reports.insert(name, r);
                    }
                },
                Err(e) => errors.push(format!("{name} trial {trial}: {e}")),
            }
        }
        match joint_check(trial, 8) {
            Ok(r) => match reports.get_mut("joint") {
                Some(acc) => acc.merge(&r),
                None => {
                    reports.insert("joint", r);
                }
            },
            Err(e) => errors.push(format!("joint trial {trial}: {e}")),
        }
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.pass)
        .map(|(n, r)| format!("{n} rel {:.2e}", r.max_rel_err))
        .collect();
    let worst_rel = reports.values().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let worst_abs = reports.values().map(|r| r.max_abs_err).fold(0.0, f64::max);
    let checked: usize = reports.values().map(|r| r.checked).sum();
    let unresolved: usize = reports.values().map(|r| r.unresolved).sum();
    let worst = format!(
        "max rel err {worst_rel:.2e}, max abs err {worst_abs:.2e}, {unresolved}/{checked} components below the resolvable scale"
    );
    let st = straight_through_contract();
    let pass = failed.is_empty() && errors.is_empty() && st.pass;
    let detail = if pass {
        format!("{} op and loss checks over {trials} trials, {worst}; {}", reports.len(), st.detail)
    } else {
        format!("failed: {:?} errors: {:?} {}", failed, errors, st.detail)
    };
    Outcome::new(pass, detail)
}

/// Forward emits the sample, backward passes the upstream gradient to ψ.
fn straight_through_contract() -> Outcome {
    let mut g = Graph::new();
    let psi = g.input(Tensor::col_vector(vec![0.2, 0.7, 0.5]));
    let y = g.straight_through(psi, Tensor::col_vector(vec![0.0, 1.0, 1.0])).unwrap();
    let w = g.constant(Tensor::col_vector(vec![3.0, -2.0, 0.5]));
    let m = g.mul(y, w).unwrap();
    let s = g.sum(m).unwrap();
    let forward_ok = g.value(y).data() == [0.0, 1.0, 1.0];
    let grad_ok = g.backward(s).unwrap().wrt(psi) == Some(&[3.0, -2.0, 0.5][..]);
    Outcome::new(forward_ok && grad_ok, "straight-through identity contract holds")
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize, allow_zero: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| if allow_zero && rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.01..1.0) })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn random_channel(rng: &mut ChaCha8Rng) -> Channel {
    let n = rng.gen_range(1..=4);
    let k = rng.gen_range(1..=8usize).min(4usize.pow(n as u32));
    let mut rows: Vec<Vec<u32>> = Vec::new();
    while rows.len() < k {
        let r: Vec<u32> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        if !rows.contains(&r) {
            rows.push(r);
        }
    }
    let laws = (0..k)
        .map(|_| {
            if rng.gen_bool(0.5) {
                MaskLaw::Product(
                    (0..n)
                        .map(|_| match rng.gen_range(0..6) {
                            0 => 0.0,
                            1 => 1.0,
                            _ => rng.gen_range(0.0..1.0),
                        })
                        .collect(),
                )
            } else {
                MaskLaw::Joint(random_simplex(rng, 1 << n, true))
            }
        })
        .collect();
    Channel {
        p_text: random_simplex(rng, k, false),
        rows,
        laws,
        n,
    }
}

/// Direct enumeration of `P(x, z)` for the condensed value `z = x ⊙ F`.
fn joint_table(ch: &Channel) -> Vec<BTreeMap<Condensed, f64>> {
    (0..ch.p_text.len())
        .map(|x| {
            let mut m = BTreeMap::new();
            for mask in 0..1usize << ch.n {
                let pf: f64 = match &ch.laws[x] {
                    MaskLaw::Product(psi) => (0..ch.n)
                        .map(|i| if mask >> i & 1 == 1 { psi[i] } else { 1.0 - psi[i] })
                        .product(),
                    MaskLaw::Joint(p) => p[mask],
                };
                let z: Condensed = (0..ch.n).map(|i| if mask >> i & 1 == 1 { ch.rows[x][i] } else { 0 }).collect();
                *m.entry(z).or_insert(0.0) += ch.p_text[x] * pf;
            }
            m
        })
        .collect()
}

fn entropy<'a>(p: impl Iterator<Item = &'a f64>) -> f64 {
    p.filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum()
}

/// `I = H(Z_con) − H(Z_con | Z_text)` from the joint table.
fn exact_mi(ch: &Channel) -> f64 {
    let joint = joint_table(ch);
    let mut marginal: BTreeMap<Condensed, f64> = BTreeMap::new();
    for row in &joint {
        for (z, p) in row {
            *marginal.entry(z.clone()).or_insert(0.0) += p;
        }
    }
    let h_z = entropy(marginal.values());
    let h_z_given_x: f64 = joint
        .iter()
        .zip(&ch.p_text)
        .filter(|(_, px)| **px > 0.0)
        .map(|(row, px)| {
            let cond: Vec<f64> = row.values().map(|p| p / px).collect();
            px * entropy(cond.iter())
        })
        .sum();
    h_z - h_z_given_x
}

pub fn lemma_suite(cases: u64) -> Outcome {
    let mut worst_gap = f64::INFINITY;
    let mut worst_tight = 0.0f64;
    let mut worst_mi = 0.0f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let ch = random_channel(&mut rng);
        let mi = exact_mi(&ch);
        let marginal = ch.marginal().unwrap();
        // A prior covering the support with random weights.
        let w = random_simplex(&mut rng, marginal.len(), false);
        let random_prior: BTreeMap<Condensed, f64> = marginal.keys().cloned().zip(w).collect();
        let priors = [Prior::Bernoulli(rng.gen_range(0.05..0.95)), Prior::Explicit(random_prior)];
        for prior in &priors {
            let r = lemma1_validate(&ch, prior).unwrap();
            worst_mi = worst_mi.max((r.mutual_information - mi).abs());
            worst_gap = worst_gap.min(r.bound + 1e-12 - mi);
            if !r.pass {
                return Outcome::new(false, format!("case {case}: I={mi} > bound={}", r.bound));
            }
        }
        let tight = lemma1_validate(&ch, &Prior::Explicit(marginal)).unwrap();
        worst_tight = worst_tight.max((tight.bound - mi).abs());
    }
    let pass = worst_gap >= 0.0 && worst_tight <= 1e-9 && worst_mi <= 1e-12;
    Outcome::new(
        pass,
        format!(
            "{cases} channels: min slack {worst_gap:.2e}, tight-prior gap {worst_tight:.2e}, MI agreement {worst_mi:.2e}"
        ),
    )
}

pub fn closed_form_suite() -> Outcome {
    let mut fails = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if !((got - want).abs() <= tol) {
            fails.push(format!("{name}: {got} vs {want}"));
        }
    };
    check("L_MA(N=1)", loss_ma_value(&Tensor::from_rows(1, 1, vec![0.37]).unwrap(), 0.07, false).unwrap(), 0.0, 1e-15);
    let k = Tensor::from_rows(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    check("L_MA(N=2)", loss_ma_value(&k, 1.0, false).unwrap(), (1.0 + (-1.0f64).exp()).ln(), 1e-9);
    check("L_CC(psi=mu)", loss_cc_value(&[0.3, 0.3, 0.3], 0.3).unwrap(), 0.0, 1e-15);
    check("L_CC(0.9,0.5)", loss_cc_value(&[0.9], 0.5).unwrap(), 0.3681, 1e-4);
    check("L_SM([0,1,0])", loss_sm_value(&[0.0, 1.0, 0.0]).unwrap(), 2.0 / 3.0, 1e-12);
    Outcome::new(fails.is_empty(), if fails.is_empty() { "5 closed forms match".to_string() } else { fails.join("; ") })
}

pub fn mask_suite() -> Outcome {
    let psi = vec![0.5; 100_000];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kept: f64 = sample_mask(&psi, &mut rng, MaskMode::Train).iter().sum::<f64>() / psi.len() as f64;
    let mut r2 = ChaCha8Rng::seed_from_u64(8);
    let probs: Vec<f64> = (0..1000)
        .map(|i| if i % 10 == 0 { 0.5 } else { r2.gen_range(0.0..1.0) })
        .collect();
    let a = sample_mask(&probs, &mut ChaCha8Rng::seed_from_u64(1), MaskMode::Infer);
    let b = sample_mask(&probs, &mut ChaCha8Rng::seed_from_u64(2), MaskMode::Infer);
    let want: Vec<f64> = probs.iter().map(|&p| f64::from(u8::from(p >= 0.5))).collect();
    let pass = (0.49..=0.51).contains(&kept) && a == b && a == want;
    Outcome::new(pass, format!("retention {kept:.4}; inference mask deterministic: {}", a == b && a == want))
}

fn random_labels(rng: &mut ChaCha8Rng, len: usize, density: f64) -> Vec<u8> {
    let mut out = vec![0u8; len];
    let mut t = 0;
    while t < len {
        if rng.gen_bool(density) {
            let run = rng.gen_range(1..=12).min(len - t);
            out[t..t + run].iter_mut().for_each(|v| *v = 1);
            t += run + 1;
        } else {
            t += 1;
        }
    }
    out
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Library metrics against the brute-force oracles on random instances.
pub fn metric_suite(instances: u64) -> Outcome {
    let biases = [
        ("flat", PositionalBias::Flat),
        ("front", PositionalBias::Front),
        ("back", PositionalBias::Back),
        ("middle", PositionalBias::Middle),
    ];
    let mut fails: Vec<String> = Vec::new();
    let mut worst = 0.0f64;
    let mut collapse_ok = true;
    for inst in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + inst);
        let len = rng.gen_range(10..=200);
        let dt = rng.gen_range(0.0..0.08);
        let truth = random_labels(&mut rng, len, dt);
        let dp = rng.gen_range(0.0..0.1);
        let pred = random_labels(&mut rng, len, dp);
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..len)
            .map(|_| {
                let s: f64 = rng.gen_range(0.0..1.0);
                if coarse { (s * 8.0).floor() / 8.0 } else { s }
            })
            .collect();
        let mut note = |name: &str, a: Option<f64>, b: Option<f64>| {
            if let (Some(x), Some(y)) = (a, b) {
                worst = worst.max((x - y).abs());
            }
            if !close(a, b, 1e-9) {
                fails.push(format!("#{inst} {name}: {a:?} vs {b:?}"));
            }
        };

        let pm = point_metrics(&pred, &truth).unwrap();
        let po = oracle::point(&pred, &truth);
        note("acc", Some(pm.accuracy), Some(po.acc));
        note("p", pm.precision, po.p);
        note("r", pm.recall, po.r);
        note("f1", pm.f1, po.f1);

        let (bname, bias) = biases[rng.gen_range(0..4)];
        let reciprocal = rng.gen_bool(0.5);
        let alpha = rng.gen_range(0.0..1.0);
        let params = RangeParams {
            alpha,
            bias,
            cardinality: if reciprocal { Cardinality::Reciprocal } else { Cardinality::One },
        };
        let rm = range_metrics(&events(&pred), &events(&truth), &params);
        let (rp, rr) = oracle::range_pr(&pred, &truth, alpha, bname, reciprocal);
        note("range_p", rm.precision, rp);
        note("range_r", rm.recall, rr);

        let am = affiliation_metrics(&events(&pred), &events(&truth), len);
        let (ap_, ar_) = oracle::affiliation(&pred, &truth);
        note("aff_p", am.precision, ap_);
        note("aff_r", am.recall, ar_);

        let y = binary_labels(&truth);
        note("roc", roc_auc(&scores, &y), oracle::roc(&scores, &y));
        note("ap", average_precision(&scores, &y), oracle::ap(&scores, &y));

        let mut grid: Vec<f64> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0.0..12.0)).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let buffer = rng.gen_range(0.0..8.0);
        let vm = vus(&scores, &truth, &grid, buffer, Execution::Sequential).unwrap();
        let (vr, vp) = oracle::vus(&scores, &truth, &grid);
        note("vus_roc", vm.vus_roc, vr);
        note("vus_pr", vm.vus_pr, vp);
        let yb = oracle::ramp(&truth, buffer);
        note("range_auc_roc", vm.range_auc_roc, oracle::roc(&scores, &yb));
        note("range_auc_pr", vm.range_auc_pr, oracle::ap(&scores, &yb));

        let z = vus(&scores, &truth, &[0.0], 0.0, Execution::Sequential).unwrap();
        collapse_ok &= z.vus_roc == roc_auc(&scores, &y) && z.vus_pr == average_precision(&scores, &y);
    }
    let pass = fails.is_empty() && collapse_ok;
    let detail = if pass {
        format!("{instances} instances, max abs diff {worst:.1e}; zero grid equals plain AUC")
    } else {
        format!("collapse {collapse_ok}; {} mismatches, first: {:?}", fails.len(), fails.iter().take(3).collect::<Vec<_>>())
    };
    Outcome::new(pass, detail)
}
