//! Self-contained gradient verification suite. Every differentiable
//! operation, the attention block, and a whole miniature classifier are
//! checked against central finite differences, each with a named tolerance.
//! The suite is the numerical gatekeeper: it must pass before any training
//! output is trusted.

use crate::har::model::{Mode, ModelConfig, TwoStreamModel};
use crate::nn::attention::{multi_head_attention, AttentionWeights};
use crate::nn::gradcheck::{check_graph, CheckResult, DEFAULT_EPS};
use crate::nn::tensor::Tensor;
use crate::nn::{Graph, NnError, NodeId};
use crate::rng::DetRng;
use serde::Serialize;
use std::time::Instant;

/// Finite-difference tolerance for single operations.
pub const TOL_OP: f64 = 1e-5;
/// Tolerance for the attention block.
pub const TOL_ATTENTION: f64 = 1e-5;
/// Tolerance for the full miniature model (deeper composition, looser gate).
pub const TOL_MODEL: f64 = 1e-4;
/// Tolerance for purely linear graphs, where central differences are exact
/// up to rounding.
pub const TOL_LINEAR: f64 = 1e-7;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
    pub elapsed_s: f64,
}

fn rand_tensor(rng: &mut DetRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
}

struct Suite {
    seed: u64,
    checks: Vec<CheckOutcome>,
}

impl Suite {
    fn record(&mut self, name: &str, tolerance: f64, result: CheckResult) {
        self.checks.push(CheckOutcome {
            name: name.to_string(),
            max_rel_err: result.max_rel_err,
            tolerance,
            coords_checked: result.coords_checked,
            passed: result.max_rel_err < tolerance,
        });
    }

    fn run<F>(&mut self, name: &str, tolerance: f64, shapes: &[&[usize]], build: F)
    where
        F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NnError>,
    {
        let mut data_rng = DetRng::new(self.seed).fork(&format!("verify/{name}/data"));
        let mut coord_rng = DetRng::new(self.seed).fork(&format!("verify/{name}/coords"));
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut data_rng, s)).collect();
        let result = check_graph(&inputs, build, DEFAULT_EPS, 0, &mut coord_rng)
            .expect("gradient check graph failed to build");
        self.record(name, tolerance, result);
    }
}

/// Runs the full gradient suite. Deterministic in `seed`.
pub fn gradient_suite(seed: u64) -> VerifyReport {
    let start = Instant::now();
    let mut s = Suite {
        seed,
        checks: Vec::new(),
    };

    s.run("add", TOL_LINEAR, &[&[3, 4], &[3, 4]], |g, ids| {
        let sum = g.add(ids[0], ids[1])?;
        Ok(g.sum_all(sum))
    });
    s.run("scale", TOL_LINEAR, &[&[3, 4]], |g, ids| {
        let y = g.scale(ids[0], -2.5);
        Ok(g.sum_all(y))
    });
    s.run("matmul", TOL_OP, &[&[3, 4], &[4, 5]], |g, ids| {
        let y = g.matmul(ids[0], ids[1])?;
        let w = weights(g, &[3, 5]);
        g.weighted_sum(y, w)
    });
    s.run("add_bias", TOL_LINEAR, &[&[3, 4], &[4]], |g, ids| {
        let y = g.add_bias(ids[0], ids[1])?;
        let w = weights(g, &[3, 4]);
        g.weighted_sum(y, w)
    });
    s.run("bmm", TOL_OP, &[&[2, 3, 4], &[2, 4, 5]], |g, ids| {
        let y = g.bmm(ids[0], ids[1])?;
        let w = weights(g, &[2, 3, 5]);
        g.weighted_sum(y, w)
    });
    s.run("bmm_t", TOL_OP, &[&[2, 3, 4], &[2, 5, 4]], |g, ids| {
        let y = g.bmm_t(ids[0], ids[1])?;
        let w = weights(g, &[2, 3, 5]);
        g.weighted_sum(y, w)
    });
    s.run("relu", TOL_OP, &[&[4, 6]], |g, ids| {
        let y = g.relu(ids[0]);
        let w = weights(g, &[4, 6]);
        g.weighted_sum(y, w)
    });
    s.run("gelu", TOL_OP, &[&[4, 6]], |g, ids| {
        let y = g.gelu(ids[0]);
        let w = weights(g, &[4, 6]);
        g.weighted_sum(y, w)
    });
    s.run("softmax", TOL_OP, &[&[4, 5]], |g, ids| {
        let y = g.softmax(ids[0]);
        let w = weights(g, &[4, 5]);
        g.weighted_sum(y, w)
    });
    s.run("layer_norm", TOL_OP, &[&[3, 6], &[6], &[6]], |g, ids| {
        let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
        let w = weights(g, &[3, 6]);
        g.weighted_sum(y, w)
    });
    s.run("conv1d", TOL_OP, &[&[2, 3, 7], &[4, 3, 3], &[4]], |g, ids| {
        let y = g.conv1d(ids[0], ids[1], ids[2])?;
        let w = weights(g, &[2, 4, 7]);
        g.weighted_sum(y, w)
    });
    s.run("mean_axis1", TOL_LINEAR, &[&[3, 5, 2]], |g, ids| {
        let y = g.mean_axis1(ids[0])?;
        let w = weights(g, &[3, 2]);
        g.weighted_sum(y, w)
    });
    s.run("permute_reshape", TOL_LINEAR, &[&[2, 3, 4]], |g, ids| {
        let p = g.permute(ids[0], &[0, 2, 1])?;
        let r = g.reshape(p, &[2, 12])?;
        let w = weights(g, &[2, 12]);
        g.weighted_sum(r, w)
    });
    s.run("concat_last", TOL_LINEAR, &[&[3, 4], &[3, 2]], |g, ids| {
        let y = g.concat_last(ids[0], ids[1])?;
        let w = weights(g, &[3, 6]);
        g.weighted_sum(y, w)
    });
    s.run("cross_entropy", TOL_OP, &[&[4, 3]], |g, ids| {
        g.cross_entropy(ids[0], &[0, 2, 1, 1])
    });

    // attention block: input and projection tensors except the key bias.
    // Shifting every key by a constant shifts each row of scores uniformly
    // and softmax is invariant to that, so the key-bias gradient is exactly
    // zero; finite differences only measure rounding noise there. The zero
    // itself is asserted in `attention_key_bias`.
    let e = 6;
    let heads = 2;
    let mut bk_rng = DetRng::new(seed).fork("verify/attention/bk");
    let bk_const = rand_tensor(&mut bk_rng, &[e]);
    let bk_for_run = bk_const.clone();
    s.run(
        "attention",
        TOL_ATTENTION,
        &[
            &[2, 4, e],
            &[e, e],
            &[e],
            &[e, e],
            &[e, e],
            &[e],
            &[e, e],
            &[e],
        ],
        move |g, ids| {
            let bk = g.constant(bk_for_run.clone());
            let w = AttentionWeights {
                wq: ids[1],
                bq: ids[2],
                wk: ids[3],
                bk,
                wv: ids[4],
                bv: ids[5],
                wo: ids[6],
                bo: ids[7],
            };
            let mha = multi_head_attention(g, ids[0], &w, heads)?;
            let wt = weights(g, &[2, 4, e]);
            g.weighted_sum(mha.out, wt)
        },
    );
    attention_key_bias_check(&mut s, e, heads, &bk_const);

    model_check(&mut s);
    model_key_bias_check(&mut s);

    let all_passed = s.checks.iter().all(|c| c.passed);
    VerifyReport {
        seed,
        checks: s.checks,
        all_passed,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

/// Deterministic non-uniform weighting so zero-gradient coordinates cannot
/// hide sign errors behind symmetric cancellation.
fn weights(_g: &mut Graph, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| 0.3 + 0.07 * (i as f64 % 11.0)).collect();
    Tensor::from_vec(shape, data)
}

fn miniature_model(seed: u64) -> (TwoStreamModel, Tensor, [usize; 2]) {
    let cfg = ModelConfig {
        dropout: 0.0,
        embed_dim: 4,
        heads: 2,
        n_blocks: 1,
        conv_kernels: vec![3],
        rng_seed: seed ^ 0xA5A5,
        ..ModelConfig::new(6, 4, 2)
    };
    let model = TwoStreamModel::new(cfg).expect("miniature config must be valid");
    let mut data_rng = DetRng::new(seed).fork("verify/model/data");
    let x = rand_tensor(&mut data_rng, &[2, 6, 4]);
    (model, x, [0usize, 1])
}

/// Key-projection biases have structurally zero gradients (see the attention
/// check above), so they are verified by magnitude, not finite differences.
fn is_structural_zero(name: &str) -> bool {
    name.ends_with(".attn.wk.b")
}

fn model_grads(model: &TwoStreamModel, x: &Tensor, labels: &[usize]) -> TwoStreamModel {
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, x, Mode::Eval, None)
        .expect("forward failed");
    let loss = g.cross_entropy(pass.logits, labels).expect("loss failed");
    let grads = g.backward(loss).expect("backward failed");
    let mut with_grads = model.clone();
    with_grads.params.zero_grads();
    with_grads.accumulate_grads(&grads, &pass);
    with_grads
}

/// Whole miniature two-stream model, loss differentiated with respect to
/// every parameter tensor that has a nonzero gradient structure. Coordinates
/// are subsampled to keep the suite fast; the per-op checks above are
/// exhaustive.
fn model_check(s: &mut Suite) {
    let (model, x, labels) = miniature_model(s.seed);
    let mut coord_rng = DetRng::new(s.seed).fork("verify/model/coords");
    let with_grads = model_grads(&model, &x, &labels);

    let mut checked_idx = Vec::new();
    let mut inputs = Vec::new();
    let mut analytic = Vec::new();
    for (i, p) in with_grads.params.iter().enumerate() {
        if !is_structural_zero(&p.name) {
            checked_idx.push(i);
            inputs.push(p.tensor.clone());
            analytic.push(p.grad.clone());
        }
    }

    let loss_fn = |params: &[Tensor]| -> f64 {
        let mut m = model.clone();
        for (slot, t) in checked_idx.iter().zip(params) {
            for (j, p) in m.params.iter_mut().enumerate() {
                if j == *slot {
                    p.tensor = t.clone();
                }
            }
        }
        let mut g = Graph::new();
        let pass = m
            .forward(&mut g, &x, Mode::Eval, None)
            .expect("forward failed");
        let loss = g.cross_entropy(pass.logits, &labels).expect("loss failed");
        g.value(loss).item()
    };

    // up to 6 coordinates per parameter tensor keeps this check well under
    // the suite's time budget while still touching every tensor
    let result = crate::nn::gradcheck::check_gradients(
        &inputs,
        &analytic,
        loss_fn,
        DEFAULT_EPS,
        6,
        &mut coord_rng,
    );
    s.record("two_stream_model", TOL_MODEL, result);
}

/// The key biases the finite-difference pass skips: their tape gradients
/// must come out at rounding-noise scale.
fn model_key_bias_check(s: &mut Suite) {
    let (model, x, labels) = miniature_model(s.seed);
    let with_grads = model_grads(&model, &x, &labels);
    let mut max_abs = 0.0f64;
    let mut coords = 0usize;
    for p in with_grads.params.iter().filter(|p| is_structural_zero(&p.name)) {
        for &v in p.grad.data() {
            max_abs = max_abs.max(v.abs());
            coords += 1;
        }
    }
    assert!(coords > 0, "model must contain key-projection biases");
    s.checks.push(CheckOutcome {
        name: "model_key_bias_zero".to_string(),
        max_rel_err: max_abs,
        tolerance: 1e-12,
        coords_checked: coords,
        passed: max_abs < 1e-12,
    });
}

/// Direct tape evaluation of the key-bias gradient in a standalone attention
/// block; must be exactly zero up to rounding.
fn attention_key_bias_check(s: &mut Suite, e: usize, heads: usize, bk: &Tensor) {
    let mut rng = DetRng::new(s.seed).fork("verify/attention-bk/data");
    let mut g = Graph::new();
    let x = g.leaf(rand_tensor(&mut rng, &[2, 4, e]));
    let mut mat = |shape: &[usize]| g.leaf(rand_tensor(&mut rng, shape));
    let (wq, bq) = (mat(&[e, e]), mat(&[e]));
    let wk = mat(&[e, e]);
    let (wv, bv) = (mat(&[e, e]), mat(&[e]));
    let (wo, bo) = (mat(&[e, e]), mat(&[e]));
    let bk_id = g.leaf(bk.clone());
    let w = AttentionWeights {
        wq,
        bq,
        wk,
        bk: bk_id,
        wv,
        bv,
        wo,
        bo,
    };
    let mha = multi_head_attention(&mut g, x, &w, heads).expect("attention build failed");
    let wt = weights(&mut g, &[2, 4, e]);
    let loss = g.weighted_sum(mha.out, wt).expect("loss build failed");
    let grads = g.backward(loss).expect("backward failed");
    let gbk = grads.get(bk_id).expect("key bias must have a gradient slot");
    let max_abs = gbk.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    s.checks.push(CheckOutcome {
        name: "attention_key_bias_zero".to_string(),
        max_rel_err: max_abs,
        tolerance: 1e-12,
        coords_checked: gbk.data().len(),
        passed: max_abs < 1e-12,
    });
}

/// One line per check, suitable for terminal output.
pub fn format_report(report: &VerifyReport) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&format!(
            "{:<18} {}  max_rel_err {:.3e}  (tol {:.0e}, {} coords)\n",
            c.name,
            if c.passed { "ok " } else { "FAIL" },
            c.max_rel_err,
            c.tolerance,
            c.coords_checked
        ));
    }
    out.push_str(&format!(
        "{} checks, {}, {:.2}s\n",
        report.checks.len(),
        if report.all_passed {
            "all passed".to_string()
        } else {
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            format!("{failed} FAILED")
        },
        report.elapsed_s
    ));
    out
}
