//! Finite-difference verification of analytic gradients.
//!
//! Central differences at 64-bit precision are accurate to roughly `eps^2`,
//! so with `eps = 1e-5` a correct gradient shows relative error well under
//! `1e-5` away from non-differentiable points.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::NnError;
use crate::rng::DetRng;

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct WorstCoord {
    pub tensor: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CheckResult {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst: Option<WorstCoord>,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`; the floor keeps near-zero pairs benign.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare `analytic` gradients of `loss` w.r.t. `inputs` against central
/// differences. `max_coords` caps the coordinates probed per tensor (0 means
/// all); when sampling, coordinates are drawn without replacement from `rng`.
pub fn check_gradients(
    inputs: &[Tensor],
    analytic: &[Tensor],
    mut loss: impl FnMut(&[Tensor]) -> f64,
    eps: f64,
    max_coords: usize,
    rng: &mut DetRng,
) -> CheckResult {
    assert_eq!(inputs.len(), analytic.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut result = CheckResult::default();

    for ti in 0..inputs.len() {
        assert_eq!(
            inputs[ti].shape(),
            analytic[ti].shape(),
            "analytic gradient {} has the wrong shape",
            ti
        );
        let n = inputs[ti].numel();
        let coords: Vec<usize> = if max_coords == 0 || n <= max_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(max_coords);
            all
        };

        for &ci in &coords {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + eps;
            let fp = loss(&work);
            work[ti].data_mut()[ci] = orig - eps;
            let fm = loss(&work);
            work[ti].data_mut()[ci] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[ti].data()[ci];
            let rel = relative_error(a, numeric);
            result.coords_checked += 1;
            if rel > result.max_rel_err {
                result.max_rel_err = rel;
                result.worst = Some(WorstCoord {
                    tensor: ti,
                    coord: ci,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    result
}

/// Gradient-check a graph builder. `build` must construct the same scalar
/// loss from the given leaf nodes every time it is called.
pub fn check_graph<F>(
    inputs: &[Tensor],
    build: F,
    eps: f64,
    max_coords: usize,
    rng: &mut DetRng,
) -> Result<CheckResult, NnError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, NnError>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss_id = build(&mut g, &ids)?;
    let grads = g.backward(loss_id)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(id).shape()))
        })
        .collect();

    let loss_fn = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss_id = build(&mut g, &ids).expect("loss rebuild failed during gradient check");
        g.value(loss_id).item()
    };
    Ok(check_gradients(inputs, &analytic, loss_fn, eps, max_coords, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    const OP_TOL: f64 = 1e-5;

    fn randn(rng: &mut DetRng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.normal()).collect())
    }

    /// Random projection weights so every output coordinate affects the loss.
    fn proj(rng: &mut DetRng, shape: &[usize]) -> Tensor {
        randn(rng, shape)
    }

    fn assert_ok(result: &CheckResult, what: &str) {
        assert!(
            result.max_rel_err < OP_TOL,
            "{what}: max rel err {:.3e} at {:?}",
            result.max_rel_err,
            result.worst
        );
        assert!(result.coords_checked > 0);
    }

    #[test]
    fn grad_add_and_scale() {
        let mut rng = DetRng::new(11);
        let a = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[3, 4]);
        let w = proj(&mut rng, &[3, 4]);
        let r = check_graph(
            &[a, b],
            |g, ids| {
                let s = g.add(ids[0], ids[1])?;
                let s = g.scale(s, 1.7);
                g.weighted_sum(s, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "add+scale");
    }

    #[test]
    fn grad_mul_const() {
        let mut rng = DetRng::new(12);
        let a = randn(&mut rng, &[2, 5]);
        let mask = randn(&mut rng, &[2, 5]);
        let w = proj(&mut rng, &[2, 5]);
        let r = check_graph(
            &[a],
            |g, ids| {
                let m = g.mul_const(ids[0], mask.clone())?;
                g.weighted_sum(m, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "mul_const");
    }

    #[test]
    fn grad_matmul() {
        let mut rng = DetRng::new(13);
        let a = randn(&mut rng, &[3, 4]);
        let b = randn(&mut rng, &[4, 5]);
        let w = proj(&mut rng, &[3, 5]);
        let r = check_graph(
            &[a, b],
            |g, ids| {
                let c = g.matmul(ids[0], ids[1])?;
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "matmul");
    }

    #[test]
    fn grad_add_bias() {
        let mut rng = DetRng::new(14);
        let a = randn(&mut rng, &[3, 4]);
        let bias = randn(&mut rng, &[4]);
        let w = proj(&mut rng, &[3, 4]);
        let r = check_graph(
            &[a, bias],
            |g, ids| {
                let c = g.add_bias(ids[0], ids[1])?;
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "add_bias");
    }

    #[test]
    fn grad_bmm_both_layouts() {
        let mut rng = DetRng::new(15);
        let a = randn(&mut rng, &[2, 3, 4]);
        let b = randn(&mut rng, &[2, 4, 5]);
        let bt = randn(&mut rng, &[2, 5, 4]);
        let w = proj(&mut rng, &[2, 3, 5]);
        let w2 = w.clone();

        let r = check_graph(
            &[a.clone(), b],
            |g, ids| {
                let c = g.bmm(ids[0], ids[1])?;
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "bmm");

        let r = check_graph(
            &[a, bt],
            |g, ids| {
                let c = g.bmm_t(ids[0], ids[1])?;
                g.weighted_sum(c, w2.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "bmm_t");
    }

    #[test]
    fn grad_relu_away_from_kink() {
        let mut rng = DetRng::new(16);
        let mut a = randn(&mut rng, &[4, 4]);
        // relu is not differentiable at 0; keep samples clear of it
        for v in a.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2 * v.signum().max(0.5);
            }
        }
        let w = proj(&mut rng, &[4, 4]);
        let r = check_graph(
            &[a],
            |g, ids| {
                let c = g.relu(ids[0]);
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "relu");
    }

    #[test]
    fn grad_gelu() {
        let mut rng = DetRng::new(17);
        let a = randn(&mut rng, &[4, 4]);
        let w = proj(&mut rng, &[4, 4]);
        let r = check_graph(
            &[a],
            |g, ids| {
                let c = g.gelu(ids[0]);
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "gelu");
    }

    #[test]
    fn grad_softmax() {
        let mut rng = DetRng::new(18);
        let a = randn(&mut rng, &[3, 6]);
        let w = proj(&mut rng, &[3, 6]);
        let r = check_graph(
            &[a],
            |g, ids| {
                let c = g.softmax(ids[0]);
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "softmax");
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = DetRng::new(19);
        let x = randn(&mut rng, &[3, 8]);
        let gain = randn(&mut rng, &[8]);
        let bias = randn(&mut rng, &[8]);
        let w = proj(&mut rng, &[3, 8]);
        let r = check_graph(
            &[x, gain, bias],
            |g, ids| {
                let c = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "layer_norm");
    }

    #[test]
    fn grad_conv1d() {
        let mut rng = DetRng::new(20);
        let x = randn(&mut rng, &[2, 3, 7]);
        let w = randn(&mut rng, &[4, 3, 5]);
        let b = randn(&mut rng, &[4]);
        let pw = proj(&mut rng, &[2, 4, 7]);
        let r = check_graph(
            &[x, w, b],
            |g, ids| {
                let c = g.conv1d(ids[0], ids[1], ids[2])?;
                g.weighted_sum(c, pw.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "conv1d");
    }

    #[test]
    fn grad_reshape_permute_chain() {
        let mut rng = DetRng::new(21);
        let x = randn(&mut rng, &[2, 3, 4]);
        let w = proj(&mut rng, &[4, 6]);
        let r = check_graph(
            &[x],
            |g, ids| {
                let p = g.permute(ids[0], &[2, 0, 1])?;
                let f = g.reshape(p, &[4, 6])?;
                g.weighted_sum(f, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "reshape+permute");
    }

    #[test]
    fn grad_mean_axis1_and_concat() {
        let mut rng = DetRng::new(22);
        let a = randn(&mut rng, &[2, 5, 3]);
        let b = randn(&mut rng, &[2, 5, 4]);
        let w = proj(&mut rng, &[2, 7]);
        let r = check_graph(
            &[a, b],
            |g, ids| {
                let pa = g.mean_axis1(ids[0])?;
                let pb = g.mean_axis1(ids[1])?;
                let c = g.concat_last(pa, pb)?;
                g.weighted_sum(c, w.clone())
            },
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "mean_axis1+concat_last");
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = DetRng::new(23);
        let logits = randn(&mut rng, &[4, 5]);
        let labels = vec![0, 2, 4, 1];
        let r = check_graph(
            &[logits],
            |g, ids| g.cross_entropy(ids[0], &labels),
            DEFAULT_EPS,
            0,
            &mut rng,
        )
        .unwrap();
        assert_ok(&r, "cross_entropy");
    }

    #[test]
    fn sampled_coordinates_respect_cap() {
        let mut rng = DetRng::new(24);
        let a = randn(&mut rng, &[10, 10]);
        let w = proj(&mut rng, &[10, 10]);
        let r = check_graph(
            &[a],
            |g, ids| g.weighted_sum(ids[0], w.clone()),
            DEFAULT_EPS,
            7,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.coords_checked, 7);
        assert_ok(&r, "sampled weighted_sum");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = DetRng::new(25);
        let a = randn(&mut rng, &[3]);
        let analytic = vec![Tensor::from_vec(&[3], vec![9.9, 9.9, 9.9])];
        let r = check_gradients(
            &[a],
            &analytic,
            |xs| xs[0].data().iter().sum(),
            DEFAULT_EPS,
            0,
            &mut rng,
        );
        assert!(r.max_rel_err > 0.5, "a deliberately wrong gradient must be flagged");
    }
}
