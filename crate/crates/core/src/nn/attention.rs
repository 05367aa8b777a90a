//! Multi-head scaled dot-product self-attention, assembled from graph ops.

use super::graph::{Graph, NodeId};
use super::NnError;

/// Leaf nodes for one attention layer's parameters. Projection weights are
/// `[out][in]`, biases `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

pub struct MhaOutput {
    /// `[batch, seq, dim]`, same shape as the input.
    pub out: NodeId,
    /// Attention probabilities `[batch*heads, seq, seq]`; rows sum to 1.
    pub attn: NodeId,
}

/// Dense layer `y = x W^T + b` for `x: [n, in]`, `w: [out][in]`.
pub fn linear(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NnError> {
    let wt = g.permute(w, &[1, 0])?;
    let y = g.matmul(x, wt)?;
    g.add_bias(y, b)
}

/// Standard self-attention over `x: [batch, seq, dim]` with `heads` heads of
/// size `dim / heads`, scale `1/sqrt(dim/heads)`.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    w: &AttentionWeights,
    heads: usize,
) -> Result<MhaOutput, NnError> {
    let shape = g.value(x).shape().to_vec();
    let (b, s, e) = match shape[..] {
        [b, s, e] => (b, s, e),
        _ => {
            return Err(NnError::InvalidConfig(format!(
                "attention expects [batch, seq, dim], got {:?}",
                shape
            )))
        }
    };
    if heads == 0 || e % heads != 0 {
        return Err(NnError::InvalidConfig(format!(
            "dim {e} is not divisible by {heads} heads"
        )));
    }
    let d = e / heads;

    let x2 = g.reshape(x, &[b * s, e])?;
    let split = |g: &mut Graph, y: NodeId| -> Result<NodeId, NnError> {
        let y = g.reshape(y, &[b, s, heads, d])?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        g.reshape(y, &[b * heads, s, d])
    };
    let q = linear(g, x2, w.wq, w.bq)?;
    let k = linear(g, x2, w.wk, w.bk)?;
    let v = linear(g, x2, w.wv, w.bv)?;
    let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);

    let scores = g.bmm_t(q, k)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx = g.bmm(attn, v)?;

    let ctx = g.reshape(ctx, &[b, heads, s, d])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[b * s, e])?;
    let out = linear(g, ctx, w.wo, w.bo)?;
    let out = g.reshape(out, &[b, s, e])?;
    Ok(MhaOutput { out, attn })
}
