//! Scaled dot-product self-attention and its multi-head wrapper.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Boolean `rows × cols` matrix; `true` marks a forbidden query/key pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    forbidden: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, forbidden: Vec<bool>) -> Result<Self> {
        if forbidden.len() != rows * cols {
            return Err(Error::Dimension {
                op: "Mask::new",
                lhs: vec![rows, cols],
                rhs: vec![forbidden.len()],
            });
        }
        Ok(Self {
            rows,
            cols,
            forbidden,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.forbidden[row * self.cols + col]
    }

    pub fn forbidden_count(&self) -> usize {
        self.forbidden.iter().filter(|&&f| f).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.forbidden
    }
}

/// Mask forbidding position `i` from attending to any `j > i`.
pub fn causal_mask(len: usize) -> Mask {
    let forbidden = (0..len * len).map(|ix| ix % len > ix / len).collect();
    Mask {
        rows: len,
        cols: len,
        forbidden,
    }
}

/// Which attention block produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionSite {
    Sensor,
    TimeStep,
    DecoderSelf,
    DecoderCross,
}

/// Attention weights of one head in one layer; each row is a probability
/// vector over key positions (or all zeros when fully masked).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub site: AttentionSite,
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

/// Per-head query/key/value projections.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Projection weights of one multi-head attention block.
///
/// Each head projects `d_model → head_dim`; the concatenated heads are mapped
/// back by `wo` of shape `(heads · head_dim) × d_model`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub wo: ParamId,
    pub d_model: usize,
    pub head_dim: usize,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        head_count: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Self {
        let heads = (0..head_count)
            .map(|h| HeadParams {
                wq: store.add_glorot(format!("{prefix}.head{h}.wq"), d_model, head_dim, rng),
                wk: store.add_glorot(format!("{prefix}.head{h}.wk"), d_model, head_dim, rng),
                wv: store.add_glorot(format!("{prefix}.head{h}.wv"), d_model, head_dim, rng),
            })
            .collect();
        let wo = store.add_glorot(format!("{prefix}.wo"), head_count * head_dim, d_model, rng);
        Self {
            heads,
            wo,
            d_model,
            head_dim,
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Number of scalar weights: `h · 3 · D · d_head + h · d_head · D`.
    pub fn element_count(&self) -> usize {
        4 * self.heads.len() * self.d_model * self.head_dim
    }
}

/// `softmax(q·kᵀ / √D) · v` where `D` is the query width. Forbidden pairs are
/// set to `-inf` before the softmax. Returns `(output, weights)`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&Mask>,
) -> Result<(Var, Var)> {
    let (lq, d) = tape.value(q).dims()?;
    let (lk, dk) = tape.value(k).dims()?;
    let (lv, _) = tape.value(v).dims()?;
    if d == 0 || d != dk || lk != lv {
        return Err(Error::Dimension {
            op: "scaled_dot_attention",
            lhs: tape.value(q).shape().to_vec(),
            rhs: tape.value(k).shape().to_vec(),
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, 1.0 / libm::sqrt(d as f64));
    if let Some(mask) = mask {
        if mask.shape() != (lq, lk) {
            return Err(Error::Dimension {
                op: "attention mask",
                lhs: vec![lq, lk],
                rhs: vec![mask.rows, mask.cols],
            });
        }
        scores = tape.mask_fill_neg_inf(scores, mask.as_slice())?;
    }
    let weights = tape.softmax_rows(scores)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Where captured weights should be filed.
#[derive(Clone, Copy, Debug)]
pub struct AttentionTag {
    pub site: AttentionSite,
    pub layer: usize,
}

/// Multi-head attention with queries from `x_q` and keys/values from `x_kv`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    params: &AttentionParams,
    binding: &Binding,
    mask: Option<&Mask>,
    mut records: Option<(&mut Vec<AttentionRecord>, AttentionTag)>,
) -> Result<Var> {
    let mut outputs = Vec::with_capacity(params.heads.len());
    for (h, head) in params.heads.iter().enumerate() {
        let q = tape.matmul(x_q, binding[head.wq])?;
        let k = tape.matmul(x_kv, binding[head.wk])?;
        let v = tape.matmul(x_kv, binding[head.wv])?;
        let (out, weights) = scaled_dot_attention(tape, q, k, v, mask)?;
        if let Some((sink, tag)) = records.as_mut() {
            sink.push(AttentionRecord {
                site: tag.site,
                layer: tag.layer,
                head: h,
                weights: tape.value(weights).clone(),
            });
        }
        outputs.push(out);
    }
    let concat = tape.concat_cols(&outputs)?;
    tape.matmul(concat, binding[params.wo])
}
