//! Training-time embedding space.
//!
//! Encoder features `z` are projected to `b` dimensions by a linear layer,
//! grouped by label, refined by multi-head self-attention inside each group
//! (no positional encoding, no cross-class attention), reassembled in batch
//! order and ℓ2-normalized. Natural and adversarial batches share weights but
//! are grouped and attended separately.
//!
//! None of this is used at inference; exported models carry no embedding
//! parameters.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Linear, Parameterized};
use crate::seed::Rng;

const LN_EPS: f64 = 1e-5;
const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Encoder feature dimension `o`.
    pub encoder_dim: usize,
    /// Embedding dimension `b`.
    pub embed_dim: usize,
    /// Number of heads `m`; must divide `b`.
    pub heads: usize,
}

impl EmbeddingConfig {
    pub fn new(encoder_dim: usize, embed_dim: usize, heads: usize) -> Result<Self> {
        let c = Self {
            encoder_dim,
            embed_dim,
            heads,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_dim == 0 {
            return Err(Error::config("embedding.encoder_dim", "must be >= 1"));
        }
        if self.heads == 0 || self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::config(
                "embedding.heads",
                format!("embed_dim {} is not divisible by {} heads", self.embed_dim, self.heads),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Rows of one class, with their positions in the original batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGroup {
    pub class_id: usize,
    pub rows: Array2<f64>,
    pub source_indices: Vec<usize>,
}

/// Buckets rows by label; groups come out in ascending class order and keep
/// within-class batch order.
pub fn group_by_class(s: &Array2<f64>, y: &[usize]) -> Result<Vec<ClassGroup>> {
    if s.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", s.nrows(), y.len())));
    }
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|class_id| {
            let source_indices: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class_id).collect();
            ClassGroup {
                class_id,
                rows: s.select(Axis(0), &source_indices),
                source_indices,
            }
        })
        .collect())
}

/// Inverse of [`group_by_class`].
pub fn ungroup(groups: &[ClassGroup]) -> Result<Array2<f64>> {
    let n: usize = groups.iter().map(|g| g.source_indices.len()).sum();
    let b = groups.first().map_or(0, |g| g.rows.ncols());
    let mut out = Array2::zeros((n, b));
    let mut seen = vec![false; n];
    for g in groups {
        for (r, &i) in g.source_indices.iter().enumerate() {
            if i >= n || seen[i] {
                return Err(Error::Shape(format!("source index {i} is out of range or repeated")));
            }
            seen[i] = true;
            out.row_mut(i).assign(&g.rows.row(r));
        }
    }
    Ok(out)
}

/// Self-attention parameters shared by every class group.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// `(m, b, b_j)`
    pub query: Array3<f64>,
    pub key: Array3<f64>,
    pub value: Array3<f64>,
    /// `(m·b_j, b)`
    pub output: Array2<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_offset: Array1<f64>,
}

impl AttentionWeights {
    pub fn init(embed_dim: usize, heads: usize, rng: &mut Rng) -> Self {
        let bj = embed_dim / heads;
        let bound = 1.0 / (embed_dim as f64).sqrt();
        let mut draw = |shape: (usize, usize, usize)| {
            Array3::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
        };
        let query = draw((heads, embed_dim, bj));
        let key = draw((heads, embed_dim, bj));
        let value = draw((heads, embed_dim, bj));
        let output = draw((1, heads * bj, embed_dim)).index_axis_move(Axis(0), 0);
        Self {
            query,
            key,
            value,
            output,
            ln_scale: Array1::ones(embed_dim),
            ln_offset: Array1::zeros(embed_dim),
        }
    }

    pub fn heads(&self) -> usize {
        self.query.dim().0
    }

    pub fn head_dim(&self) -> usize {
        self.query.dim().2
    }

    pub fn embed_dim(&self) -> usize {
        self.ln_scale.len()
    }

    fn check(&self) -> Result<()> {
        let (m, b, bj) = self.query.dim();
        let ok = self.key.dim() == (m, b, bj)
            && self.value.dim() == (m, b, bj)
            && self.output.dim() == (m * bj, b)
            && self.ln_scale.len() == b
            && self.ln_offset.len() == b;
        if !ok {
            return Err(Error::Shape("inconsistent attention weight shapes".into()));
        }
        Ok(())
    }
}

/// Intermediates of one group's attention pass.
#[derive(Debug, Clone)]
pub struct AttentionTape {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    normed: Array2<f64>,
    q: Vec<Array2<f64>>,
    k: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    /// Row-stochastic attention matrix per head.
    pub maps: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    a
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// `S + concat_j(softmax(Q_j K_jᵀ / √b_j) V_j) W^O` with `Q_j = LN(S) W_j^Q`
/// and likewise for K and V. Layer norm is computed once and shared by heads.
pub fn attention_forward(
    s: &Array2<f64>,
    w: &AttentionWeights,
    class_id: usize,
) -> Result<(Array2<f64>, AttentionTape)> {
    w.check()?;
    if s.ncols() != w.embed_dim() {
        return Err(Error::Shape(format!(
            "group rows have {} features, attention expects {}",
            s.ncols(),
            w.embed_dim()
        )));
    }
    let mean = s.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = s - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
    let normed = &xhat * &w.ln_scale + &w.ln_offset;

    let (m, _, bj) = w.query.dim();
    let scale = 1.0 / (bj as f64).sqrt();
    let mut concat = Array2::zeros((s.nrows(), m * bj));
    let (mut qs, mut ks, mut vs, mut maps) = (vec![], vec![], vec![], vec![]);
    for j in 0..m {
        let q = normed.dot(&w.query.index_axis(Axis(0), j));
        let k = normed.dot(&w.key.index_axis(Axis(0), j));
        let v = normed.dot(&w.value.index_axis(Axis(0), j));
        let a = softmax_rows(q.dot(&k.t()) * scale);
        let o = a.dot(&v);
        if !all_finite(&a) || !all_finite(&o) {
            return Err(Error::NonFiniteAttention { class_id, head: j });
        }
        concat.slice_mut(s![.., j * bj..(j + 1) * bj]).assign(&o);
        qs.push(q);
        ks.push(k);
        vs.push(v);
        maps.push(a);
    }
    let out = s + &concat.dot(&w.output);
    Ok((
        out,
        AttentionTape {
            xhat,
            inv_std,
            normed,
            q: qs,
            k: ks,
            v: vs,
            maps,
            concat,
        },
    ))
}

/// Applies class attention to one group.
pub fn class_attention(group: &ClassGroup, weights: &AttentionWeights) -> Result<ClassGroup> {
    let (rows, _) = attention_forward(&group.rows, weights, group.class_id)?;
    Ok(ClassGroup {
        class_id: group.class_id,
        rows,
        source_indices: group.source_indices.clone(),
    })
}

/// Gradients of the attention weights, in [`AttentionWeights`] field order.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub query: Array3<f64>,
    pub key: Array3<f64>,
    pub value: Array3<f64>,
    pub output: Array2<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_offset: Array1<f64>,
}

impl AttentionGrads {
    fn zeros(w: &AttentionWeights) -> Self {
        Self {
            query: Array3::zeros(w.query.dim()),
            key: Array3::zeros(w.key.dim()),
            value: Array3::zeros(w.value.dim()),
            output: Array2::zeros(w.output.dim()),
            ln_scale: Array1::zeros(w.ln_scale.len()),
            ln_offset: Array1::zeros(w.ln_offset.len()),
        }
    }
}

/// Accumulates weight gradients into `acc` and returns the gradient with
/// respect to the group rows.
pub fn attention_backward(
    tape: &AttentionTape,
    w: &AttentionWeights,
    grad_out: &Array2<f64>,
    acc: &mut AttentionGrads,
) -> Array2<f64> {
    let (m, _, bj) = w.query.dim();
    let scale = 1.0 / (bj as f64).sqrt();
    acc.output += &tape.concat.t().dot(grad_out);
    let d_concat = grad_out.dot(&w.output.t());
    let mut d_normed = Array2::<f64>::zeros(tape.normed.dim());
    for j in 0..m {
        let d_o = d_concat.slice(s![.., j * bj..(j + 1) * bj]);
        let a = &tape.maps[j];
        let d_a = d_o.dot(&tape.v[j].t());
        let d_v = a.t().dot(&d_o);
        let dot = (&d_a * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = a * &(&d_a - &dot) * scale;
        let d_q = d_scores.dot(&tape.k[j]);
        let d_k = d_scores.t().dot(&tape.q[j]);
        let mut gq = acc.query.index_axis_mut(Axis(0), j);
        gq += &tape.normed.t().dot(&d_q);
        let mut gk = acc.key.index_axis_mut(Axis(0), j);
        gk += &tape.normed.t().dot(&d_k);
        let mut gv = acc.value.index_axis_mut(Axis(0), j);
        gv += &tape.normed.t().dot(&d_v);
        d_normed += &d_q.dot(&w.query.index_axis(Axis(0), j).t());
        d_normed += &d_k.dot(&w.key.index_axis(Axis(0), j).t());
        d_normed += &d_v.dot(&w.value.index_axis(Axis(0), j).t());
    }
    acc.ln_scale += &(&d_normed * &tape.xhat).sum_axis(Axis(0));
    acc.ln_offset += &d_normed.sum_axis(Axis(0));
    let d_xhat = &d_normed * &w.ln_scale;
    let mean_d = d_xhat.mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1));
    let mean_dx = (&d_xhat * &tape.xhat)
        .mean_axis(Axis(1))
        .expect("non-empty")
        .insert_axis(Axis(1));
    let d_s = (&d_xhat - &mean_d - &(&tape.xhat * &mean_dx)) * &tape.inv_std.view().insert_axis(Axis(1));
    grad_out + &d_s
}

/// Puts groups back in batch order and ℓ2-normalizes every row.
pub fn assemble_normalize(
    natural: &[ClassGroup],
    adversarial: &[ClassGroup],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let same_layout = natural.len() == adversarial.len()
        && natural
            .iter()
            .zip(adversarial)
            .all(|(a, b)| a.source_indices == b.source_indices);
    if !same_layout {
        return Err(Error::Shape("natural and adversarial groupings differ".into()));
    }
    let t = normalize_rows(&ungroup(natural)?)?.0;
    let t_adv = normalize_rows(&ungroup(adversarial)?)?.0;
    Ok((t, t_adv))
}

fn normalize_rows(u: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, n)| !(**n >= MIN_NORM)) {
        return Err(Error::DegenerateEmbedding { row, norm });
    }
    Ok((u / &norms.view().insert_axis(Axis(1)), norms))
}

/// Linear projection plus class attention; owns all embedding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    config: EmbeddingConfig,
    pub linear: Linear,
    pub attention: AttentionWeights,
}

/// Everything needed to backpropagate one batch (natural or adversarial).
#[derive(Debug, Clone)]
pub struct PathTape {
    z: Array2<f64>,
    groups: Vec<(Vec<usize>, AttentionTape)>,
    t: Array2<f64>,
    norms: Array1<f64>,
}

impl EmbeddingSpace {
    pub fn new(config: EmbeddingConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            linear: Linear::init(config.encoder_dim, config.embed_dim, rng),
            attention: AttentionWeights::init(config.embed_dim, config.heads, rng),
        })
    }

    pub fn config(&self) -> EmbeddingConfig {
        self.config
    }

    /// The linear projection `L_e`.
    pub fn embed_linear(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.config.encoder_dim {
            return Err(Error::Shape(format!(
                "features have {} columns, embedding expects {}",
                z.ncols(),
                self.config.encoder_dim
            )));
        }
        Ok(self.linear.forward(z))
    }

    /// Maps one batch of encoder features to unit-norm embedded features.
    pub fn forward_path(&self, z: &Array2<f64>, y: &[usize]) -> Result<(Array2<f64>, PathTape)> {
        let projected = self.embed_linear(z)?;
        let groups = group_by_class(&projected, y)?;
        let mut refined = Vec::with_capacity(groups.len());
        let mut tapes = Vec::with_capacity(groups.len());
        for g in groups {
            let (rows, tape) = attention_forward(&g.rows, &self.attention, g.class_id)?;
            tapes.push((g.source_indices.clone(), tape));
            refined.push(ClassGroup { rows, ..g });
        }
        let (t, norms) = normalize_rows(&ungroup(&refined)?)?;
        let tape = PathTape {
            z: z.clone(),
            groups: tapes,
            t: t.clone(),
            norms,
        };
        Ok((t, tape))
    }

    pub fn forward(&self, z: &Array2<f64>, y: &[usize]) -> Result<Array2<f64>> {
        self.forward_path(z, y).map(|(t, _)| t)
    }

    /// Accumulates parameter gradients into `acc` (ordered as
    /// [`Parameterized::param_names`]) and returns `∂/∂z`.
    pub fn backward_path(&self, tape: &PathTape, grad_t: &Array2<f64>, acc: &mut Gradients) -> Array2<f64> {
        let dot = (&tape.t * grad_t).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_u = (grad_t - &(&tape.t * &dot)) / &tape.norms.view().insert_axis(Axis(1));
        let mut d_proj = Array2::zeros(d_u.dim());
        let mut attn = AttentionGrads::zeros(&self.attention);
        for (indices, gtape) in &tape.groups {
            let g_rows = d_u.select(Axis(0), indices);
            let d_rows = attention_backward(gtape, &self.attention, &g_rows, &mut attn);
            for (r, &i) in indices.iter().enumerate() {
                d_proj.row_mut(i).assign(&d_rows.row(r));
            }
        }
        let (dw, db, dz) = self.linear.backward(&tape.z, &d_proj);
        let parts: [&[f64]; 8] = [
            dw.as_slice().expect("contiguous"),
            db.as_slice().expect("contiguous"),
            attn.query.as_slice().expect("contiguous"),
            attn.key.as_slice().expect("contiguous"),
            attn.value.as_slice().expect("contiguous"),
            attn.output.as_slice().expect("contiguous"),
            attn.ln_scale.as_slice().expect("contiguous"),
            attn.ln_offset.as_slice().expect("contiguous"),
        ];
        for (dst, src) in acc.0.iter_mut().zip(parts) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        dz
    }
}

impl Parameterized for EmbeddingSpace {
    fn param_names(&self) -> Vec<String> {
        [
            "linear.weight",
            "linear.bias",
            "attention.query",
            "attention.key",
            "attention.value",
            "attention.output",
            "attention.ln_scale",
            "attention.ln_offset",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let a = &self.attention;
        vec![
            self.linear.weight.shape().to_vec(),
            self.linear.bias.shape().to_vec(),
            a.query.shape().to_vec(),
            a.key.shape().to_vec(),
            a.value.shape().to_vec(),
            a.output.shape().to_vec(),
            a.ln_scale.shape().to_vec(),
            a.ln_offset.shape().to_vec(),
        ]
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let a = &self.attention;
        vec![
            self.linear.weight.as_slice().expect("contiguous"),
            self.linear.bias.as_slice().expect("contiguous"),
            a.query.as_slice().expect("contiguous"),
            a.key.as_slice().expect("contiguous"),
            a.value.as_slice().expect("contiguous"),
            a.output.as_slice().expect("contiguous"),
            a.ln_scale.as_slice().expect("contiguous"),
            a.ln_offset.as_slice().expect("contiguous"),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let a = &mut self.attention;
        vec![
            self.linear.weight.as_slice_mut().expect("contiguous"),
            self.linear.bias.as_slice_mut().expect("contiguous"),
            a.query.as_slice_mut().expect("contiguous"),
            a.key.as_slice_mut().expect("contiguous"),
            a.value.as_slice_mut().expect("contiguous"),
            a.output.as_slice_mut().expect("contiguous"),
            a.ln_scale.as_slice_mut().expect("contiguous"),
            a.ln_offset.as_slice_mut().expect("contiguous"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};

    fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn rng(k: u64) -> Rng {
        crate::seed::rng(k, "embedding-test", 0, 0)
    }

    fn random(rows: usize, cols: usize, k: u64) -> Array2<f64> {
        let mut r = rng(k);
        Array::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    /// Step-by-step loops over Algorithm-style per-head attention.
    fn oracle(s: &Array2<f64>, w: &AttentionWeights) -> Array2<f64> {
        let (n, b) = s.dim();
        let (m, _, bj) = w.query.dim();
        let mut out = s.clone();
        let mut ln = vec![vec![0.0; b]; n];
        for i in 0..n {
            let mu: f64 = (0..b).map(|f| s[[i, f]]).sum::<f64>() / b as f64;
            let var: f64 = (0..b).map(|f| (s[[i, f]] - mu).powi(2)).sum::<f64>() / b as f64;
            for f in 0..b {
                ln[i][f] = (s[[i, f]] - mu) / (var + 1e-5).sqrt() * w.ln_scale[f] + w.ln_offset[f];
            }
        }
        let mut concat = vec![vec![0.0; m * bj]; n];
        for j in 0..m {
            let proj = |mat: &Array3<f64>, i: usize, c: usize| (0..b).map(|f| ln[i][f] * mat[[j, f, c]]).sum::<f64>();
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|r| (0..bj).map(|c| proj(&w.query, i, c) * proj(&w.key, r, c)).sum::<f64>() / (bj as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..bj {
                    concat[i][j * bj + c] = (0..n).map(|r| e[r] / z * proj(&w.value, r, c)).sum();
                }
            }
        }
        for i in 0..n {
            for f in 0..b {
                out[[i, f]] += (0..m * bj).map(|c| concat[i][c] * w.output[[c, f]]).sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn config_requires_divisible_heads() {
        assert!(EmbeddingConfig::new(16, 8, 3).is_err());
        assert!(EmbeddingConfig::new(16, 8, 0).is_err());
        assert_eq!(EmbeddingConfig::new(16, 128, 2).unwrap().head_dim(), 64);
    }

    #[test]
    fn grouping_example() {
        let s = random(4, 3, 1);
        let groups = group_by_class(&s, &[2, 0, 2, 1]).unwrap();
        let ids: Vec<usize> = groups.iter().map(|g| g.class_id).collect();
        assert_eq!(ids, [0, 1, 2]);
        let idx: Vec<Vec<usize>> = groups.iter().map(|g| g.source_indices.clone()).collect();
        assert_eq!(idx, vec![vec![1], vec![3], vec![0, 2]]);
        assert_eq!(ungroup(&groups).unwrap(), s);
        assert_eq!(group_by_class(&s, &[5; 4]).unwrap().len(), 1);
    }

    #[test]
    fn linear_embedding_examples() {
        let cfg = EmbeddingConfig::new(3, 3, 1).unwrap();
        let mut e = EmbeddingSpace::new(cfg, &mut rng(2)).unwrap();
        e.linear.weight = Array2::eye(3);
        e.linear.bias = Array1::from(vec![0.5, -1.0, 2.0]);
        let z = random(2, 3, 3);
        assert_eq!(e.embed_linear(&z).unwrap(), &z + &e.linear.bias);
        e.linear = Linear::zeros(3, 3);
        assert!(e.embed_linear(&z).unwrap().iter().all(|v| *v == 0.0));
        assert!(e.embed_linear(&random(2, 4, 3)).is_err());
    }

    #[test]
    fn attention_matches_loop_oracle() {
        let w = AttentionWeights::init(4, 2, &mut rng(4));
        let s = random(3, 4, 5);
        let (out, _) = attention_forward(&s, &w, 0).unwrap();
        assert!(max_diff(&out, &oracle(&s, &w)) < 1e-12);
    }

    #[test]
    fn singleton_attention_is_one() {
        let w = AttentionWeights::init(8, 2, &mut rng(6));
        let (_, tape) = attention_forward(&random(1, 8, 7), &w, 3).unwrap();
        for a in &tape.maps {
            assert_eq!(a, &arr2(&[[1.0]]));
        }
    }

    #[test]
    fn attention_rows_sum_to_one_and_permute() {
        let w = AttentionWeights::init(8, 2, &mut rng(8));
        let s = random(5, 8, 9);
        let (out, tape) = attention_forward(&s, &w, 0).unwrap();
        for a in &tape.maps {
            for r in a.sum_axis(Axis(1)) {
                assert!((r - 1.0).abs() < 1e-12);
            }
        }
        let perm = [4, 2, 0, 3, 1];
        let (out_p, _) = attention_forward(&s.select(Axis(0), &perm), &w, 0).unwrap();
        assert!(max_diff(&out_p, &out.select(Axis(0), &perm)) < 1e-10);
    }

    #[test]
    fn non_finite_input_names_head() {
        let w = AttentionWeights::init(4, 2, &mut rng(10));
        let mut s = random(2, 4, 11);
        s[[0, 0]] = f64::NAN;
        assert!(matches!(
            attention_forward(&s, &w, 7),
            Err(Error::NonFiniteAttention { class_id: 7, head: 0 })
        ));
    }

    #[test]
    fn normalization_examples() {
        let g = |rows: Array2<f64>| ClassGroup {
            class_id: 0,
            source_indices: (0..rows.nrows()).collect(),
            rows,
        };
        let u = arr2(&[[3.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        let (t, ta) = assemble_normalize(&[g(u.clone())], &[g(u)]).unwrap();
        assert!(max_diff(&t, &arr2(&[[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]])) < 1e-15);
        assert_eq!(t, ta);
        let zero = arr2(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            assemble_normalize(&[g(zero.clone())], &[g(zero)]),
            Err(Error::DegenerateEmbedding { row: 0, .. })
        ));
    }

    #[test]
    fn path_gradients_match_finite_differences() {
        let cfg = EmbeddingConfig::new(5, 4, 2).unwrap();
        let mut e = EmbeddingSpace::new(cfg, &mut rng(12)).unwrap();
        e.attention.ln_scale = Array1::from(vec![1.1, 0.9, 1.3, 0.7]);
        e.attention.ln_offset = Array1::from(vec![0.1, -0.2, 0.05, 0.0]);
        let z = random(5, 5, 13);
        let y = [1, 0, 1, 1, 2];
        let probe = random(5, 4, 14);
        let loss = |e: &EmbeddingSpace, z: &Array2<f64>| (e.forward(z, &y).unwrap() * &probe).sum();

        let (_, tape) = e.forward_path(&z, &y).unwrap();
        let mut grads = Gradients::zeros_like(&e);
        let dz = e.backward_path(&tape, &probe, &mut grads);

        let h = 1e-6;
        let check = |a: f64, n: f64| assert!((a - n).abs() <= 1e-6 * (1.0 + n.abs()), "{a} vs {n}");
        for idx in ndarray::indices(z.dim()) {
            let (mut up, mut down) = (z.clone(), z.clone());
            up[idx] += h;
            down[idx] -= h;
            check(dz[idx], (loss(&e, &up) - loss(&e, &down)) / (2.0 * h));
        }
        for p in 0..grads.0.len() {
            for k in 0..grads.0[p].len() {
                let mut up = e.clone();
                up.param_slices_mut()[p][k] += h;
                let mut down = e.clone();
                down.param_slices_mut()[p][k] -= h;
                check(grads.0[p][k], (loss(&up, &z) - loss(&down, &z)) / (2.0 * h));
            }
        }
    }
}
