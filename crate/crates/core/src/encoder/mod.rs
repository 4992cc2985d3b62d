//! Feed-forward encoder producing (semantic, uncertainty) embedding pairs.
//!
//! A ReLU trunk feeds two linear heads. The semantic head may be followed by
//! L2 normalization. Gradients are computed by an explicit reverse pass over
//! a recorded forward trace.

mod checkpoint;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::loss::{EmbeddingGrads, ProxyBank};
use crate::metric::{norm, PairedEmbedding};

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use optim::{adamw_step, OptimState, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub d_s: usize,
    pub d_u: usize,
    pub activation: Activation,
    pub normalize_semantic: bool,
    pub init_seed: u64,
    /// Scale of the uncertainty head's initial weights relative to
    /// He-uniform; 0 starts the head at exactly zero.
    pub uncertainty_init_scale: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden_dims: vec![64],
            d_s: 32,
            d_u: 32,
            activation: Activation::Relu,
            normalize_semantic: false,
            init_seed: 0,
            uncertainty_init_scale: 0.1,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.d_s, self.d_u]
            .into_iter()
            .chain(self.hidden_dims.iter().copied());
        for d in dims {
            if d == 0 {
                return Err(Error::InvalidParameter(
                    "encoder dimensions must be >= 1".into(),
                ));
            }
        }
        if !(self.uncertainty_init_scale >= 0.0 && self.uncertainty_init_scale.is_finite()) {
            return Err(Error::InvalidParameter(
                "uncertainty_init_scale must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// `(out, in)` of every dense layer: trunk, semantic head, uncertainty head.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, width));
            width = h;
        }
        shapes.push((self.d_s, width));
        shapes.push((self.d_u, width));
        shapes
    }

    pub fn n_parameters(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// A named parameter tensor, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Frozen tensors are skipped by the optimizer.
    #[serde(default)]
    pub frozen: bool,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
            frozen: false,
        }
    }
}

/// All trainable tensors in declaration order: trunk layers, semantic head,
/// uncertainty head, then proxies when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat view of the `k`-th value across all tensors.
    pub fn value_mut(&mut self, mut k: usize) -> &mut f64 {
        for t in &mut self.tensors {
            if k < t.data.len() {
                return &mut t.data[k];
            }
            k -= t.data.len();
        }
        panic!("parameter index out of range");
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Appends proxy tensors for `bank`.
    pub fn attach_proxies(&mut self, bank: &ProxyBank) {
        let k = bank.len();
        let (d_s, d_u) = bank
            .proxies
            .first()
            .map(|p| (p.semantic.len(), p.uncertainty.len()))
            .unwrap_or((0, 0));
        self.tensors.push(Tensor {
            name: PROXY_SEMANTIC.into(),
            shape: vec![k, d_s],
            data: bank.proxies.iter().flat_map(|p| p.semantic.clone()).collect(),
            frozen: false,
        });
        self.tensors.push(Tensor {
            name: PROXY_UNCERTAINTY.into(),
            shape: vec![k, d_u],
            data: bank.proxies.iter().flat_map(|p| p.uncertainty.clone()).collect(),
            frozen: false,
        });
    }

    /// Rebuilds the proxy bank from the stored tensors.
    pub fn proxies(&self, labels: &[u32]) -> Result<Option<ProxyBank>> {
        let (Some(s), Some(u)) = (self.get(PROXY_SEMANTIC), self.get(PROXY_UNCERTAINTY)) else {
            return Ok(None);
        };
        check_dim("proxy labels", s.shape[0], labels.len())?;
        let proxies = s
            .data
            .chunks(s.shape[1])
            .zip(u.data.chunks(u.shape[1]))
            .map(|(a, b)| PairedEmbedding::new(a.to_vec(), b.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        ProxyBank::new(proxies, labels.to_vec()).map(Some)
    }

    /// Writes proxy gradients into the proxy tensors of `self`.
    pub fn set_proxy_grads(&mut self, grads: &EmbeddingGrads) -> Result<()> {
        for (name, rows) in [
            (PROXY_SEMANTIC, &grads.semantic),
            (PROXY_UNCERTAINTY, &grads.uncertainty),
        ] {
            let t = self
                .get_mut(name)
                .ok_or_else(|| Error::InvalidParameter("no proxy tensors in store".into()))?;
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            check_dim("proxy gradient", t.data.len(), flat.len())?;
            t.data = flat;
        }
        Ok(())
    }

    /// Marks the uncertainty head as frozen (or trainable).
    pub fn freeze_uncertainty_head(&mut self, frozen: bool) {
        for t in &mut self.tensors {
            if t.name.starts_with("uncertainty.") {
                t.frozen = frozen;
            }
        }
    }
}

pub const PROXY_SEMANTIC: &str = "proxies.semantic";
pub const PROXY_UNCERTAINTY: &str = "proxies.uncertainty";

fn layer_names(spec: &EncoderSpec) -> Vec<String> {
    let mut names: Vec<String> = (0..spec.hidden_dims.len())
        .map(|l| format!("trunk.{l}"))
        .collect();
    names.push("semantic".into());
    names.push("uncertainty".into());
    names
}

/// Fresh parameters: He-uniform trunk and semantic head, zero biases, and an
/// uncertainty head scaled by `uncertainty_init_scale`.
pub fn init_params(spec: &EncoderSpec) -> Result<ParamStore> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let shapes = spec.layer_shapes();
    let names = layer_names(spec);
    let mut tensors = Vec::new();
    for (l, ((out, inp), name)) in shapes.iter().zip(&names).enumerate() {
        let bound = (6.0 / *inp as f64).sqrt();
        let scale = if l == shapes.len() - 1 {
            spec.uncertainty_init_scale
        } else {
            1.0
        };
        let mut w = Tensor::zeros(format!("{name}.weight"), vec![*out, *inp]);
        for v in &mut w.data {
            *v = scale * rng.random_range(-bound..bound);
        }
        tensors.push(w);
        tensors.push(Tensor::zeros(format!("{name}.bias"), vec![*out]));
    }
    Ok(ParamStore { tensors })
}

/// Proxy bank with one proxy per class: random unit semantic directions and
/// zero uncertainty.
pub fn init_proxies(classes: &[u32], d_s: usize, d_u: usize, seed: u64) -> Result<ProxyBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proxies = classes
        .iter()
        .map(|_| {
            let mut s: Vec<f64> = (0..d_s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = norm(&s).max(1e-12);
            s.iter_mut().for_each(|v| *v /= n);
            PairedEmbedding::new(s, vec![0.0; d_u])
        })
        .collect::<Result<Vec<_>>>()?;
    ProxyBank::new(proxies, classes.to_vec())
}

fn dense(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let inp = w.shape[1];
    w.data
        .chunks(inp)
        .zip(&b.data)
        .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Activations recorded for one sample.
#[derive(Debug, Clone, PartialEq)]
struct SampleTrace {
    /// Inputs to each trunk layer, then the trunk output.
    inputs: Vec<Vec<f64>>,
    /// Trunk pre-activations.
    pre: Vec<Vec<f64>>,
    /// Semantic head output before normalization.
    semantic_raw: Vec<f64>,
}

/// Forward trace for a batch, consumed by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<SampleTrace>,
    outputs: Vec<PairedEmbedding>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Smallest |pre-activation| of any trunk unit; the network is linear in
    /// its parameters' neighbourhood within this margin.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.pre.iter().flatten())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Smallest norm of a semantic head output before normalization.
    pub fn min_semantic_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| norm(&s.semantic_raw))
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_params(spec: &EncoderSpec, params: &ParamStore) -> Result<()> {
    let shapes = spec.layer_shapes();
    if params.tensors.len() < 2 * shapes.len() {
        return Err(Error::InvalidParameter(
            "parameter store does not match encoder spec".into(),
        ));
    }
    for (l, (out, inp)) in shapes.iter().enumerate() {
        let (w, b) = (&params.tensors[2 * l], &params.tensors[2 * l + 1]);
        if w.shape != [*out, *inp] || b.shape != [*out] {
            return Err(Error::InvalidParameter(format!(
                "tensor {} has shape {:?}, expected [{out}, {inp}]",
                w.name, w.shape
            )));
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("encoder parameters".into()));
    }
    Ok(())
}

fn forward_one(spec: &EncoderSpec, params: &ParamStore, x: &[f64]) -> Result<(PairedEmbedding, SampleTrace)> {
    check_dim("encoder input", spec.input_dim, x.len())?;
    let n_trunk = spec.hidden_dims.len();
    let mut inputs = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(n_trunk);
    for l in 0..n_trunk {
        let z = dense(&params.tensors[2 * l], &params.tensors[2 * l + 1], &inputs[l]);
        inputs.push(z.iter().map(|v| v.max(0.0)).collect());
        pre.push(z);
    }
    let h = &inputs[n_trunk];
    let semantic_raw = dense(&params.tensors[2 * n_trunk], &params.tensors[2 * n_trunk + 1], h);
    let uncertainty = dense(
        &params.tensors[2 * n_trunk + 2],
        &params.tensors[2 * n_trunk + 3],
        h,
    );
    let semantic = if spec.normalize_semantic {
        let n = norm(&semantic_raw);
        if n == 0.0 {
            return Err(Error::NonFinite("zero semantic vector under normalization".into()));
        }
        semantic_raw.iter().map(|v| v / n).collect()
    } else {
        semantic_raw.clone()
    };
    let emb = PairedEmbedding::new(semantic, uncertainty)?;
    Ok((
        emb,
        SampleTrace {
            inputs,
            pre,
            semantic_raw,
        },
    ))
}

/// Embeds one feature vector.
pub fn forward(spec: &EncoderSpec, params: &ParamStore, x: &[f64]) -> Result<PairedEmbedding> {
    check_params(spec, params)?;
    Ok(forward_one(spec, params, x)?.0)
}

/// Embeds a batch and records the trace needed by [`backward`].
pub fn forward_batch(
    spec: &EncoderSpec,
    params: &ParamStore,
    xs: &[Vec<f64>],
) -> Result<(Vec<PairedEmbedding>, Trace)> {
    check_params(spec, params)?;
    let mut outputs = Vec::with_capacity(xs.len());
    let mut samples = Vec::with_capacity(xs.len());
    for x in xs {
        let (e, t) = forward_one(spec, params, x)?;
        outputs.push(e);
        samples.push(t);
    }
    Ok((outputs.clone(), Trace { samples, outputs }))
}

fn accumulate_dense(
    w: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
    input: &[f64],
    g_out: &[f64],
    g_in: &mut [f64],
) {
    let inp = w.shape[1];
    for (o, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb.data[o] += g;
        let row = &w.data[o * inp..(o + 1) * inp];
        let grow = &mut gw.data[o * inp..(o + 1) * inp];
        for k in 0..inp {
            grow[k] += g * input[k];
            g_in[k] += g * row[k];
        }
    }
}

/// Parameter gradients for upstream gradients with respect to the
/// embeddings of a traced batch. The result holds only encoder tensors.
pub fn backward(
    spec: &EncoderSpec,
    params: &ParamStore,
    trace: &Trace,
    upstream: &EmbeddingGrads,
) -> Result<ParamStore> {
    check_params(spec, params)?;
    if upstream.semantic.len() != trace.len() || upstream.uncertainty.len() != trace.len() {
        return Err(Error::DimensionMismatch {
            context: "backward upstream gradients",
            expected: trace.len(),
            found: upstream.semantic.len(),
        });
    }
    let n_trunk = spec.hidden_dims.len();
    let n_enc = 2 * (n_trunk + 2);
    let mut grads = ParamStore {
        tensors: params.tensors[..n_enc]
            .iter()
            .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
            .collect(),
    };

    for (i, st) in trace.samples.iter().enumerate() {
        let g_s = &upstream.semantic[i];
        let g_u = &upstream.uncertainty[i];
        check_dim("semantic gradient", spec.d_s, g_s.len())?;
        check_dim("uncertainty gradient", spec.d_u, g_u.len())?;

        let g_raw: Vec<f64> = if spec.normalize_semantic {
            // d(v/|v|) = (I - s s^T) / |v|
            let s = &trace.outputs[i].semantic;
            let n = norm(&st.semantic_raw);
            let proj: f64 = s.iter().zip(g_s).map(|(a, b)| a * b).sum();
            g_s.iter().zip(s).map(|(g, sv)| (g - sv * proj) / n).collect()
        } else {
            g_s.clone()
        };

        let h = &st.inputs[n_trunk];
        let mut g_h = vec![0.0; spec.trunk_width()];
        let rest = &mut grads.tensors[2 * n_trunk..];
        let (gw_s, rest) = rest.split_first_mut().expect("semantic weight");
        let (gb_s, rest) = rest.split_first_mut().expect("semantic bias");
        let (gw_u, rest) = rest.split_first_mut().expect("uncertainty weight");
        let gb_u = &mut rest[0];
        accumulate_dense(&params.tensors[2 * n_trunk], gw_s, gb_s, h, &g_raw, &mut g_h);
        accumulate_dense(&params.tensors[2 * n_trunk + 2], gw_u, gb_u, h, g_u, &mut g_h);

        for l in (0..n_trunk).rev() {
            let g_z: Vec<f64> = g_h
                .iter()
                .zip(&st.pre[l])
                .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
                .collect();
            let mut g_in = vec![0.0; st.inputs[l].len()];
            let (lo, hi) = grads.tensors.split_at_mut(2 * l + 1);
            accumulate_dense(
                &params.tensors[2 * l],
                &mut lo[2 * l],
                &mut hi[0],
                &st.inputs[l],
                &g_z,
                &mut g_in,
            );
            g_h = g_in;
        }
    }
    Ok(grads)
}
