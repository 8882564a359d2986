//! The neural language model: embeddings, the three context architectures,
//! the document merge operation and the hierarchical softmax output.
//!
//! All probabilities are handled in log space; the path product of the
//! hierarchical softmax underflows otherwise.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::io;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y += A x
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (row, yi) in self.data.chunks_exact(self.cols).zip(y.iter_mut()) {
            *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_acc(x, &mut y);
        y
    }

    /// A^T y
    pub fn t_matvec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (xj, a) in x.iter_mut().zip(row) {
                *xj += a * yi;
            }
        }
        x
    }

    /// A += scale * y x^T
    pub fn add_outer(&mut self, y: &[f64], x: &[f64], scale: f64) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        let cols = self.cols;
        for (row, &yi) in self.data.chunks_exact_mut(cols).zip(y) {
            let s = yi * scale;
            for (a, xj) in row.iter_mut().zip(x) {
                *a += s * xj;
            }
        }
    }
}

/// Context architecture of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// linear(m1) - tanh
    M1,
    /// linear(m1) - tanh - linear(m2) - tanh
    M2,
    /// linear(kappa*m1) - max(kappa) - linear(m2) - tanh
    M2Max,
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::M1 => "M1",
            Arch::M2 => "M2",
            Arch::M2Max => "M2Max",
        }
    }

    pub fn parse(s: &str) -> Result<Arch> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Arch::M1),
            "m2" => Ok(Arch::M2),
            "m2max" => Ok(Arch::M2Max),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture {s:?} (expected M1, M2 or M2Max)"
            ))),
        }
    }
}

/// Model dimensions. `n` is the model order: the context is the `n - 1`
/// previous terms, left-padded with the padding id at document start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuralConfig {
    pub arch: Arch,
    pub n: usize,
    pub m0: usize,
    pub m1: usize,
    pub m2: usize,
    pub kappa: usize,
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m0 < 1 || self.m1 < 1 || self.m2 < 1 || self.kappa < 1 {
            return Err(Error::InvalidArgument(format!(
                "invalid model dimensions: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn context_len(&self) -> usize {
        self.n - 1
    }

    /// Dimension of the state vector produced by the context network.
    pub fn state_dim(&self) -> usize {
        match self.arch {
            Arch::M1 => self.m1,
            Arch::M2 | Arch::M2Max => self.m2,
        }
    }

    /// Width of the first linear layer.
    pub fn l1_dim(&self) -> usize {
        match self.arch {
            Arch::M1 | Arch::M2 => self.m1,
            Arch::M2Max => self.kappa * self.m1,
        }
    }

    /// Weight count of the context network (biases not counted, matching
    /// the usual reporting convention).
    pub fn phi_param_count(&self) -> u64 {
        let ctx = (self.n - 1) as u64;
        let (m0, m1, m2, kappa) = (
            self.m0 as u64,
            self.m1 as u64,
            self.m2 as u64,
            self.kappa as u64,
        );
        match self.arch {
            Arch::M1 => ctx * m0 * m1,
            Arch::M2 => ctx * m0 * m1 + m1 * m2,
            Arch::M2Max => ctx * kappa * m0 * m1 + m1 * m2,
        }
    }

    /// Word-embedding plus hierarchical-softmax weight count for a
    /// vocabulary of `vocab_size` words (excluding the padding row).
    pub fn word_hsm_param_count(&self, vocab_size: u64) -> u64 {
        vocab_size * self.m0 as u64 + (vocab_size - 1) * self.state_dim() as u64
    }
}

/// All trainable parameters of the model.
///
/// The embedding matrix has `vocab_size + 1` rows; the last row is the
/// padding term's embedding. The hierarchical softmax has one vector per
/// inner node of the Huffman tree, i.e. `vocab_size - 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralParams {
    pub config: NeuralConfig,
    pub embeddings: Mat,
    pub a: Vec<Mat>,
    pub bias: Vec<f64>,
    pub b: Option<Mat>,
    pub hsm: Mat,
}

impl NeuralParams {
    /// Random initialization: every layer uniform in +/- 1/sqrt(fan_in),
    /// hierarchical softmax vectors zero (which yields the tree-induced
    /// distribution 2^-depth as the starting point).
    pub fn init(config: NeuralConfig, vocab_size: usize, seed: u64) -> Result<NeuralParams> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Data(format!(
                "vocabulary of size {vocab_size} is too small for a model"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut uniform = |mat: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in mat {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let mut embeddings = Mat::zeros(vocab_size + 1, config.m0);
        uniform(&mut embeddings.data, config.m0);
        let ctx = config.context_len();
        let l1 = config.l1_dim();
        let fan_in_l1 = ctx * config.m0;
        let mut a = Vec::with_capacity(ctx);
        for _ in 0..ctx {
            let mut m = Mat::zeros(l1, config.m0);
            uniform(&mut m.data, fan_in_l1);
            a.push(m);
        }
        let mut bias = vec![0.0; l1];
        uniform(&mut bias, fan_in_l1);
        let b = match config.arch {
            Arch::M1 => None,
            Arch::M2 | Arch::M2Max => {
                let mut m = Mat::zeros(config.m2, config.m1);
                uniform(&mut m.data, config.m1);
                Some(m)
            }
        };
        let hsm = Mat::zeros(vocab_size - 1, config.state_dim());
        Ok(NeuralParams {
            config,
            embeddings,
            a,
            bias,
            b,
            hsm,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows - 1
    }

    pub fn padding_id(&self) -> u32 {
        self.vocab_size() as u32
    }

    /// Named views over every parameter tensor, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        out.push(("embeddings".into(), &mut self.embeddings.data));
        for (j, m) in self.a.iter_mut().enumerate() {
            out.push((format!("a{j}"), &mut m.data));
        }
        out.push(("bias".into(), &mut self.bias));
        if let Some(b) = &mut self.b {
            out.push(("b".into(), &mut b.data));
        }
        out.push(("hsm".into(), &mut self.hsm.data));
        out
    }

    pub fn assert_finite(&self) -> Result<()> {
        let all_finite = self.embeddings.data.iter().all(|v| v.is_finite())
            && self.a.iter().all(|m| m.data.iter().all(|v| v.is_finite()))
            && self.bias.iter().all(|v| v.is_finite())
            && self
                .b
                .as_ref()
                .is_none_or(|m| m.data.iter().all(|v| v.is_finite()))
            && self.hsm.data.iter().all(|v| v.is_finite());
        if all_finite {
            Ok(())
        } else {
            Err(Error::Numerical("non-finite model parameter".into()))
        }
    }
}

/// How the state vector is combined with a document vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    Sum,
    Product,
}

impl MergeMode {
    pub fn name(&self) -> &'static str {
        match self {
            MergeMode::Sum => "sum",
            MergeMode::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Result<MergeMode> {
        match s.to_ascii_lowercase().as_str() {
            "sum" | "+" => Ok(MergeMode::Sum),
            "product" | "prod" | "*" => Ok(MergeMode::Product),
            _ => Err(Error::InvalidArgument(format!(
                "unknown merge mode {s:?} (expected sum or product)"
            ))),
        }
    }
}

/// Per-document adaptation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub mode: MergeMode,
    pub values: Vec<f64>,
}

impl DocVector {
    /// The identity element of the merge: merging with it leaves the state
    /// unchanged (0 for sum, all-ones for product).
    pub fn identity(mode: MergeMode, dim: usize) -> DocVector {
        let values = match mode {
            MergeMode::Sum => vec![0.0; dim],
            MergeMode::Product => vec![1.0; dim],
        };
        DocVector { mode, values }
    }
}

/// Merges the state vector with a document vector.
pub fn psi_merge(state: &[f64], dv: &DocVector) -> Result<Vec<f64>> {
    if state.len() != dv.values.len() {
        return Err(Error::Data(format!(
            "dimension mismatch: state {} vs document vector {}",
            state.len(),
            dv.values.len()
        )));
    }
    Ok(match dv.mode {
        MergeMode::Sum => state.iter().zip(&dv.values).map(|(s, z)| s + z).collect(),
        MergeMode::Product => state.iter().zip(&dv.values).map(|(s, z)| s * z).collect(),
    })
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PhiCache {
    pub context: Vec<u32>,
    /// First linear layer output (pre-activation).
    pub l1: Vec<f64>,
    /// M2: tanh(l1). M2Max: pooled maxima (length m1).
    pub hidden: Vec<f64>,
    /// M2Max: index into l1 of each block maximum.
    pub argmax: Vec<usize>,
    /// Final state vector (length state_dim).
    pub state: Vec<f64>,
}

/// Runs the context network over `n - 1` term ids.
pub fn phi_forward(context: &[u32], params: &NeuralParams) -> Result<PhiCache> {
    let cfg = &params.config;
    if context.len() != cfg.context_len() {
        return Err(Error::Data(format!(
            "context length {} does not match model order (expected {})",
            context.len(),
            cfg.context_len()
        )));
    }
    let mut l1 = params.bias.clone();
    for (j, &t) in context.iter().enumerate() {
        if t as usize >= params.embeddings.rows {
            return Err(Error::Data(format!("context term id {t} out of range")));
        }
        params.a[j].matvec_acc(params.embeddings.row(t as usize), &mut l1);
    }
    let (hidden, argmax, state) = match cfg.arch {
        Arch::M1 => {
            let state: Vec<f64> = l1.iter().map(|x| x.tanh()).collect();
            (Vec::new(), Vec::new(), state)
        }
        Arch::M2 => {
            let hidden: Vec<f64> = l1.iter().map(|x| x.tanh()).collect();
            let pre = params.b.as_ref().expect("M2 has B").matvec(&hidden);
            let state = pre.iter().map(|x| x.tanh()).collect();
            (hidden, Vec::new(), state)
        }
        Arch::M2Max => {
            let mut hidden = Vec::with_capacity(cfg.m1);
            let mut argmax = Vec::with_capacity(cfg.m1);
            for block in 0..cfg.m1 {
                let start = block * cfg.kappa;
                let mut best = start;
                for i in start + 1..start + cfg.kappa {
                    if l1[i] > l1[best] {
                        best = i;
                    }
                }
                hidden.push(l1[best]);
                argmax.push(best);
            }
            let pre = params.b.as_ref().expect("M2Max has B").matvec(&hidden);
            let state = pre.iter().map(|x| x.tanh()).collect();
            (hidden, argmax, state)
        }
    };
    Ok(PhiCache {
        context: context.to_vec(),
        l1,
        hidden,
        argmax,
        state,
    })
}

/// log(sigmoid(x)), stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// sigmoid(x), stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log probability of term `t` under the hierarchical softmax with input
/// vector `v`: the sum over the root-to-leaf path of log sigmoid(-b_s x_s.v).
pub fn hsm_log_prob(t: u32, v: &[f64], tree: &HuffmanTree, hsm: &Mat) -> f64 {
    let path = &tree.paths[t as usize];
    let signs = &tree.signs[t as usize];
    let mut logp = 0.0;
    for (node, sign) in path.iter().zip(signs) {
        let row = hsm.row(*node as usize);
        let mut dot = 0.0;
        for (x, vi) in row.iter().zip(v) {
            dot += x * vi;
        }
        logp += log_sigmoid(-sign * dot);
    }
    logp
}

/// Log probability of the next term given a context, with an optional
/// document vector merged into the state.
pub fn next_token_log_prob(
    context: &[u32],
    t: u32,
    params: &NeuralParams,
    tree: &HuffmanTree,
    dv: Option<&DocVector>,
) -> Result<f64> {
    if t as usize >= params.vocab_size() {
        return Err(Error::Data(format!("target term id {t} out of vocabulary")));
    }
    let cache = phi_forward(context, params)?;
    let v = match dv {
        Some(dv) => psi_merge(&cache.state, dv)?,
        None => cache.state,
    };
    Ok(hsm_log_prob(t, &v, tree, &params.hsm))
}

/// Which parameters the backward pass produces gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScope {
    /// All model parameters (and the document vector when present).
    All,
    /// Only the document vector; everything else is frozen.
    DocVectorOnly,
}

/// Accumulated gradients of the weighted negative log-likelihood.
///
/// Embedding and hierarchical-softmax rows are stored sparsely since a
/// sample only touches the context rows and the target's tree path.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub emb: HashMap<u32, Vec<f64>>,
    pub a: Vec<Mat>,
    pub bias: Vec<f64>,
    pub b: Option<Mat>,
    pub hsm: HashMap<u32, Vec<f64>>,
    pub zd: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(params: &NeuralParams, zd_dim: Option<usize>) -> Gradients {
        let cfg = &params.config;
        Gradients {
            emb: HashMap::new(),
            a: (0..cfg.context_len())
                .map(|_| Mat::zeros(cfg.l1_dim(), cfg.m0))
                .collect(),
            bias: vec![0.0; cfg.l1_dim()],
            b: params
                .b
                .as_ref()
                .map(|m| Mat::zeros(m.rows, m.cols)),
            hsm: HashMap::new(),
            zd: zd_dim.map(|d| vec![0.0; d]),
        }
    }

    /// Dense copies of the gradient tensors, in the same order as
    /// `NeuralParams::tensors_mut`. Used by the gradient checker.
    pub fn dense(&self, params: &NeuralParams) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        let mut emb = vec![0.0; params.embeddings.data.len()];
        for (t, g) in &self.emb {
            let start = *t as usize * params.config.m0;
            for (dst, src) in emb[start..start + params.config.m0].iter_mut().zip(g) {
                *dst = *src;
            }
        }
        out.push(("embeddings".to_string(), emb));
        for (j, m) in self.a.iter().enumerate() {
            out.push((format!("a{j}"), m.data.clone()));
        }
        out.push(("bias".to_string(), self.bias.clone()));
        if let Some(b) = &self.b {
            out.push(("b".to_string(), b.data.clone()));
        }
        let dim = params.config.state_dim();
        let mut hsm = vec![0.0; params.hsm.data.len()];
        for (s, g) in &self.hsm {
            let start = *s as usize * dim;
            for (dst, src) in hsm[start..start + dim].iter_mut().zip(g) {
                *dst = *src;
            }
        }
        out.push(("hsm".to_string(), hsm));
        out
    }
}

/// Backward pass for one (context, target, weight) sample. Accumulates the
/// gradients of `weight * (-log P(target | context))` into `grads` and
/// returns that weighted negative log-likelihood.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    context: &[u32],
    target: u32,
    weight: f64,
    params: &NeuralParams,
    tree: &HuffmanTree,
    dv: Option<&DocVector>,
    scope: FitScope,
    grads: &mut Gradients,
) -> Result<f64> {
    let cfg = &params.config;
    if target as usize >= params.vocab_size() {
        return Err(Error::Data(format!("target term id {target} out of vocabulary")));
    }
    let cache = phi_forward(context, params)?;
    let v = match dv {
        Some(dv) => psi_merge(&cache.state, dv)?,
        None => cache.state.clone(),
    };

    let path = &tree.paths[target as usize];
    let signs = &tree.signs[target as usize];
    let dim = cfg.state_dim();
    let mut logp = 0.0;
    let mut dv_grad = vec![0.0; dim];
    for (node, sign) in path.iter().zip(signs) {
        let row = params.hsm.row(*node as usize);
        let mut dot = 0.0;
        for (x, vi) in row.iter().zip(&v) {
            dot += x * vi;
        }
        logp += log_sigmoid(-sign * dot);
        // d(weighted NLL)/d(dot)
        let g = weight * sign * sigmoid(sign * dot);
        if weight != 0.0 {
            if scope == FitScope::All {
                let gx = grads.hsm.entry(*node).or_insert_with(|| vec![0.0; dim]);
                for (dst, vi) in gx.iter_mut().zip(&v) {
                    *dst += g * vi;
                }
            }
            for (dst, x) in dv_grad.iter_mut().zip(row) {
                *dst += g * x;
            }
        }
    }
    let nll = -weight * logp;
    if weight == 0.0 {
        return Ok(nll);
    }

    // through the merge
    let d_state: Vec<f64> = match dv {
        None => dv_grad,
        Some(d) => {
            if let Some(zg) = grads.zd.as_mut() {
                match d.mode {
                    MergeMode::Sum => {
                        for (dst, g) in zg.iter_mut().zip(&dv_grad) {
                            *dst += g;
                        }
                    }
                    MergeMode::Product => {
                        for ((dst, g), s) in zg.iter_mut().zip(&dv_grad).zip(&cache.state) {
                            *dst += g * s;
                        }
                    }
                }
            }
            match d.mode {
                MergeMode::Sum => dv_grad,
                MergeMode::Product => dv_grad
                    .iter()
                    .zip(&d.values)
                    .map(|(g, z)| g * z)
                    .collect(),
            }
        }
    };
    if scope == FitScope::DocVectorOnly {
        return Ok(nll);
    }

    // through the context network
    let d_pre: Vec<f64> = d_state
        .iter()
        .zip(&cache.state)
        .map(|(g, s)| g * (1.0 - s * s))
        .collect();
    let d_l1: Vec<f64> = match cfg.arch {
        Arch::M1 => d_pre,
        Arch::M2 => {
            let b = params.b.as_ref().expect("M2 has B");
            grads
                .b
                .as_mut()
                .expect("grad B")
                .add_outer(&d_pre, &cache.hidden, 1.0);
            let d_hidden = b.t_matvec(&d_pre);
            d_hidden
                .iter()
                .zip(&cache.hidden)
                .map(|(g, h)| g * (1.0 - h * h))
                .collect()
        }
        Arch::M2Max => {
            let b = params.b.as_ref().expect("M2Max has B");
            grads
                .b
                .as_mut()
                .expect("grad B")
                .add_outer(&d_pre, &cache.hidden, 1.0);
            let d_pooled = b.t_matvec(&d_pre);
            let mut d_l1 = vec![0.0; cfg.l1_dim()];
            for (block, &idx) in cache.argmax.iter().enumerate() {
                d_l1[idx] = d_pooled[block];
            }
            d_l1
        }
    };
    for (dst, g) in grads.bias.iter_mut().zip(&d_l1) {
        *dst += g;
    }
    for (j, &t) in cache.context.iter().enumerate() {
        grads.a[j].add_outer(&d_l1, params.embeddings.row(t as usize), 1.0);
        let dz = params.a[j].t_matvec(&d_l1);
        let ge = grads
            .emb
            .entry(t)
            .or_insert_with(|| vec![0.0; cfg.m0]);
        for (dst, g) in ge.iter_mut().zip(&dz) {
            *dst += g;
        }
    }
    Ok(nll)
}

/// SGD update: params -= lr * scale * grads.
pub fn apply_sgd(params: &mut NeuralParams, grads: &Gradients, lr: f64, scale: f64) {
    let step = lr * scale;
    for (t, g) in &grads.emb {
        let row = params.embeddings.row_mut(*t as usize);
        for (p, g) in row.iter_mut().zip(g) {
            *p -= step * g;
        }
    }
    for (pa, ga) in params.a.iter_mut().zip(&grads.a) {
        for (p, g) in pa.data.iter_mut().zip(&ga.data) {
            *p -= step * g;
        }
    }
    for (p, g) in params.bias.iter_mut().zip(&grads.bias) {
        *p -= step * g;
    }
    if let (Some(pb), Some(gb)) = (params.b.as_mut(), grads.b.as_ref()) {
        for (p, g) in pb.data.iter_mut().zip(&gb.data) {
            *p -= step * g;
        }
    }
    for (s, g) in &grads.hsm {
        let row = params.hsm.row_mut(*s as usize);
        for (p, g) in row.iter_mut().zip(g) {
            *p -= step * g;
        }
    }
}

/// Left-padded context of the `n - 1` terms preceding position `i`.
pub fn context_at(ids: &[u32], i: usize, context_len: usize, padding_id: u32) -> Vec<u32> {
    let mut ctx = Vec::with_capacity(context_len);
    for back in (1..=context_len).rev() {
        if i >= back {
            ctx.push(ids[i - back]);
        } else {
            ctx.push(padding_id);
        }
    }
    ctx
}

const MODEL_MAGIC: &[u8; 4] = b"NNLM";
const MODEL_VERSION: u32 = 1;
const DOCVEC_MAGIC: &[u8; 4] = b"NDVS";
const DOCVEC_VERSION: u32 = 1;

fn put_mat(w: &mut impl std::io::Write, m: &Mat, path: &Path) -> Result<()> {
    io::put_u64(w, m.rows as u64, path)?;
    io::put_u64(w, m.cols as u64, path)?;
    io::put_f64_slice(w, &m.data, path)
}

fn get_mat(r: &mut impl std::io::Read, path: &Path) -> Result<Mat> {
    let rows = io::get_u64(r, path)? as usize;
    let cols = io::get_u64(r, path)? as usize;
    let data = io::get_f64_vec(r, rows * cols, path)?;
    Ok(Mat { rows, cols, data })
}

/// Binary model checkpoint: magic `NNLM`, version, config block, then each
/// tensor as dims + row-major 64-bit floats.
pub fn save_model(path: &Path, params: &NeuralParams) -> Result<()> {
    crate::io::write_atomic(path, |w| {
        w.write_all(MODEL_MAGIC).map_err(|e| Error::io(path, e))?;
        io::put_u32(w, MODEL_VERSION, path)?;
        let cfg = &params.config;
        let arch = match cfg.arch {
            Arch::M1 => 1u8,
            Arch::M2 => 2,
            Arch::M2Max => 3,
        };
        io::put_u8(w, arch, path)?;
        io::put_u32(w, cfg.n as u32, path)?;
        io::put_u32(w, cfg.m0 as u32, path)?;
        io::put_u32(w, cfg.m1 as u32, path)?;
        io::put_u32(w, cfg.m2 as u32, path)?;
        io::put_u32(w, cfg.kappa as u32, path)?;
        put_mat(w, &params.embeddings, path)?;
        io::put_u32(w, params.a.len() as u32, path)?;
        for m in &params.a {
            put_mat(w, m, path)?;
        }
        io::put_u64(w, params.bias.len() as u64, path)?;
        io::put_f64_slice(w, &params.bias, path)?;
        io::put_u8(w, params.b.is_some() as u8, path)?;
        if let Some(b) = &params.b {
            put_mat(w, b, path)?;
        }
        put_mat(w, &params.hsm, path)?;
        Ok(())
    })
}

pub fn load_model(path: &Path) -> Result<NeuralParams> {
    let mut r = io::open_reader(path)?;
    io::expect_magic(&mut r, MODEL_MAGIC, path)?;
    let version = io::get_u32(&mut r, path)?;
    if version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported model version {version}",
            path.display()
        )));
    }
    let arch = match io::get_u8(&mut r, path)? {
        1 => Arch::M1,
        2 => Arch::M2,
        3 => Arch::M2Max,
        other => {
            return Err(Error::Data(format!(
                "{}: unknown architecture code {other}",
                path.display()
            )))
        }
    };
    let n = io::get_u32(&mut r, path)? as usize;
    let m0 = io::get_u32(&mut r, path)? as usize;
    let m1 = io::get_u32(&mut r, path)? as usize;
    let m2 = io::get_u32(&mut r, path)? as usize;
    let kappa = io::get_u32(&mut r, path)? as usize;
    let config = NeuralConfig {
        arch,
        n,
        m0,
        m1,
        m2,
        kappa,
    };
    config.validate()?;
    let embeddings = get_mat(&mut r, path)?;
    let a_len = io::get_u32(&mut r, path)? as usize;
    let mut a = Vec::with_capacity(a_len);
    for _ in 0..a_len {
        a.push(get_mat(&mut r, path)?);
    }
    let bias_len = io::get_u64(&mut r, path)? as usize;
    let bias = io::get_f64_vec(&mut r, bias_len, path)?;
    let b = if io::get_u8(&mut r, path)? != 0 {
        Some(get_mat(&mut r, path)?)
    } else {
        None
    };
    let hsm = get_mat(&mut r, path)?;
    let params = NeuralParams {
        config,
        embeddings,
        a,
        bias,
        b,
        hsm,
    };
    params.assert_finite()?;
    Ok(params)
}

/// Fitted document vectors, keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVectorTable {
    pub mode: MergeMode,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl DocVectorTable {
    pub fn new(mode: MergeMode, dim: usize) -> DocVectorTable {
        DocVectorTable {
            mode,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, doc_id: &str) -> Option<DocVector> {
        self.vectors.get(doc_id).map(|values| DocVector {
            mode: self.mode,
            values: values.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| {
            w.write_all(DOCVEC_MAGIC).map_err(|e| Error::io(path, e))?;
            io::put_u32(w, DOCVEC_VERSION, path)?;
            io::put_u8(w, matches!(self.mode, MergeMode::Product) as u8, path)?;
            io::put_u64(w, self.dim as u64, path)?;
            io::put_u64(w, self.vectors.len() as u64, path)?;
            for (doc_id, values) in &self.vectors {
                io::put_str(w, doc_id, path)?;
                io::put_f64_slice(w, values, path)?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<DocVectorTable> {
        let mut r = io::open_reader(path)?;
        io::expect_magic(&mut r, DOCVEC_MAGIC, path)?;
        let version = io::get_u32(&mut r, path)?;
        if version != DOCVEC_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported docvec version {version}",
                path.display()
            )));
        }
        let mode = if io::get_u8(&mut r, path)? != 0 {
            MergeMode::Product
        } else {
            MergeMode::Sum
        };
        let dim = io::get_u64(&mut r, path)? as usize;
        let count = io::get_u64(&mut r, path)? as usize;
        let mut vectors = BTreeMap::new();
        for _ in 0..count {
            let doc_id = io::get_str(&mut r, path)?;
            let values = io::get_f64_vec(&mut r, dim, path)?;
            vectors.insert(doc_id, values);
        }
        Ok(DocVectorTable { mode, dim, vectors })
    }
}
