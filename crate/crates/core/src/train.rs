//! Optimizers and training loops: generic-model SGD, CBOW embedding
//! pretraining, per-document vector fitting with Rprop, and perplexity.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::nn::{
    apply_sgd, backward, context_at, hsm_log_prob, next_token_log_prob, sigmoid, DocVector,
    DocVectorTable, FitScope, Gradients, MergeMode, NeuralParams,
};

/// Generic-model training settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    /// Decay constant: lr_k = lr0 / (1 + k * decay).
    pub decay: f64,
    /// Documents per mini-batch.
    pub batch_size: usize,
    /// Number of SGD steps.
    pub max_iters: usize,
    /// Subsampling threshold for the frequent-term weight.
    pub subsample_s: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            decay: 2e-4,
            batch_size: 100,
            max_iters: 50_000,
            subsample_s: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.decay < 0.0 || self.batch_size < 1 {
            return Err(Error::InvalidArgument(format!(
                "invalid training configuration: {self:?}"
            )));
        }
        Ok(())
    }
}

/// lr_k = lr0 / (1 + k * decay)
pub fn lr_schedule(k: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / (1.0 + k as f64 * cfg.decay)
}

/// Down-weighting of frequent terms: min(1, sqrt(s / f)) where f is the
/// term's relative corpus frequency.
pub fn word_weight(t: u32, vocab: &Vocabulary, subsample_s: f64) -> f64 {
    let total = vocab.total_tokens() as f64;
    let f = vocab.frequency(t) as f64 / total;
    if f <= subsample_s {
        1.0
    } else {
        (subsample_s / f).sqrt()
    }
}

/// Precomputed per-term weights, indexed by term id.
pub fn word_weights(vocab: &Vocabulary, subsample_s: f64) -> Vec<f64> {
    (0..vocab.len() as u32)
        .map(|t| word_weight(t, vocab, subsample_s))
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    /// Weighted mean negative log-likelihood over the batch.
    pub nll: f64,
    pub perplexity: f64,
}

/// Mini-batch SGD on the weighted negative log-likelihood. Documents are
/// sampled uniformly with replacement; every position of a sampled document
/// contributes, with left-padded contexts. The gradient is averaged over
/// batch positions before the step.
pub fn train_generic(
    seqs: &[Vec<u32>],
    params: &mut NeuralParams,
    tree: &HuffmanTree,
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let ctx_len = params.config.context_len();
    let padding = params.padding_id();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.max_iters);
    for step in 0..cfg.max_iters {
        let mut grads = Gradients::zeros(params, None);
        let mut positions = 0usize;
        let mut nll_sum = 0.0;
        let mut weight_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let doc = &seqs[rng.gen_range(0..seqs.len())];
            for i in 0..doc.len() {
                let ctx = context_at(doc, i, ctx_len, padding);
                let w = weights[doc[i] as usize];
                nll_sum += backward(
                    &ctx,
                    doc[i],
                    w,
                    params,
                    tree,
                    None,
                    FitScope::All,
                    &mut grads,
                )?;
                weight_sum += w;
                positions += 1;
            }
        }
        if positions == 0 {
            continue;
        }
        if !nll_sum.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {step}: {nll_sum}"
            )));
        }
        let lr = lr_schedule(step, cfg);
        apply_sgd(params, &grads, lr, 1.0 / positions as f64);
        let mean = nll_sum / weight_sum;
        trace.push(StepLog {
            step,
            lr,
            nll: mean,
            perplexity: mean.exp(),
        });
    }
    params.assert_finite()?;
    Ok(trace)
}

/// CBOW pretraining with the same hierarchical softmax output: the mean of
/// the context embeddings (terms within `window` positions of the target)
/// predicts the target. Updates embeddings and hierarchical softmax node
/// vectors in place; the learning rate decays linearly over the run.
///
/// Requires the embedding dimension to equal the state dimension, since the
/// embedding mean feeds the same inner-node vectors as the full model.
pub fn pretrain_cbow(
    seqs: &[Vec<u32>],
    params: &mut NeuralParams,
    tree: &HuffmanTree,
    epochs: usize,
    window: usize,
    lr0: f64,
) -> Result<()> {
    let m0 = params.config.m0;
    if m0 != params.config.state_dim() {
        return Err(Error::InvalidArgument(format!(
            "pretraining needs embedding dim == state dim (got {} vs {})",
            m0,
            params.config.state_dim()
        )));
    }
    let total_positions: usize = seqs.iter().map(|s| s.len()).sum();
    if total_positions == 0 {
        return Err(Error::Data("empty corpus".into()));
    }
    let total_updates = (epochs * total_positions) as f64;
    let mut processed = 0usize;
    for _ in 0..epochs {
        for doc in seqs {
            for i in 0..doc.len() {
                let lr = (lr0 * (1.0 - processed as f64 / total_updates)).max(lr0 * 1e-4);
                processed += 1;
                let lo = i.saturating_sub(window);
                let hi = (i + window + 1).min(doc.len());
                let ctx: Vec<u32> = (lo..hi).filter(|&j| j != i).map(|j| doc[j]).collect();
                if ctx.is_empty() {
                    continue;
                }
                // mean of context embeddings
                let mut v = vec![0.0; m0];
                for &t in &ctx {
                    for (vi, e) in v.iter_mut().zip(params.embeddings.row(t as usize)) {
                        *vi += e;
                    }
                }
                let inv = 1.0 / ctx.len() as f64;
                v.iter_mut().for_each(|x| *x *= inv);

                let target = doc[i] as usize;
                let mut d_v = vec![0.0; m0];
                let path = tree.paths[target].clone();
                let signs = tree.signs[target].clone();
                for (node, sign) in path.iter().zip(&signs) {
                    let row = params.hsm.row(*node as usize);
                    let mut dot = 0.0;
                    for (x, vi) in row.iter().zip(&v) {
                        dot += x * vi;
                    }
                    let g = sign * sigmoid(sign * dot); // d(NLL)/d(dot)
                    for (dst, x) in d_v.iter_mut().zip(row) {
                        *dst += g * x;
                    }
                    let row = params.hsm.row_mut(*node as usize);
                    for (x, vi) in row.iter_mut().zip(&v) {
                        *x -= lr * g * vi;
                    }
                }
                for &t in &ctx {
                    let row = params.embeddings.row_mut(t as usize);
                    for (e, g) in row.iter_mut().zip(&d_v) {
                        *e -= lr * g * inv;
                    }
                }
            }
        }
    }
    params.assert_finite()
}

/// Loads word vectors in the text format `|V| m0` header then
/// `word v1 ... v_m0` per line. Words outside the vocabulary are ignored;
/// vocabulary words missing from the file keep their current rows. Returns
/// the number of populated rows.
pub fn load_word_vectors(
    path: &Path,
    vocab: &Vocabulary,
    params: &mut NeuralParams,
) -> Result<usize> {
    let reader = crate::io::open_reader(path)?;
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header line"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace();
    let (_count, dim) = match (parts.next(), parts.next()) {
        (Some(c), Some(d)) => (
            c.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, "bad vector count"))?,
            d.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, "bad dimension"))?,
        ),
        _ => return Err(Error::parse(path, 1, "expected `count dim` header")),
    };
    if dim != params.config.m0 {
        return Err(Error::Data(format!(
            "vector file dimension {dim} does not match model embedding dim {}",
            params.config.m0
        )));
    }
    let mut populated = 0;
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::parse(path, lineno + 1, "empty line"))?;
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, lineno + 1, "bad float"))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {dim} values, got {}", values.len()),
            ));
        }
        if let Some(id) = vocab.id(word) {
            params.embeddings.row_mut(id as usize).copy_from_slice(&values);
            populated += 1;
        }
    }
    Ok(populated)
}

/// Rprop constants and stopping rule for document-vector fitting.
#[derive(Debug, Clone)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta0: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Stop when the max-abs change of the vector falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for RpropConfig {
    fn default() -> Self {
        RpropConfig {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta0: 0.1,
            delta_min: 1e-6,
            delta_max: 50.0,
            tol: 1e-4,
            max_iters: 500,
        }
    }
}

/// Per-parameter adaptive step sizes with sign-based updates (iRprop-).
#[derive(Debug, Clone)]
pub struct RpropState {
    delta: Vec<f64>,
    prev_grad: Vec<f64>,
}

impl RpropState {
    pub fn new(dim: usize, cfg: &RpropConfig) -> RpropState {
        RpropState {
            delta: vec![cfg.delta0; dim],
            prev_grad: vec![0.0; dim],
        }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    /// One Rprop update of `x` given the current gradient. Returns the
    /// max-abs parameter change.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], cfg: &RpropConfig) -> f64 {
        let mut max_change = 0.0f64;
        for i in 0..x.len() {
            let prod = self.prev_grad[i] * grad[i];
            if prod > 0.0 {
                self.delta[i] = (self.delta[i] * cfg.eta_plus).min(cfg.delta_max);
            } else if prod < 0.0 {
                self.delta[i] = (self.delta[i] * cfg.eta_minus).max(cfg.delta_min);
                // sign change: skip the update this iteration
                self.prev_grad[i] = 0.0;
                continue;
            }
            if grad[i] != 0.0 {
                let change = -grad[i].signum() * self.delta[i];
                x[i] += change;
                max_change = max_change.max(change.abs());
            }
            self.prev_grad[i] = grad[i];
        }
        max_change
    }
}

/// Result of fitting a document vector.
#[derive(Debug, Clone)]
pub struct DocFit {
    pub vector: DocVector,
    /// Weighted NLL of the returned (best-seen) vector.
    pub nll: f64,
    /// Weighted NLL at the identity vector, for improvement reporting.
    pub identity_nll: f64,
    pub iterations: usize,
    /// True when the document was empty after encoding; the identity
    /// vector is returned unchanged.
    pub empty_doc: bool,
}

fn doc_nll(
    ids: &[u32],
    params: &NeuralParams,
    tree: &HuffmanTree,
    weights: &[f64],
    dv: &DocVector,
) -> Result<f64> {
    let ctx_len = params.config.context_len();
    let padding = params.padding_id();
    let mut nll = 0.0;
    for i in 0..ids.len() {
        let ctx = context_at(ids, i, ctx_len, padding);
        let w = weights[ids[i] as usize];
        nll -= w * next_token_log_prob(&ctx, ids[i], params, tree, Some(dv))?;
    }
    Ok(nll)
}

/// Fits a per-document vector by Rprop on the document's weighted NLL,
/// starting from the merge identity, with the generic parameters frozen.
/// The best-seen iterate is returned, so the result never has a higher NLL
/// than the identity.
pub fn fit_doc_vector(
    ids: &[u32],
    params: &NeuralParams,
    tree: &HuffmanTree,
    weights: &[f64],
    mode: MergeMode,
    cfg: &RpropConfig,
) -> Result<DocFit> {
    let dim = params.config.state_dim();
    let identity = DocVector::identity(mode, dim);
    if ids.is_empty() {
        return Ok(DocFit {
            vector: identity,
            nll: 0.0,
            identity_nll: 0.0,
            iterations: 0,
            empty_doc: true,
        });
    }
    let ctx_len = params.config.context_len();
    let padding = params.padding_id();
    let mut dv = identity.clone();
    let mut rprop = RpropState::new(dim, cfg);
    let mut best = dv.clone();
    let mut best_nll = f64::INFINITY;
    let mut identity_nll = 0.0;
    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        let mut grads = Gradients::zeros(params, Some(dim));
        let mut nll = 0.0;
        for i in 0..ids.len() {
            let ctx = context_at(ids, i, ctx_len, padding);
            let w = weights[ids[i] as usize];
            nll += backward(
                &ctx,
                ids[i],
                w,
                params,
                tree,
                Some(&dv),
                FitScope::DocVectorOnly,
                &mut grads,
            )?;
        }
        if !nll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite document NLL at iteration {iter}"
            )));
        }
        if iter == 0 {
            identity_nll = nll;
        }
        if nll < best_nll {
            best_nll = nll;
            best = dv.clone();
        }
        iterations = iter + 1;
        let change = rprop.step(&mut dv.values, grads.zd.as_ref().unwrap(), cfg);
        if change < cfg.tol {
            break;
        }
    }
    // the final iterate was stepped to but not yet evaluated
    let final_nll = doc_nll(ids, params, tree, weights, &dv)?;
    if final_nll < best_nll {
        best_nll = final_nll;
        best = dv;
    }
    Ok(DocFit {
        vector: best,
        nll: best_nll,
        identity_nll,
        iterations,
        empty_doc: false,
    })
}

/// exp of the weighted mean NLL over the documents, using the same
/// frequent-term weights as training. Documents present in the optional
/// vector table are scored with their fitted vector.
pub fn perplexity(
    docs: &[(String, Vec<u32>)],
    params: &NeuralParams,
    tree: &HuffmanTree,
    weights: &[f64],
    dv_table: Option<&DocVectorTable>,
) -> Result<f64> {
    let ctx_len = params.config.context_len();
    let padding = params.padding_id();
    let mut nll_sum = 0.0;
    let mut weight_sum = 0.0;
    for (doc_id, ids) in docs {
        let dv = dv_table.and_then(|t| t.get(doc_id));
        for i in 0..ids.len() {
            let ctx = context_at(ids, i, ctx_len, padding);
            let w = weights[ids[i] as usize];
            let cache = crate::nn::phi_forward(&ctx, params)?;
            let v = match &dv {
                Some(dv) => crate::nn::psi_merge(&cache.state, dv)?,
                None => cache.state,
            };
            nll_sum -= w * hsm_log_prob(ids[i], &v, tree, &params.hsm);
            weight_sum += w;
        }
    }
    if weight_sum == 0.0 {
        return Err(Error::Data("zero total weight in perplexity".into()));
    }
    Ok((nll_sum / weight_sum).exp())
}
