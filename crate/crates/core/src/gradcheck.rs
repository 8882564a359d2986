//! Central finite-difference verification of the analytic backward pass.

use crate::error::Result;
use crate::huffman::HuffmanTree;
use crate::nn::{backward, next_token_log_prob, DocVector, FitScope, Gradients, NeuralParams};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap())
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares the analytic gradient of `-log P(target | context)` against
/// central finite differences with the given step, for every coordinate the
/// scope trains. `params` is restored before returning.
pub fn gradient_check(
    params: &mut NeuralParams,
    tree: &HuffmanTree,
    context: &[u32],
    target: u32,
    dv: Option<&DocVector>,
    scope: FitScope,
    step: f64,
) -> Result<GradCheckReport> {
    let zd_dim = dv.map(|d| d.values.len());
    let mut grads = Gradients::zeros(params, zd_dim);
    backward(context, target, 1.0, params, tree, dv, scope, &mut grads)?;
    let dense = grads.dense(params);

    let mut report = GradCheckReport::default();
    if matches!(scope, FitScope::All) {
        for (name, analytic) in &dense {
            for index in 0..analytic.len() {
                let mut probe = |delta: f64| -> Result<f64> {
                    let (_, t) = params
                        .tensors_mut()
                        .into_iter()
                        .find(|(n, _)| n == name)
                        .expect("tensor names are stable");
                    let saved = t[index];
                    t[index] = saved + delta;
                    let logp = next_token_log_prob(context, target, params, tree, dv);
                    let (_, t) = params
                        .tensors_mut()
                        .into_iter()
                        .find(|(n, _)| n == name)
                        .unwrap();
                    t[index] = saved;
                    Ok(-logp?)
                };
                let numeric = (probe(step)? - probe(-step)?) / (2.0 * step);
                report.entries.push(GradCheckEntry {
                    tensor: name.clone(),
                    index,
                    analytic: analytic[index],
                    numeric,
                    rel_err: rel_err(analytic[index], numeric),
                });
            }
        }
    }

    if let Some(dv) = dv {
        let analytic = grads.zd.as_ref().expect("zd gradient requested");
        for (index, &a) in analytic.iter().enumerate() {
            let probe = |delta: f64| -> Result<f64> {
                let mut bumped = dv.clone();
                bumped.values[index] += delta;
                Ok(-next_token_log_prob(context, target, params, tree, Some(&bumped))?)
            };
            let numeric = (probe(step)? - probe(-step)?) / (2.0 * step);
            report.entries.push(GradCheckEntry {
                tensor: "zd".to_string(),
                index,
                analytic: a,
                numeric,
                rel_err: rel_err(a, numeric),
            });
        }
    }

    Ok(report)
}
