//! Evaluation: per-task prediction records and accuracy reports. The
//! report is always recomputed from the records, so the two cannot drift.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{rasters_to_array, MxgNet, SyllogismNet};
use crate::numerics::{child_seed, Graph, ParamStore};
use crate::taskgen::{SyllogismInstance, TaskInstance};

/// One scored task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub task: usize,
    pub probabilities: Vec<f64>,
    pub chosen: usize,
    pub correct: bool,
    pub meta_probabilities: Vec<f64>,
    pub meta_bits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub answer_acc: f64,
    pub meta_bit_acc: f64,
    pub meta_exact_acc: f64,
    /// Answer accuracy conditioned on the meta-target being exactly right.
    pub acc_given_meta_correct: Option<f64>,
    pub acc_given_meta_incorrect: Option<f64>,
}

/// Recount every aggregate from the raw records.
pub fn report_from_records(records: &[PredictionRecord]) -> EvalReport {
    let count = records.len();
    let mut answer_hits = 0usize;
    let mut bit_hits = 0usize;
    let mut bit_total = 0usize;
    let mut exact_hits = 0usize;
    let mut ans_given_meta = (0usize, 0usize);
    let mut ans_given_not = (0usize, 0usize);
    for r in records {
        answer_hits += r.correct as usize;
        let mut exact = true;
        for (&p, &b) in r.meta_probabilities.iter().zip(&r.meta_bits) {
            let predicted = p > 0.5;
            bit_total += 1;
            if predicted == b {
                bit_hits += 1;
            } else {
                exact = false;
            }
        }
        if exact {
            exact_hits += 1;
            ans_given_meta.0 += r.correct as usize;
            ans_given_meta.1 += 1;
        } else {
            ans_given_not.0 += r.correct as usize;
            ans_given_not.1 += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    EvalReport {
        count,
        answer_acc: ratio(answer_hits, count),
        meta_bit_acc: ratio(bit_hits, bit_total),
        meta_exact_acc: ratio(exact_hits, count),
        acc_given_meta_correct: (ans_given_meta.1 > 0)
            .then(|| ratio(ans_given_meta.0, ans_given_meta.1)),
        acc_given_meta_incorrect: (ans_given_not.1 > 0)
            .then(|| ratio(ans_given_not.0, ans_given_not.1)),
    }
}

/// Evaluate the matrix model over a dataset (inference mode, running BN
/// statistics). Deterministic for a fixed seed.
pub fn evaluate_matrix(
    model: &MxgNet,
    store: &ParamStore<f32>,
    instances: &[TaskInstance],
    batch_size: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    let mut records = Vec::with_capacity(instances.len());
    let side = model.cfg.repr.panel_side;
    for (bi, chunk) in instances.chunks(batch_size.max(1)).enumerate() {
        let rasters: Vec<&[Vec<u8>]> = chunk.iter().map(|t| t.rasters.as_slice()).collect();
        let input = rasters_to_array::<f32>(&rasters, side);
        let mut g = Graph::<f32>::new(child_seed(seed, bi as u64), false);
        let out = model.forward(&mut g, store, &input)?;
        let probs_var = g.softmax(out.answer_logits)?;
        let meta_var = g.sigmoid(out.meta_logits);
        let probs = g.value(probs_var);
        let metas = g.value(meta_var);
        let m = model.cfg.meta_width;
        for (i, t) in chunk.iter().enumerate() {
            let p: Vec<f64> = probs.data()[i * 8..(i + 1) * 8]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let chosen = argmax(&p);
            records.push(PredictionRecord {
                task: bi * batch_size + i,
                chosen,
                correct: chosen == t.answer as usize,
                probabilities: p,
                meta_probabilities: metas.data()[i * m..(i + 1) * m]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
                meta_bits: t.meta_target.clone(),
            });
        }
    }
    Ok((report_from_records(&records), records))
}

/// Evaluate the syllogism model: per-conclusion validity accuracy.
pub fn evaluate_syllogism(
    model: &SyllogismNet,
    store: &ParamStore<f32>,
    instances: &[SyllogismInstance],
    batch_size: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut bit_hits = 0usize;
    let mut bit_total = 0usize;
    let mut exact_hits = 0usize;
    let side = model.cfg.repr.panel_side;
    for (bi, chunk) in instances.chunks(batch_size.max(1)).enumerate() {
        let rasters: Vec<Vec<Vec<u8>>> = chunk
            .iter()
            .map(|t| vec![t.premises[0].clone(), t.premises[1].clone()])
            .collect();
        let refs: Vec<&[Vec<u8>]> = rasters.iter().map(|r| r.as_slice()).collect();
        let input = rasters_to_array::<f32>(&refs, side);
        let mut g = Graph::<f32>::new(child_seed(seed, bi as u64), false);
        let logits = model.forward(&mut g, store, &input)?;
        let vals = g.value(logits);
        for (i, t) in chunk.iter().enumerate() {
            let mut exact = true;
            for (k, &label) in t.labels.iter().enumerate() {
                let predicted = vals.data()[i * 5 + k] > 0.0;
                bit_total += 1;
                if predicted == label {
                    bit_hits += 1;
                } else {
                    exact = false;
                }
            }
            exact_hits += exact as usize;
        }
    }
    let count = instances.len();
    Ok(EvalReport {
        count,
        answer_acc: if bit_total == 0 { 0.0 } else { bit_hits as f64 / bit_total as f64 },
        meta_bit_acc: if bit_total == 0 { 0.0 } else { bit_hits as f64 / bit_total as f64 },
        meta_exact_acc: if count == 0 { 0.0 } else { exact_hits as f64 / count as f64 },
        acc_given_meta_correct: None,
        acc_given_meta_incorrect: None,
    })
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}
