//! Training loops: matrix model, syllogism model and the SSR experiment.
//!
//! All loops share the same discipline: seeded shuffling per epoch, RAdam
//! updates, metrics appended per epoch per split, early stopping on
//! validation accuracy, best-validation checkpoint kept via atomic writes,
//! and a hard abort (with the last good checkpoint preserved on disk) if a
//! loss or gradient turns non-finite.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{rasters_to_array, MxgNet, SyllogismNet};
use crate::numerics::{child_seed, Array, Gradients, Graph, ParamStore, RAdam, Scalar};
use crate::reasoner;
use crate::ssr::{ssr_loss, SsrModel, SubsetGateTable};
use crate::taskgen::{SyllogismInstance, TaskInstance};

use super::checkpoint::write_checkpoint;
use super::config::ExperimentConfig;
use super::eval::{evaluate_matrix, evaluate_syllogism, argmax};
use super::metrics::{append_record, MetricsRecord};

/// Seed-space tags so the init, shuffle and per-step streams never collide.
const SEED_INIT: u64 = 0x01;
const SEED_SHUFFLE: u64 = 0x1000;
const SEED_STEP: u64 = 0x100000;
const SEED_EVAL: u64 = 0x2000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
}

pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint: std::path::PathBuf,
    pub metrics: std::path::PathBuf,
}

fn check_finite<T: Scalar>(loss: T, grads: &Gradients<T>, step: u64) -> Result<()> {
    if !loss.is_finite_s() {
        return Err(Error::Train(format!(
            "non-finite loss at step {step}; last checkpoint preserved"
        )));
    }
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::Train(format!(
                "non-finite gradient for {name} at step {step}; last checkpoint preserved"
            )));
        }
    }
    Ok(())
}

fn apply_stat_updates<T: Scalar>(g: &mut Graph<T>, store: &mut ParamStore<T>) -> Result<()> {
    for (name, value) in g.take_stat_updates() {
        store.set(&name, value)?;
    }
    Ok(())
}

/// Assemble a matrix-task batch: input [B, 16, S, S], answer indices,
/// meta-target bits [B, M].
fn matrix_batch(
    instances: &[TaskInstance],
    idx: &[usize],
    side: usize,
    meta_width: usize,
) -> (Array<f32>, Vec<u32>, Array<f32>) {
    let rasters: Vec<&[Vec<u8>]> = idx.iter().map(|&i| instances[i].rasters.as_slice()).collect();
    let input = rasters_to_array::<f32>(&rasters, side);
    let targets: Vec<u32> = idx.iter().map(|&i| instances[i].answer as u32).collect();
    let mut meta = Vec::with_capacity(idx.len() * meta_width);
    for &i in idx {
        meta.extend(instances[i].meta_target.iter().map(|&b| b as u8 as f32));
    }
    (input, targets, Array::from_vec(&[idx.len(), meta_width], meta))
}

/// Train the matrix model; returns the outcome and leaves
/// `checkpoint.mxgc` + `metrics.jsonl` in `out_dir`.
pub fn train_matrix(
    cfg: &ExperimentConfig,
    train: &[TaskInstance],
    val: &[TaskInstance],
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let model = MxgNet::new(cfg.model_config()?)?;
    let mut store = model.new_store::<f32>(child_seed(cfg.seed, SEED_INIT));
    let mut opt = RAdam::new(cfg.optimizer_config());
    let ckpt_path = out_dir.join("checkpoint.mxgc");
    let metrics_path = out_dir.join("metrics.jsonl");
    let side = model.cfg.repr.panel_side;
    let meta_width = model.cfg.meta_width;
    let batch = cfg.training.batch_size;

    let mut best_val = f64::NEG_INFINITY;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;
    let mut step: u64 = 0;

    for epoch in 0..cfg.training.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, SEED_SHUFFLE + epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut loss_ans_sum = 0.0f64;
        let mut loss_meta_sum = 0.0f64;
        let mut batches = 0usize;
        let mut hits = 0usize;
        let mut seen = 0usize;
        let mut meta_bit_hits = 0usize;
        let mut meta_bits_seen = 0usize;
        let mut meta_exact_hits = 0usize;

        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue; // batch statistics need more than one sample
            }
            let (input, targets, meta_bits) = matrix_batch(train, chunk, side, meta_width);
            let mut g = Graph::<f32>::new(child_seed(cfg.seed, SEED_STEP + step), true);
            let out = model.forward(&mut g, &store, &input)?;
            let (total, ans_term, meta_term) = reasoner::loss(
                &mut g,
                out.answer_logits,
                &targets,
                out.meta_logits,
                &meta_bits,
                cfg.training.beta,
            )?;
            let loss_val = g.value(total).item();
            let grads = g.backward(total)?;
            check_finite(loss_val, &grads, step)?;
            opt.step(&mut store, &grads)?;
            apply_stat_updates(&mut g, &mut store)?;

            loss_sum += loss_val as f64;
            loss_ans_sum += g.value(ans_term).item() as f64;
            if let Some(m) = meta_term {
                loss_meta_sum += g.value(m).item() as f64;
            }
            batches += 1;
            step += 1;

            // Training accuracy from the forward pass already computed.
            let logits = g.value(out.answer_logits);
            let metas = g.value(out.meta_logits);
            for (i, &t) in targets.iter().enumerate() {
                let row: Vec<f64> =
                    logits.data()[i * 8..(i + 1) * 8].iter().map(|&v| v as f64).collect();
                hits += (argmax(&row) == t as usize) as usize;
                seen += 1;
                let mut exact = true;
                for k in 0..meta_width {
                    let predicted = metas.data()[i * meta_width + k] > 0.0;
                    let actual = meta_bits.data()[i * meta_width + k] > 0.5;
                    meta_bit_hits += (predicted == actual) as usize;
                    meta_bits_seen += 1;
                    exact &= predicted == actual;
                }
                meta_exact_hits += exact as usize;
            }
        }
        epochs_run = epoch + 1;

        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        append_record(
            &metrics_path,
            &MetricsRecord {
                epoch,
                split: "train".into(),
                answer_acc: ratio(hits, seen),
                meta_bit_acc: ratio(meta_bit_hits, meta_bits_seen),
                meta_exact_acc: ratio(meta_exact_hits, seen),
                loss_total: loss_sum / batches.max(1) as f64,
                loss_answer: loss_ans_sum / batches.max(1) as f64,
                loss_meta: loss_meta_sum / batches.max(1) as f64,
                wall_secs: t0.elapsed().as_secs_f64(),
            },
        )?;

        let tv = Instant::now();
        let (val_report, _) = evaluate_matrix(
            &model,
            &store,
            val,
            batch,
            child_seed(cfg.seed, SEED_EVAL + epoch as u64),
        )?;
        append_record(
            &metrics_path,
            &MetricsRecord {
                epoch,
                split: "val".into(),
                answer_acc: val_report.answer_acc,
                meta_bit_acc: val_report.meta_bit_acc,
                meta_exact_acc: val_report.meta_exact_acc,
                loss_total: 0.0,
                loss_answer: 0.0,
                loss_meta: 0.0,
                wall_secs: tv.elapsed().as_secs_f64(),
            },
        )?;

        if val_report.answer_acc > best_val {
            best_val = val_report.answer_acc;
            bad_epochs = 0;
            write_checkpoint(&store, Some(&opt), &ckpt_path)?;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.training.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainArtifacts {
        outcome: TrainOutcome { epochs_run, best_val_acc: best_val, stopped_early },
        checkpoint: ckpt_path,
        metrics: metrics_path,
    })
}

fn syllogism_batch(
    instances: &[SyllogismInstance],
    idx: &[usize],
    side: usize,
) -> (Array<f32>, Array<f32>) {
    let rasters: Vec<Vec<Vec<u8>>> = idx
        .iter()
        .map(|&i| vec![instances[i].premises[0].clone(), instances[i].premises[1].clone()])
        .collect();
    let refs: Vec<&[Vec<u8>]> = rasters.iter().map(|r| r.as_slice()).collect();
    let input = rasters_to_array::<f32>(&refs, side);
    let mut bits = Vec::with_capacity(idx.len() * 5);
    for &i in idx {
        bits.extend(instances[i].labels.iter().map(|&b| b as u8 as f32));
    }
    (input, Array::from_vec(&[idx.len(), 5], bits))
}

/// Train the syllogism model; same logging and early-stop discipline as the
/// matrix loop, with validation accuracy = per-conclusion accuracy.
pub fn train_syllogism(
    cfg: &ExperimentConfig,
    train: &[SyllogismInstance],
    val: &[SyllogismInstance],
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let model = SyllogismNet::new(cfg.syllogism_config())?;
    let mut store = model.new_store::<f32>(child_seed(cfg.seed, SEED_INIT));
    let mut opt = RAdam::new(cfg.optimizer_config());
    let ckpt_path = out_dir.join("checkpoint.mxgc");
    let metrics_path = out_dir.join("metrics.jsonl");
    let side = model.cfg.repr.panel_side;
    let batch = cfg.training.batch_size;

    let mut best_val = f64::NEG_INFINITY;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0usize;
    let mut step = 0u64;

    for epoch in 0..cfg.training.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, SEED_SHUFFLE + epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut bit_hits = 0usize;
        let mut bits_seen = 0usize;

        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let (input, bits) = syllogism_batch(train, chunk, side);
            let mut g = Graph::<f32>::new(child_seed(cfg.seed, SEED_STEP + step), true);
            let logits = model.forward(&mut g, &store, &input)?;
            let target = g.constant(bits.clone());
            let loss = g.bce_with_logits(logits, target)?;
            let loss_val = g.value(loss).item();
            let grads = g.backward(loss)?;
            check_finite(loss_val, &grads, step)?;
            opt.step(&mut store, &grads)?;
            apply_stat_updates(&mut g, &mut store)?;
            loss_sum += loss_val as f64;
            batches += 1;
            step += 1;

            let lv = g.value(logits);
            for (i, &b) in bits.data().iter().enumerate() {
                bit_hits += ((lv.data()[i] > 0.0) == (b > 0.5)) as usize;
                bits_seen += 1;
                let _ = i;
            }
        }
        epochs_run = epoch + 1;

        let train_acc = if bits_seen == 0 { 0.0 } else { bit_hits as f64 / bits_seen as f64 };
        append_record(
            &metrics_path,
            &MetricsRecord {
                epoch,
                split: "train".into(),
                answer_acc: train_acc,
                meta_bit_acc: train_acc,
                meta_exact_acc: 0.0,
                loss_total: loss_sum / batches.max(1) as f64,
                loss_answer: loss_sum / batches.max(1) as f64,
                loss_meta: 0.0,
                wall_secs: t0.elapsed().as_secs_f64(),
            },
        )?;

        let tv = Instant::now();
        let val_report = evaluate_syllogism(
            &model,
            &store,
            val,
            batch,
            child_seed(cfg.seed, SEED_EVAL + epoch as u64),
        )?;
        append_record(
            &metrics_path,
            &MetricsRecord {
                epoch,
                split: "val".into(),
                answer_acc: val_report.answer_acc,
                meta_bit_acc: val_report.meta_bit_acc,
                meta_exact_acc: val_report.meta_exact_acc,
                loss_total: 0.0,
                loss_answer: 0.0,
                loss_meta: 0.0,
                wall_secs: tv.elapsed().as_secs_f64(),
            },
        )?;

        if val_report.answer_acc > best_val {
            best_val = val_report.answer_acc;
            bad_epochs = 0;
            write_checkpoint(&store, Some(&opt), &ckpt_path)?;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.training.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainArtifacts {
        outcome: TrainOutcome { epochs_run, best_val_acc: best_val, stopped_early },
        checkpoint: ckpt_path,
        metrics: metrics_path,
    })
}

/// Train the SSR model for the configured epoch budget (no early stop: the
/// experiment reads the gate table after a fixed number of epochs).
/// Returns the final gate table.
pub fn train_ssr(
    cfg: &ExperimentConfig,
    train: &[TaskInstance],
    out_dir: &Path,
) -> Result<(SubsetGateTable, std::path::PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let model = SsrModel::new(cfg.ssr_config()?)?;
    let mut store = model.new_store::<f32>(child_seed(cfg.seed, SEED_INIT));
    let mut opt = RAdam::new(cfg.optimizer_config());
    let ckpt_path = out_dir.join("ssr.mxgc");
    let metrics_path = out_dir.join("metrics.jsonl");
    let side = model.cfg.panel_side;
    let meta_width = model.cfg.meta_width;
    let batch = cfg.training.batch_size;
    let mut step = 0u64;

    for epoch in 0..cfg.training.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, SEED_SHUFFLE + epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut hits = 0usize;
        let mut seen = 0usize;

        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let (input, targets, meta_bits) = matrix_batch(train, chunk, side, meta_width);
            // One-hot answer bits for per-candidate scoring.
            let mut answer_bits = vec![0.0f32; chunk.len() * 8];
            for (i, &t) in targets.iter().enumerate() {
                answer_bits[i * 8 + t as usize] = 1.0;
            }
            let answer_bits = Array::from_vec(&[chunk.len(), 8], answer_bits);
            // Meta bits repeated for each filled-in candidate.
            let mut meta_rep = Vec::with_capacity(chunk.len() * 8 * meta_width);
            for i in 0..chunk.len() {
                for _ in 0..8 {
                    meta_rep.extend_from_slice(
                        &meta_bits.data()[i * meta_width..(i + 1) * meta_width],
                    );
                }
            }
            let meta_rep = Array::from_vec(&[chunk.len(), 8, meta_width], meta_rep);

            let mut g = Graph::<f32>::new(child_seed(cfg.seed, SEED_STEP + step), true);
            let (ans_logits, meta_logits, _) = model.forward(&mut g, &store, &input)?;
            let total = ssr_loss(
                &mut g,
                ans_logits,
                &answer_bits,
                meta_logits,
                &meta_rep,
                cfg.training.beta,
                cfg.training.lambda,
            )?;
            let loss_val = g.value(total).item();
            let grads = g.backward(total)?;
            check_finite(loss_val, &grads, step)?;
            opt.step(&mut store, &grads)?;
            apply_stat_updates(&mut g, &mut store)?;
            loss_sum += loss_val as f64;
            batches += 1;
            step += 1;

            let lv = g.value(ans_logits);
            for (i, &t) in targets.iter().enumerate() {
                let row: Vec<f64> =
                    lv.data()[i * 8..(i + 1) * 8].iter().map(|&v| v as f64).collect();
                hits += (argmax(&row) == t as usize) as usize;
                seen += 1;
            }
        }

        append_record(
            &metrics_path,
            &MetricsRecord {
                epoch,
                split: "train".into(),
                answer_acc: if seen == 0 { 0.0 } else { hits as f64 / seen as f64 },
                meta_bit_acc: 0.0,
                meta_exact_acc: 0.0,
                loss_total: loss_sum / batches.max(1) as f64,
                loss_answer: 0.0,
                loss_meta: 0.0,
                wall_secs: t0.elapsed().as_secs_f64(),
            },
        )?;
        write_checkpoint(&store, Some(&opt), &ckpt_path)?;
    }

    // Final gate table straight from the trained parameters.
    let gates = store.get("ssr/gates")?;
    let table = SubsetGateTable {
        entries: model
            .subsets
            .iter()
            .zip(gates.data())
            .map(|(s, &v)| (*s, (v as f64).tanh()))
            .collect(),
    };
    Ok((table, ckpt_path))
}
