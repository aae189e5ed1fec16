//! Reasoning head: scores the 8 answer candidates from the concatenated
//! relation embeddings, predicts meta-targets from the summed context
//! embeddings, and combines both losses.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, ResBlock};
use crate::numerics::{Array, Graph, ParamStore, Scalar, Var};

pub const NUM_ANSWERS: usize = 8;

/// Relation embeddings feeding the reasoner. Column entries are absent in
/// rows-only (RAVEN-style) mode; candidate vectors are ordered by candidate
/// index.
pub struct RelationBundle {
    pub context_rows: [Var; 2],
    pub context_cols: Option<[Var; 2]>,
    pub answer_rows: Vec<Var>,
    pub answer_cols: Option<Vec<Var>>,
}

impl RelationBundle {
    fn validate<T: Scalar>(&self, g: &Graph<T>) -> Result<()> {
        let shape = g.shape(self.context_rows[0]).to_vec();
        let mut all: Vec<Var> = self.embeddings();
        if self.answer_rows.len() != NUM_ANSWERS {
            return Err(Error::Usage(format!(
                "bundle has {} candidate row embeddings, expected {NUM_ANSWERS}",
                self.answer_rows.len()
            )));
        }
        if self.context_cols.is_some() != self.answer_cols.is_some() {
            return Err(Error::Usage(
                "bundle mixes rows-only context with column candidates".into(),
            ));
        }
        if let Some(ac) = &self.answer_cols {
            if ac.len() != NUM_ANSWERS {
                return Err(Error::Usage(format!(
                    "bundle has {} candidate column embeddings, expected {NUM_ANSWERS}",
                    ac.len()
                )));
            }
        }
        if all.drain(..).any(|v| g.shape(v) != shape) {
            return Err(Error::Usage("bundle embeddings disagree in shape".into()));
        }
        Ok(())
    }

    /// All embeddings in scoring order: context rows, context columns,
    /// candidate rows, candidate columns.
    fn embeddings(&self) -> Vec<Var> {
        let mut out = self.context_rows.to_vec();
        if let Some(cc) = &self.context_cols {
            out.extend_from_slice(cc);
        }
        out.extend_from_slice(&self.answer_rows);
        if let Some(ac) = &self.answer_cols {
            out.extend_from_slice(ac);
        }
        out
    }

    fn context(&self) -> Vec<Var> {
        let mut out = self.context_rows.to_vec();
        if let Some(cc) = &self.context_cols {
            out.extend_from_slice(cc);
        }
        out
    }

    fn count(&self) -> usize {
        2 + if self.context_cols.is_some() { 2 } else { 0 }
            + NUM_ANSWERS * if self.answer_cols.is_some() { 2 } else { 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    /// Channels of each relation embedding.
    pub summ_channels: usize,
    /// Spatial side of each relation embedding.
    pub map_side: usize,
    /// Whether column subsets participate (PGM-style) or not (RAVEN-style).
    pub use_columns: bool,
    /// Residual block widths of the candidate-scoring trunk.
    pub trunk_channels: (usize, usize),
    /// Meta-target vocabulary width.
    pub meta_width: usize,
}

#[derive(Debug, Clone)]
pub struct Reasoner {
    pub cfg: ReasonerConfig,
    trunk1: ResBlock,
    trunk2: ResBlock,
    out: Linear,
    meta: Linear,
}

impl Reasoner {
    pub fn new(cfg: ReasonerConfig, name: &str) -> Result<Self> {
        if cfg.map_side == 0 || cfg.summ_channels == 0 {
            return Err(Error::Config("empty relation embeddings".into()));
        }
        let n_embed = 2 + NUM_ANSWERS + if cfg.use_columns { 2 + NUM_ANSWERS } else { 0 };
        let in_ch = n_embed * cfg.summ_channels;
        let side2 = cfg.map_side.div_ceil(2);
        Ok(Reasoner {
            trunk1: ResBlock::new(&format!("{name}/res1"), in_ch, cfg.trunk_channels.0, 1),
            trunk2: ResBlock::new(&format!("{name}/res2"), cfg.trunk_channels.0, cfg.trunk_channels.1, 2),
            out: Linear::new(
                format!("{name}/out"),
                cfg.trunk_channels.1 * side2 * side2,
                NUM_ANSWERS,
            ),
            meta: Linear::new(
                format!("{name}/meta"),
                cfg.summ_channels * cfg.map_side * cfg.map_side,
                cfg.meta_width,
            ),
            cfg,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.trunk1.init(store, rng);
        self.trunk2.init(store, rng);
        self.out.init(store, rng);
        self.meta.init(store, rng);
    }

    /// Candidate logits [B, 8] from the concatenated relation embeddings.
    pub fn answer_logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bundle: &RelationBundle,
    ) -> Result<Var> {
        bundle.validate(g)?;
        if bundle.context_cols.is_some() != self.cfg.use_columns {
            return Err(Error::Usage(
                "bundle orientation does not match reasoner configuration".into(),
            ));
        }
        let embeddings = bundle.embeddings();
        debug_assert_eq!(embeddings.len(), bundle.count());
        let stacked = g.concat(&embeddings, 1)?;
        let t = self.trunk1.forward(g, store, stacked)?;
        let t = self.trunk2.forward(g, store, t)?;
        let shape = g.shape(t).to_vec();
        let flat = g.reshape(t, &[shape[0], shape[1..].iter().product()])?;
        self.out.forward(g, store, flat)
    }

    /// Softmax-normalized answer probabilities [B, 8].
    pub fn predict_answer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bundle: &RelationBundle,
    ) -> Result<Var> {
        let logits = self.answer_logits(g, store, bundle)?;
        g.softmax(logits)
    }

    /// Meta-target logits [B, M] from the element-wise sum of the context
    /// embeddings.
    pub fn meta_logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bundle: &RelationBundle,
    ) -> Result<Var> {
        let ctx = bundle.context();
        let mut acc = ctx[0];
        for &v in &ctx[1..] {
            acc = g.add(acc, v)?;
        }
        let shape = g.shape(acc).to_vec();
        let flat = g.reshape(acc, &[shape[0], shape[1..].iter().product()])?;
        self.meta.forward(g, store, flat)
    }

    /// Sigmoid meta-target probabilities [B, M].
    pub fn predict_meta<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bundle: &RelationBundle,
    ) -> Result<Var> {
        let logits = self.meta_logits(g, store, bundle)?;
        Ok(g.sigmoid(logits))
    }
}

/// Combined training loss: answer cross-entropy plus beta times the mean
/// binary cross-entropy of the meta-target bits. Returns (total, answer
/// term, weighted meta term).
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    answer_logits: Var,
    targets: &[u32],
    meta_logits: Var,
    meta_bits: &Array<T>,
    beta: f64,
) -> Result<(Var, Var, Option<Var>)> {
    if beta < 0.0 {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let ans = g.softmax_cross_entropy(answer_logits, targets)?;
    if beta == 0.0 {
        return Ok((ans, ans, None));
    }
    let bits = g.constant(meta_bits.clone());
    let meta = g.bce_with_logits(meta_logits, bits)?;
    let weighted = g.scale(meta, beta);
    let total = g.add(ans, weighted)?;
    Ok((total, ans, Some(weighted)))
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;

    fn cfg(use_columns: bool) -> ReasonerConfig {
        ReasonerConfig {
            summ_channels: 4,
            map_side: 2,
            use_columns,
            trunk_channels: (6, 8),
            meta_width: 12,
        }
    }

    fn bundle<T: Scalar>(g: &mut Graph<T>, seed: u64, cols: bool) -> RelationBundle {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |g: &mut Graph<T>| {
            let data: Vec<T> = (0..2 * 4 * 2 * 2)
                .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
                .collect();
            g.constant(Array::from_vec(&[2, 4, 2, 2], data))
        };
        RelationBundle {
            context_rows: [mk(g), mk(g)],
            context_cols: cols.then(|| [mk(g), mk(g)]),
            answer_rows: (0..8).map(|_| mk(g)).collect(),
            answer_cols: cols.then(|| (0..8).map(|_| mk(g)).collect()),
        }
    }

    fn reasoner(use_columns: bool) -> (Reasoner, ParamStore<f64>) {
        let r = Reasoner::new(cfg(use_columns), "reasoner").unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        r.init(&mut store, &mut rng);
        (r, store)
    }

    #[test]
    fn answer_probabilities_sum_to_one_over_8_entries() {
        let (r, store) = reasoner(true);
        let mut g = Graph::<f64>::new(0, false);
        let b = bundle(&mut g, 5, true);
        let probs = r.predict_answer(&mut g, &store, &b).unwrap();
        assert_eq!(g.shape(probs), &[2, 8]);
        for row in g.value(probs).data().chunks(8) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    /// Slot-swap trace: the untrained head depends on candidate slots, so
    /// swapping candidates 1 and 2 changes the logits, and swapping back
    /// restores them bit-for-bit.
    #[test]
    fn candidate_slot_swap_changes_logits_consistently() {
        let (r, store) = reasoner(false);
        let run = |swap: bool| {
            let mut g = Graph::<f64>::new(0, false);
            let mut b = bundle(&mut g, 5, false);
            if swap {
                b.answer_rows.swap(1, 2);
            }
            let l = r.answer_logits(&mut g, &store, &b).unwrap();
            g.value(l).data().to_vec()
        };
        let base = run(false);
        let swapped = run(true);
        assert_ne!(base, swapped);
        assert_eq!(base, run(false));
    }

    #[test]
    fn meta_outputs_are_sigmoid_width_12_and_order_free() {
        let (r, store) = reasoner(true);
        let mut g = Graph::<f64>::new(0, false);
        let mut b = bundle(&mut g, 6, true);
        let p1 = r.predict_meta(&mut g, &store, &b).unwrap();
        assert_eq!(g.shape(p1), &[2, 12]);
        assert!(g.value(p1).data().iter().all(|&v| v > 0.0 && v < 1.0));
        // Permuting the four context embeddings leaves the sum unchanged.
        let cols = b.context_cols.unwrap();
        b.context_cols = Some([b.context_rows[1], cols[0]]);
        b.context_rows = [cols[1], b.context_rows[0]];
        let p2 = r.predict_meta(&mut g, &store, &b).unwrap();
        assert_eq!(g.value(p1).data(), g.value(p2).data());
    }

    #[test]
    fn incomplete_bundle_is_usage_error() {
        let (r, store) = reasoner(false);
        let mut g = Graph::<f64>::new(0, false);
        let mut b = bundle(&mut g, 7, false);
        b.answer_rows.truncate(5);
        assert!(matches!(
            r.answer_logits(&mut g, &store, &b),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn beta_zero_reduces_to_answer_cross_entropy() {
        let mut g = Graph::<f64>::new(0, true);
        let logits = g.constant(Array::from_vec(&[1, 8], (0..8).map(|i| i as f64 * 0.1).collect()));
        let meta_logits = g.constant(Array::zeros(&[1, 3]));
        let bits = Array::from_vec(&[1, 3], vec![1.0, 0.0, 1.0]);
        let (total, ans, meta) = loss(&mut g, logits, &[3], meta_logits, &bits, 0.0).unwrap();
        assert!(meta.is_none());
        assert_eq!(g.value(total).item(), g.value(ans).item());
    }

    /// Closed-form check on a 2-candidate, 2-bit toy case.
    #[test]
    fn two_term_loss_matches_hand_computation() {
        let mut g = Graph::<f64>::new(0, true);
        // Use an 8-way head with only two "active" logits; the rest are
        // strongly negative so they contribute (almost) nothing.
        let mut lv = vec![-30.0f64; 8];
        lv[0] = 0.2;
        lv[1] = -0.1;
        let logits = g.constant(Array::from_vec(&[1, 8], lv.clone()));
        let meta_logits = g.constant(Array::from_vec(&[1, 2], vec![0.5, -1.0]));
        let bits = Array::from_vec(&[1, 2], vec![1.0, 0.0]);
        let beta = 10.0;
        let (total, _, _) = loss(&mut g, logits, &[0], meta_logits, &bits, beta).unwrap();

        let zs: Vec<f64> = lv.iter().map(|v| (v - 0.2).exp()).collect();
        let ans = -(zs[0] / zs.iter().sum::<f64>()).ln();
        let bce = (0.5f64.exp().ln_1p() - 0.5) / 2.0 + (-1.0f64).exp().ln_1p() / 2.0;
        let want = ans + beta * bce;
        assert!((g.value(total).item() - want).abs() < 1e-9);
    }

    /// d(loss)/d(logits) = probabilities - one-hot at beta = 0.
    #[test]
    fn loss_gradient_identity_at_beta_zero() {
        let mut g = Graph::<f64>::new(0, true);
        let lv = vec![0.4, -0.3, 1.1, 0.0, 0.2, -0.9, 0.5, 0.7];
        let logits = g.param("logits", &Array::from_vec(&[1, 8], lv.clone()));
        let meta_logits = g.constant(Array::zeros(&[1, 2]));
        let bits = Array::zeros(&[1, 2]);
        let (total, _, _) = loss(&mut g, logits, &[2], meta_logits, &bits, 0.0).unwrap();
        let grads = g.backward(total).unwrap();
        let m = lv.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = lv.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (i, &gv) in grads["logits"].data().iter().enumerate() {
            let want = e[i] / s - if i == 2 { 1.0 } else { 0.0 };
            assert!((gv - want).abs() < 1e-9);
        }
    }
}
