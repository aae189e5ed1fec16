//! Assembled models: the full matrix-reasoning network (object
//! representation, per-subset multiplex graphs, reasoning head) and the
//! two-layer syllogism variant.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mxgraph::{EdgeMode, MxGraph, MxGraphConfig};
use crate::nn::{Conv2d, Mlp};
use crate::numerics::{Array, Graph, ParamStore, Scalar, Var};
use crate::objrepr::{NodeSet, ObjRepr, ObjReprConfig};
use crate::reasoner::{Reasoner, ReasonerConfig, RelationBundle, NUM_ANSWERS};
use crate::taskgen::syllogism::SET_RELATIONS;

pub const PANELS_PER_TASK: usize = 16;

/// Which subsets carry relations: rows and columns (PGM-style) or rows
/// only (RAVEN-style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetStyle {
    RowsAndColumns,
    RowsOnly,
}

/// Full architecture configuration of the matrix model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub repr: ObjReprConfig,
    pub edge_mode: EdgeMode,
    pub style: SubsetStyle,
    pub edge_sublayers: usize,
    pub edge_hidden: usize,
    pub edge_out: usize,
    pub node_out: usize,
    pub summ_channels: usize,
    pub trunk_channels: (usize, usize),
    pub meta_width: usize,
}

impl ModelConfig {
    /// Paper-sized PGM-style model.
    pub fn pgm_default(meta_width: usize) -> Self {
        ModelConfig {
            repr: ObjReprConfig::default(),
            edge_mode: EdgeMode::Multiplex,
            style: SubsetStyle::RowsAndColumns,
            edge_sublayers: 6,
            edge_hidden: 32,
            edge_out: 8,
            node_out: 64,
            summ_channels: 64,
            trunk_channels: (128, 256),
            meta_width,
        }
    }

    /// Paper-sized RAVEN-style model (rows only, 4 edge sub-layers).
    pub fn raven_default(meta_width: usize) -> Self {
        ModelConfig {
            style: SubsetStyle::RowsOnly,
            edge_sublayers: 4,
            edge_hidden: 16,
            ..ModelConfig::pgm_default(meta_width)
        }
    }

    /// Scaled-down configuration for CPU experiments on 64x64 panels.
    pub fn desk(meta_width: usize, panel_side: usize) -> Self {
        ModelConfig {
            repr: ObjReprConfig {
                panel_side,
                conv1_channels: 16,
                res1_channels: 24,
                node_dim: 32,
                bg_channels: 16,
                ..ObjReprConfig::default()
            },
            edge_mode: EdgeMode::Multiplex,
            style: SubsetStyle::RowsOnly,
            edge_sublayers: 4,
            edge_hidden: 16,
            edge_out: 8,
            node_out: 48,
            summ_channels: 48,
            trunk_channels: (96, 128),
            meta_width,
        }
    }

    fn graph_config(&self) -> MxGraphConfig {
        MxGraphConfig {
            layers: 3,
            edge_mode: self.edge_mode,
            node_dim: self.repr.node_dim,
            edge_sublayers: self.edge_sublayers,
            edge_hidden: self.edge_hidden,
            edge_out: self.edge_out,
            vanilla_hidden: self.edge_sublayers * self.edge_hidden,
            node_out: self.node_out,
            bg_channels: self.repr.bg_channels,
            summ_channels: self.summ_channels,
        }
    }

    fn reasoner_config(&self) -> ReasonerConfig {
        ReasonerConfig {
            summ_channels: self.summ_channels,
            map_side: self.repr.map_side(),
            use_columns: self.style == SubsetStyle::RowsAndColumns,
            trunk_channels: self.trunk_channels,
            meta_width: self.meta_width,
        }
    }
}

/// Model outputs for one batch.
pub struct ModelOutput {
    pub answer_logits: Var,
    pub meta_logits: Var,
}

pub struct MxgNet {
    pub cfg: ModelConfig,
    repr: ObjRepr,
    graph: MxGraph,
    reasoner: Reasoner,
}

impl MxgNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        Ok(MxgNet {
            repr: ObjRepr::new(cfg.repr.clone())?,
            graph: MxGraph::new(cfg.graph_config(), "mxgraph")?,
            reasoner: Reasoner::new(cfg.reasoner_config(), "reasoner")?,
            cfg,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.repr.init(store, rng);
        self.graph.init(store, rng);
        self.reasoner.init(store, rng);
    }

    pub fn new_store<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        use rand_chacha::rand_core::SeedableRng;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init(&mut store, &mut rng);
        store
    }

    /// Slice one panel's node set out of the batched encodings.
    fn panel_nodeset<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        all: &NodeSet,
        batch: usize,
        panel: usize,
    ) -> Result<NodeSet> {
        let idx: Vec<u32> = (0..batch).map(|b| (b * PANELS_PER_TASK + panel) as u32).collect();
        Ok(NodeSet {
            nodes: g.gather_rows(all.nodes, &idx)?,
            presence: g.gather_rows(all.presence, &idx)?,
            background: g.gather_rows(all.background, &idx)?,
            points: match all.points {
                Some(p) => Some(g.gather_rows(p, &idx)?),
                None => None,
            },
            map_side: all.map_side,
        })
    }

    /// Forward pass over a batch of tasks. `rasters` is [B, 16, S, S] with
    /// panels normalized to [0, 1]: 8 context panels then 8 candidates.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        rasters: &Array<T>,
    ) -> Result<ModelOutput> {
        let shape = rasters.shape().to_vec();
        if shape.len() != 4 || shape[1] != PANELS_PER_TASK {
            return Err(Error::Usage(format!(
                "model input must be [B, 16, S, S], got {shape:?}"
            )));
        }
        let (b, s) = (shape[0], shape[2]);
        let input = g.constant(rasters.clone());
        let flat = g.reshape(input, &[b * PANELS_PER_TASK, 1, s, s])?;
        let all = self.repr.forward(g, store, flat)?;

        // Panel node sets are materialized once and reused across subsets.
        let panels: Vec<NodeSet> = (0..PANELS_PER_TASK)
            .map(|p| self.panel_nodeset(g, &all, b, p))
            .collect::<Result<_>>()?;

        let relation = |g: &mut Graph<T>, a: usize, bb: usize, c: usize| -> Result<Var> {
            self.graph
                .subset_relation(g, store, &[&panels[a], &panels[bb], &panels[c]])
        };

        let context_rows = [relation(g, 0, 1, 2)?, relation(g, 3, 4, 5)?];
        let answer_rows: Vec<Var> = (0..NUM_ANSWERS)
            .map(|c| relation(g, 6, 7, 8 + c))
            .collect::<Result<_>>()?;
        let (context_cols, answer_cols) = match self.cfg.style {
            SubsetStyle::RowsOnly => (None, None),
            SubsetStyle::RowsAndColumns => {
                let ctx = [relation(g, 0, 3, 6)?, relation(g, 1, 4, 7)?];
                let ans: Vec<Var> = (0..NUM_ANSWERS)
                    .map(|c| relation(g, 2, 5, 8 + c))
                    .collect::<Result<_>>()?;
                (Some(ctx), Some(ans))
            }
        };
        let bundle = RelationBundle { context_rows, context_cols, answer_rows, answer_cols };
        let answer_logits = self.reasoner.answer_logits(g, store, &bundle)?;
        let meta_logits = self.reasoner.meta_logits(g, store, &bundle)?;
        Ok(ModelOutput { answer_logits, meta_logits })
    }
}

/// Syllogism model: shared backbone over the two premise panels, a 2-layer
/// multiplex graph (self-multiplexing), a convolutional reduction of the
/// node canvas, and an MLP scoring each candidate conclusion relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyllogismConfig {
    pub repr: ObjReprConfig,
    pub edge_sublayers: usize,
    pub edge_out: usize,
    pub reason_hidden: usize,
}

impl SyllogismConfig {
    /// 4 multiplex sub-layers of dimension 32 on 64-pixel panels.
    pub fn default_for_side(panel_side: usize) -> Self {
        SyllogismConfig {
            repr: ObjReprConfig {
                panel_side,
                conv1_channels: 16,
                res1_channels: 24,
                node_dim: 32,
                bg_channels: 16,
                ..ObjReprConfig::default()
            },
            edge_sublayers: 4,
            edge_out: 32,
            reason_hidden: 128,
        }
    }
}

pub struct SyllogismNet {
    pub cfg: SyllogismConfig,
    repr: ObjRepr,
    graph: MxGraph,
    reduce: Conv2d,
    reason: Mlp,
}

impl SyllogismNet {
    pub fn new(cfg: SyllogismConfig) -> Result<Self> {
        let gcfg = MxGraphConfig {
            layers: 2,
            edge_mode: EdgeMode::Multiplex,
            node_dim: cfg.repr.node_dim,
            edge_sublayers: cfg.edge_sublayers,
            edge_hidden: 32,
            edge_out: cfg.edge_out,
            vanilla_hidden: cfg.edge_sublayers * 32,
            node_out: 64,
            bg_channels: cfg.repr.bg_channels,
            summ_channels: 64,
        };
        let side = cfg.repr.map_side();
        let reduce = Conv2d::new("syll/reduce", 64, 32, 3, 1, 1);
        let reason_in = 32 * side * side + 2 * cfg.repr.node_dim * side * side;
        Ok(SyllogismNet {
            repr: ObjRepr::new(cfg.repr.clone())?,
            graph: MxGraph::new(gcfg, "mxgraph")?,
            reduce,
            reason: Mlp::new("syll/reason", &[reason_in, cfg.reason_hidden, SET_RELATIONS.len()], true),
            cfg,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.repr.init(store, rng);
        self.graph.init(store, rng);
        self.reduce.init(store, rng);
        self.reason.init(store, rng);
    }

    pub fn new_store<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        use rand_chacha::rand_core::SeedableRng;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init(&mut store, &mut rng);
        store
    }

    /// Premise rasters [B, 2, S, S] -> conclusion validity logits [B, 5].
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        premises: &Array<T>,
    ) -> Result<Var> {
        let shape = premises.shape().to_vec();
        if shape.len() != 4 || shape[1] != 2 {
            return Err(Error::Usage(format!(
                "syllogism input must be [B, 2, S, S], got {shape:?}"
            )));
        }
        let (b, s) = (shape[0], shape[2]);
        let input = g.constant(premises.clone());
        let flat = g.reshape(input, &[b * 2, 1, s, s])?;
        let all = self.repr.forward(g, store, flat)?;

        let pick = |g: &mut Graph<T>, which: usize| -> Result<NodeSet> {
            let idx: Vec<u32> = (0..b).map(|i| (i * 2 + which) as u32).collect();
            Ok(NodeSet {
                nodes: g.gather_rows(all.nodes, &idx)?,
                presence: g.gather_rows(all.presence, &idx)?,
                background: g.gather_rows(all.background, &idx)?,
                points: None,
                map_side: all.map_side,
            })
        };
        let p1 = pick(g, 0)?;
        let p2 = pick(g, 1)?;
        let rel = self.graph.subset_relation(g, store, &[&p1, &p2])?;
        let reduced = self.reduce.forward(g, store, rel)?;
        let reduced = g.relu(reduced);

        // Reasoning input: graph embedding plus both premises' raw grids.
        let side = all.map_side;
        let rflat = g.reshape(reduced, &[b, 32 * side * side])?;
        let n1 = g.reshape(p1.nodes, &[b, self.cfg.repr.node_dim * side * side])?;
        let n2 = g.reshape(p2.nodes, &[b, self.cfg.repr.node_dim * side * side])?;
        let cat = g.concat(&[rflat, n1, n2], 1)?;
        self.reason.forward(g, store, cat)
    }
}

/// Normalize u8 rasters into a [B, panels, S, S] float array in [0, 1].
pub fn rasters_to_array<T: Scalar>(rasters: &[&[Vec<u8>]], side: usize) -> Array<T> {
    let b = rasters.len();
    let panels = if b > 0 { rasters[0].len() } else { 0 };
    let mut data = Vec::with_capacity(b * panels * side * side);
    let inv = 1.0 / 255.0;
    for sample in rasters {
        for panel in *sample {
            debug_assert_eq!(panel.len(), side * side);
            data.extend(panel.iter().map(|&p| T::from_f64(p as f64 * inv)));
        }
    }
    Array::from_vec(&[b, panels, side, side], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objrepr::ReprMode;

    fn tiny_model(style: SubsetStyle, edge_mode: EdgeMode) -> MxgNet {
        let cfg = ModelConfig {
            repr: ObjReprConfig {
                panel_side: 16,
                mode: ReprMode::Grid,
                conv1_channels: 4,
                res1_channels: 6,
                node_dim: 8,
                bg_channels: 6,
                res1_stride: 1,
                res2_stride: 1,
                ..ObjReprConfig::default()
            },
            edge_mode,
            style,
            edge_sublayers: 2,
            edge_hidden: 6,
            edge_out: 4,
            node_out: 10,
            summ_channels: 8,
            trunk_channels: (8, 12),
            meta_width: 3,
        };
        MxgNet::new(cfg).unwrap()
    }

    fn random_input(b: usize, s: usize, seed: u64) -> Array<f32> {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_vec(
            &[b, 16, s, s],
            (0..b * 16 * s * s).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
    }

    #[test]
    fn forward_shapes_rows_only() {
        let model = tiny_model(SubsetStyle::RowsOnly, EdgeMode::Multiplex);
        let store = model.new_store::<f32>(1);
        let mut g = Graph::<f32>::new(0, false);
        let out = model.forward(&mut g, &store, &random_input(2, 16, 3)).unwrap();
        assert_eq!(g.shape(out.answer_logits), &[2, 8]);
        assert_eq!(g.shape(out.meta_logits), &[2, 3]);
    }

    #[test]
    fn forward_shapes_rows_and_columns() {
        let model = tiny_model(SubsetStyle::RowsAndColumns, EdgeMode::Vanilla);
        let store = model.new_store::<f32>(2);
        let mut g = Graph::<f32>::new(0, false);
        let out = model.forward(&mut g, &store, &random_input(2, 16, 3)).unwrap();
        assert_eq!(g.shape(out.answer_logits), &[2, 8]);
    }

    /// Batch-permutation check: swapping two tasks in the batch permutes
    /// the outputs and changes nothing else (evaluation mode).
    #[test]
    fn batch_permutation_permutes_outputs() {
        let model = tiny_model(SubsetStyle::RowsOnly, EdgeMode::Multiplex);
        let store = model.new_store::<f32>(4);
        let input = random_input(2, 16, 9);
        let mut swapped_data = input.data().to_vec();
        let half = swapped_data.len() / 2;
        swapped_data.rotate_left(half);
        let swapped = Array::from_vec(input.shape(), swapped_data);

        let run = |arr: &Array<f32>| {
            let mut g = Graph::<f32>::new(0, false);
            let out = model.forward(&mut g, &store, arr).unwrap();
            g.value(out.answer_logits).data().to_vec()
        };
        let base = run(&input);
        let perm = run(&swapped);
        assert_eq!(&base[..8], &perm[8..]);
        assert_eq!(&base[8..], &perm[..8]);
    }

    #[test]
    fn syllogism_forward_shape() {
        let cfg = SyllogismConfig {
            repr: ObjReprConfig {
                panel_side: 16,
                conv1_channels: 4,
                res1_channels: 6,
                node_dim: 8,
                bg_channels: 6,
                res1_stride: 1,
                res2_stride: 1,
                ..ObjReprConfig::default()
            },
            edge_sublayers: 2,
            edge_out: 8,
            reason_hidden: 16,
        };
        let model = SyllogismNet::new(cfg).unwrap();
        let store = model.new_store::<f32>(3);
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = Array::from_vec(
            &[3, 2, 16, 16],
            (0..3 * 2 * 16 * 16).map(|_| rng.random_range(0.0..1.0)).collect(),
        );
        let mut g = Graph::<f32>::new(0, false);
        let out = model.forward(&mut g, &store, &input).unwrap();
        assert_eq!(g.shape(out), &[3, 5]);
    }
}
