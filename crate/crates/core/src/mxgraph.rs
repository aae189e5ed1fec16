//! Multiplex graph processing over a subset of diagrams.
//!
//! Edges run between distinct layers only, into the last layer. Each edge
//! carries T parallel sub-embeddings, each produced by its own projection
//! and small net over the concatenated node pair. Edges into a target node
//! are aggregated per source layer with four set operations (max, min, sum,
//! mean, presence-masked), the per-layer summaries are combined by the
//! cross-multiplexing sigmoid gate, and a final fully connected layer of
//! size 64 produces node embeddings. Node embeddings and background maps
//! are concatenated and passed through two residual blocks to give the
//! relation embedding of the subset.
//!
//! Edge-mode ablations: `Vanilla` replaces the T parallel sub-nets with one
//! MLP of the same output width; `NoGraph` skips edges entirely and
//! summarizes the raw node grids.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, ResBlock};
use crate::numerics::{Graph, ParamStore, Scalar, Var};
use crate::objrepr::NodeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    Multiplex,
    Vanilla,
    None,
}

/// Architecture parameters for one multiplex graph module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxGraphConfig {
    /// Subset cardinality (3 for matrix rows/columns, 2 for syllogisms).
    pub layers: usize,
    pub edge_mode: EdgeMode,
    /// Node vector dimension coming out of the object representation.
    pub node_dim: usize,
    /// T parallel sub-embeddings per edge.
    pub edge_sublayers: usize,
    pub edge_hidden: usize,
    /// d_e output units per sub-layer.
    pub edge_out: usize,
    /// Hidden width of the single vanilla-edge MLP.
    pub vanilla_hidden: usize,
    /// Output width of the final gated fully connected layer.
    pub node_out: usize,
    pub bg_channels: usize,
    /// Channels of the two summarisation residual blocks.
    pub summ_channels: usize,
}

impl MxGraphConfig {
    /// PGM-style defaults: 6 sub-layers with 32 hidden and 8 output units.
    pub fn pgm(node_dim: usize, bg_channels: usize) -> Self {
        MxGraphConfig {
            layers: 3,
            edge_mode: EdgeMode::Multiplex,
            node_dim,
            edge_sublayers: 6,
            edge_hidden: 32,
            edge_out: 8,
            vanilla_hidden: 6 * 32,
            node_out: 64,
            bg_channels,
            summ_channels: 64,
        }
    }

    /// RAVEN-style defaults: 4 sub-layers with 16 hidden units.
    pub fn raven(node_dim: usize, bg_channels: usize) -> Self {
        MxGraphConfig {
            edge_sublayers: 4,
            edge_hidden: 16,
            vanilla_hidden: 4 * 16,
            ..MxGraphConfig::pgm(node_dim, bg_channels)
        }
    }

    /// Syllogism defaults: 2 layers (self-multiplexing), 4 sub-layers of
    /// dimension 32.
    pub fn syllogism(node_dim: usize, bg_channels: usize) -> Self {
        MxGraphConfig {
            layers: 2,
            edge_sublayers: 4,
            edge_hidden: 32,
            edge_out: 32,
            vanilla_hidden: 4 * 32,
            ..MxGraphConfig::pgm(node_dim, bg_channels)
        }
    }

    /// Total per-edge embedding length T * d_e.
    pub fn edge_len(&self) -> usize {
        self.edge_sublayers * self.edge_out
    }

    /// Number of gate heads: one per source layer.
    pub fn gate_heads(&self) -> usize {
        self.layers - 1
    }
}

#[derive(Debug, Clone)]
pub struct MxGraph {
    pub cfg: MxGraphConfig,
    edge_nets: Vec<Mlp>,
    vanilla_net: Option<Mlp>,
    gate: Linear,
    fuse: Linear,
    summ1: ResBlock,
    summ2: ResBlock,
}

impl MxGraph {
    pub fn new(cfg: MxGraphConfig, name: &str) -> Result<Self> {
        if cfg.layers < 2 {
            return Err(Error::Config(format!(
                "multiplex graph needs at least 2 layers, got {}",
                cfg.layers
            )));
        }
        let pair_dim = 2 * cfg.node_dim;
        let agg_len = 4 * cfg.edge_len();
        let gate_width = cfg.gate_heads() * agg_len;
        let edge_nets = (0..cfg.edge_sublayers)
            .map(|t| Mlp::new(&format!("{name}/t{t}"), &[pair_dim, cfg.edge_hidden, cfg.edge_out], true))
            .collect();
        let vanilla_net = matches!(cfg.edge_mode, EdgeMode::Vanilla).then(|| {
            Mlp::new(&format!("{name}/vanilla"), &[pair_dim, cfg.vanilla_hidden, cfg.edge_len()], true)
        });
        let summ_in = match cfg.edge_mode {
            EdgeMode::None => cfg.layers * (cfg.node_dim + cfg.bg_channels),
            _ => cfg.node_out + cfg.layers * cfg.bg_channels,
        };
        Ok(MxGraph {
            gate: Linear::new(format!("{name}/gate"), gate_width, gate_width),
            fuse: Linear::new(format!("{name}/fuse"), gate_width, cfg.node_out),
            summ1: ResBlock::new(&format!("{name}/summ1"), summ_in, cfg.summ_channels, 1),
            summ2: ResBlock::new(&format!("{name}/summ2"), cfg.summ_channels, cfg.summ_channels, 1),
            edge_nets,
            vanilla_net,
            cfg,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        match self.cfg.edge_mode {
            EdgeMode::Multiplex => {
                for net in &self.edge_nets {
                    net.init(store, rng);
                }
            }
            EdgeMode::Vanilla => self.vanilla_net.as_ref().unwrap().init(store, rng),
            EdgeMode::None => {}
        }
        if self.cfg.edge_mode != EdgeMode::None {
            self.gate.init(store, rng);
            self.fuse.init(store, rng);
        }
        self.summ1.init(store, rng);
        self.summ2.init(store, rng);
    }

    /// Multiplex edge block from one source layer into the last layer:
    /// [B, N_src * N_tgt, T * d_e], rows ordered (src, tgt).
    pub fn multiplex_edges<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        src_nodes: Var,
        tgt_nodes: Var,
    ) -> Result<Var> {
        let pairs = g.pair_concat(src_nodes, tgt_nodes)?;
        match self.cfg.edge_mode {
            EdgeMode::Multiplex => {
                let subs: Vec<Var> = self
                    .edge_nets
                    .iter()
                    .map(|net| net.forward(g, store, pairs))
                    .collect::<Result<_>>()?;
                g.concat(&subs, 2)
            }
            EdgeMode::Vanilla => self.vanilla_net.as_ref().unwrap().forward(g, store, pairs),
            EdgeMode::None => Err(Error::Usage("edge_mode=none has no edges".into())),
        }
    }

    /// Aggregate one source layer's edges into per-target summaries
    /// [B, N_tgt, 4 * edge_len], presence-masked.
    pub fn aggregate_edges<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        edges: Var,
        src_presence: Var,
        n_src: usize,
        n_tgt: usize,
    ) -> Result<Var> {
        let e = self.cfg.edge_len();
        let shape = g.shape(edges).to_vec();
        let b = shape[0];
        let grouped = g.reshape(edges, &[b, n_src, n_tgt, e])?;
        g.aggregate_nodes(grouped, src_presence)
    }

    /// Cross-multiplexing gate over the per-source-layer summaries,
    /// followed by the final fully connected layer. Input summaries each
    /// [B, N, 4 * edge_len]; output [B, N, node_out].
    pub fn cross_multiplex_gate<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        summaries: &[Var],
    ) -> Result<Var> {
        if summaries.len() != self.cfg.gate_heads() {
            return Err(Error::Usage(format!(
                "expected {} source-layer summaries, got {}",
                self.cfg.gate_heads(),
                summaries.len()
            )));
        }
        let first = g.shape(summaries[0]).to_vec();
        for &s in summaries {
            if g.shape(s) != first {
                return Err(Error::Usage("mismatched summary shapes".into()));
            }
        }
        let concat = if summaries.len() == 1 {
            summaries[0]
        } else {
            g.concat(summaries, 2)?
        };
        let gates_lin = self.gate.forward(g, store, concat)?;
        let gates = g.sigmoid(gates_lin);
        let gated = g.mul(concat, gates)?;
        let fused = self.fuse.forward(g, store, gated)?;
        Ok(g.relu(fused))
    }

    /// Summarize a full subset into its relation embedding
    /// [B, summ_channels, h, w].
    pub fn subset_relation<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        layers: &[&NodeSet],
    ) -> Result<Var> {
        if layers.len() != self.cfg.layers {
            return Err(Error::Config(format!(
                "subset of {} layers fed to a {}-layer graph",
                layers.len(),
                self.cfg.layers
            )));
        }
        let side = layers[0].map_side;
        let nshape = g.shape(layers[0].nodes).to_vec();
        let (b, n) = (nshape[0], nshape[1]);

        let canvas = match self.cfg.edge_mode {
            EdgeMode::None => {
                // Ablation baseline: no pairwise structure; each layer's
                // masked node grid goes straight to summarisation.
                let mut grids = Vec::new();
                for ns in layers {
                    let masked = g.mul_bcast_last(ns.nodes, ns.presence)?;
                    grids.push(self.to_canvas(g, masked, ns, b, n, side)?);
                }
                g.concat(&grids, 1)?
            }
            _ => {
                let target = layers[self.cfg.layers - 1];
                let mut summaries = Vec::new();
                for src in &layers[..self.cfg.layers - 1] {
                    let edges = self.multiplex_edges(g, store, src.nodes, target.nodes)?;
                    summaries.push(self.aggregate_edges(g, edges, src.presence, n, n)?);
                }
                let fv = self.cross_multiplex_gate(g, store, &summaries)?;
                // Absent target nodes contribute nothing downstream.
                let fv = g.mul_bcast_last(fv, target.presence)?;
                self.to_canvas(g, fv, target, b, n, side)?
            }
        };
        let mut feats = vec![canvas];
        for ns in layers {
            feats.push(ns.background);
        }
        let stacked = g.concat(&feats, 1)?;
        let s = self.summ1.forward(g, store, stacked)?;
        self.summ2.forward(g, store, s)
    }

    /// Write per-node embeddings [B, N, C] onto a [B, C, h, w] canvas:
    /// grid-feature nodes reshape back onto their locations, attended nodes
    /// are splatted at their inverse-transform positions.
    fn to_canvas<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        values: Var,
        ns: &NodeSet,
        b: usize,
        n: usize,
        side: usize,
    ) -> Result<Var> {
        let c = *g.shape(values).last().unwrap();
        match ns.points {
            Some(points) => g.splat_points(values, points, side, side),
            None => {
                debug_assert_eq!(n, side * side);
                let grid = g.reshape(values, &[b, side, side, c])?;
                g.permute(grid, &[0, 3, 1, 2])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;
    use crate::numerics::Array;

    fn tiny_cfg(layers: usize, mode: EdgeMode) -> MxGraphConfig {
        MxGraphConfig {
            layers,
            edge_mode: mode,
            node_dim: 6,
            edge_sublayers: 2,
            edge_hidden: 5,
            edge_out: 3,
            vanilla_hidden: 10,
            node_out: 7,
            bg_channels: 4,
            summ_channels: 8,
        }
    }

    fn make_nodeset<T: Scalar>(
        g: &mut Graph<T>,
        b: usize,
        side: usize,
        d: usize,
        bg_c: usize,
        seed: u64,
    ) -> NodeSet {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = side * side;
        let nodes = Array::from_vec(
            &[b, n, d],
            (0..b * n * d).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect(),
        );
        let bg = Array::from_vec(
            &[b, bg_c, side, side],
            (0..b * bg_c * side * side)
                .map(|_| T::from_f64(rng.random_range(-1.0..1.0)))
                .collect(),
        );
        NodeSet {
            nodes: g.constant(nodes),
            presence: g.constant(Array::full(&[b, n], T::ONE)),
            background: g.constant(bg),
            points: None,
            map_side: side,
        }
    }

    #[test]
    fn pgm_config_edge_length_is_48() {
        assert_eq!(MxGraphConfig::pgm(64, 48).edge_len(), 48);
    }

    #[test]
    fn raven_config_edge_length_is_32() {
        assert_eq!(MxGraphConfig::raven(64, 48).edge_len(), 32);
    }

    #[test]
    fn gate_head_count_is_layers_minus_one() {
        assert_eq!(MxGraphConfig::pgm(64, 48).gate_heads(), 2);
        assert_eq!(MxGraphConfig::syllogism(64, 48).gate_heads(), 1);
        assert!(MxGraph::new(tiny_cfg(1, EdgeMode::Multiplex), "g").is_err());
    }

    #[test]
    fn edges_are_inter_layer_only_and_sized_right() {
        // The edge block for a source layer has exactly N_src * N_tgt rows:
        // pairs never form within a layer.
        let cfg = tiny_cfg(3, EdgeMode::Multiplex);
        let graph_mod = MxGraph::new(cfg.clone(), "mxgraph").unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        graph_mod.init(&mut store, &mut rng);
        let mut g = Graph::<f64>::new(0, true);
        let a = make_nodeset(&mut g, 2, 2, 6, 4, 1);
        let bset = make_nodeset(&mut g, 2, 2, 6, 4, 2);
        let edges = graph_mod
            .multiplex_edges(&mut g, &store, a.nodes, bset.nodes)
            .unwrap();
        assert_eq!(g.shape(edges), &[2, 16, cfg.edge_len()]);
    }

    #[test]
    fn gate_zero_parameters_give_half_gates() {
        let cfg = tiny_cfg(3, EdgeMode::Multiplex);
        let graph_mod = MxGraph::new(cfg.clone(), "mx").unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        graph_mod.init(&mut store, &mut rng);
        // Zero the gate layer: sigmoid(0) = 0.5 everywhere, so the gated
        // concat equals half the raw concat.
        let w = cfg.gate_heads() * 4 * cfg.edge_len();
        store.set("mx/gate/weight", Array::zeros(&[w, w])).unwrap();
        store.set("mx/gate/bias", Array::zeros(&[w])).unwrap();

        let mut g = Graph::<f64>::new(0, true);
        let s1 = g.constant(Array::full(&[1, 2, 4 * cfg.edge_len()], 0.8));
        let s2 = g.constant(Array::full(&[1, 2, 4 * cfg.edge_len()], -0.4));
        let out = graph_mod.cross_multiplex_gate(&mut g, &store, &[s1, s2]).unwrap();
        assert_eq!(g.shape(out), &[1, 2, cfg.node_out]);

        // Same computation by hand: fuse(0.5 * concat) with ReLU.
        let mut g2 = Graph::<f64>::new(0, true);
        let c1 = g2.constant(Array::full(&[1, 2, 4 * cfg.edge_len()], 0.4));
        let c2 = g2.constant(Array::full(&[1, 2, 4 * cfg.edge_len()], -0.2));
        let cc = g2.concat(&[c1, c2], 2).unwrap();
        let fused = graph_mod.fuse.forward(&mut g2, &store, cc).unwrap();
        let want = g2.relu(fused);
        assert_eq!(g.value(out).data(), g2.value(want).data());
    }

    #[test]
    fn subset_relation_output_channels_and_determinism() {
        for mode in [EdgeMode::Multiplex, EdgeMode::Vanilla, EdgeMode::None] {
            let cfg = tiny_cfg(3, mode);
            let graph_mod = MxGraph::new(cfg.clone(), "mx").unwrap();
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            graph_mod.init(&mut store, &mut rng);
            let run = || {
                let mut g = Graph::<f64>::new(0, false);
                let l1 = make_nodeset(&mut g, 2, 2, 6, 4, 10);
                let l2 = make_nodeset(&mut g, 2, 2, 6, 4, 11);
                let l3 = make_nodeset(&mut g, 2, 2, 6, 4, 12);
                let r = graph_mod.subset_relation(&mut g, &store, &[&l1, &l2, &l3]).unwrap();
                (g.shape(r).to_vec(), g.value(r).data().to_vec())
            };
            let (shape, v1) = run();
            assert_eq!(shape, vec![2, cfg.summ_channels, 2, 2], "{mode:?}");
            assert_eq!(v1, run().1, "{mode:?} not deterministic");
        }
    }

    #[test]
    fn wrong_layer_count_is_an_error() {
        let graph_mod = MxGraph::new(tiny_cfg(3, EdgeMode::Multiplex), "mx").unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        graph_mod.init(&mut store, &mut rng);
        let mut g = Graph::<f64>::new(0, true);
        let l1 = make_nodeset(&mut g, 1, 2, 6, 4, 1);
        let l2 = make_nodeset(&mut g, 1, 2, 6, 4, 2);
        assert!(graph_mod.subset_relation(&mut g, &store, &[&l1, &l2]).is_err());
    }

    /// Permuting same-layer source nodes leaves the relation embedding
    /// unchanged (set aggregation is order free).
    #[test]
    fn permutation_invariance_over_source_nodes() {
        let cfg = tiny_cfg(3, EdgeMode::Multiplex);
        let graph_mod = MxGraph::new(cfg, "mx").unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        graph_mod.init(&mut store, &mut rng);

        let run = |swap: bool| {
            let mut g = Graph::<f64>::new(0, false);
            let mut l1 = make_nodeset(&mut g, 1, 2, 6, 4, 20);
            let l2 = make_nodeset(&mut g, 1, 2, 6, 4, 21);
            let l3 = make_nodeset(&mut g, 1, 2, 6, 4, 22);
            if swap {
                // Swap two nodes of source layer 1.
                let v = g.value(l1.nodes).clone();
                let mut data = v.data().to_vec();
                for d in 0..6 {
                    data.swap(d, 6 + d);
                }
                l1.nodes = g.constant(Array::from_vec(v.shape(), data));
            }
            let r = graph_mod.subset_relation(&mut g, &store, &[&l1, &l2, &l3]).unwrap();
            g.value(r).data().to_vec()
        };
        let base = run(false);
        let swapped = run(true);
        for (a, b) in base.iter().zip(&swapped) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Masking one source node (presence 0) equals removing it from the
    /// node set entirely.
    #[test]
    fn presence_mask_equals_node_removal() {
        let cfg = tiny_cfg(2, EdgeMode::Multiplex);
        let graph_mod = MxGraph::new(cfg.clone(), "mx").unwrap();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        graph_mod.init(&mut store, &mut rng);

        let mut g = Graph::<f64>::new(0, false);
        let src = make_nodeset(&mut g, 1, 2, 6, 4, 30);
        let tgt = make_nodeset(&mut g, 1, 2, 6, 4, 31);

        // Route A: presence mask zeroing source node 2.
        let masked_pres = g.constant(Array::from_vec(&[1, 4], vec![1.0, 1.0, 0.0, 1.0]));
        let edges = graph_mod.multiplex_edges(&mut g, &store, src.nodes, tgt.nodes).unwrap();
        let agg_masked = graph_mod.aggregate_edges(&mut g, edges, masked_pres, 4, 4).unwrap();

        // Route B: rebuild the source layer without node 2.
        let kept: Vec<f64> = {
            let v = g.value(src.nodes).data().to_vec();
            let mut out = Vec::new();
            for node in [0usize, 1, 3] {
                out.extend_from_slice(&v[node * 6..(node + 1) * 6]);
            }
            out
        };
        let src3 = g.constant(Array::from_vec(&[1, 3, 6], kept));
        let pres3 = g.constant(Array::full(&[1, 3], 1.0));
        let edges3 = graph_mod.multiplex_edges(&mut g, &store, src3, tgt.nodes).unwrap();
        let agg_removed = graph_mod.aggregate_edges(&mut g, edges3, pres3, 3, 4).unwrap();

        assert_eq!(g.value(agg_masked).data(), g.value(agg_removed).data());
    }
}
