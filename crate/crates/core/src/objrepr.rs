//! Object-level representation: turns each panel raster into a layered set
//! of node vectors plus a background feature map, via CNN grid features or
//! spatial attention.
//!
//! Backbone: one stride-2 conv, max-pool, two residual blocks (3x3
//! kernels). Grid mode reads every spatial location of the final map as one
//! node with presence 1. Attention mode runs a two-conv head emitting a
//! presence logit (Gumbel-Sigmoid sampled) and scale/translation parameters
//! per location, samples a fixed 4x4 window through the bilinear grid
//! sampler and encodes it into the node vector. The background encoder is
//! one further residual block.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, ResBlock};
use crate::numerics::{Array, Graph, ParamStore, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReprMode {
    Grid,
    Attention,
}

/// Architecture parameters for the object-representation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjReprConfig {
    pub panel_side: usize,
    pub mode: ReprMode,
    pub conv1_channels: usize,
    pub res1_channels: usize,
    /// Channels of the final backbone map; doubles as the node dimension.
    pub node_dim: usize,
    pub bg_channels: usize,
    pub res1_stride: usize,
    pub res2_stride: usize,
    pub gumbel_temperature: f64,
    pub attn_hidden: usize,
    /// Side of the window sampled per attended object.
    pub attn_window: usize,
}

impl Default for ObjReprConfig {
    fn default() -> Self {
        ObjReprConfig {
            panel_side: 80,
            mode: ReprMode::Grid,
            conv1_channels: 32,
            res1_channels: 48,
            node_dim: 64,
            bg_channels: 48,
            res1_stride: 2,
            res2_stride: 2,
            gumbel_temperature: 0.7,
            attn_hidden: 32,
            attn_window: 4,
        }
    }
}

impl ObjReprConfig {
    /// Spatial side of the final feature map given the strides.
    pub fn map_side(&self) -> usize {
        let after_conv = self.panel_side.div_ceil(2);
        let after_pool = after_conv / 2;
        let after_res1 = after_pool.div_ceil(self.res1_stride);
        after_res1.div_ceil(self.res2_stride)
    }

    /// Nodes per panel.
    pub fn node_count(&self) -> usize {
        self.map_side() * self.map_side()
    }
}

/// Graph handles for one batch of panels.
pub struct NodeSet {
    /// [R, N, D] node vectors.
    pub nodes: Var,
    /// [R, N] presence weights in [0, 1]; all ones in grid mode.
    pub presence: Var,
    /// [R, C_bg, h, w] background feature map.
    pub background: Var,
    /// [R, N, 2] normalized canvas positions (attention mode only).
    pub points: Option<Var>,
    pub map_side: usize,
}

#[derive(Debug, Clone)]
pub struct ObjRepr {
    pub cfg: ObjReprConfig,
    conv1: ConvBnRelu,
    res1: ResBlock,
    res2: ResBlock,
    bg: ResBlock,
    attn_head: Option<(ConvBnRelu, Conv2d)>,
    patch_enc: Option<Conv2d>,
}

impl ObjRepr {
    pub fn new(cfg: ObjReprConfig) -> Result<Self> {
        if cfg.map_side() < 1 || cfg.panel_side < 16 {
            return Err(Error::Config(format!(
                "panel side {} too small for the backbone strides",
                cfg.panel_side
            )));
        }
        let attn = matches!(cfg.mode, ReprMode::Attention);
        if attn && cfg.map_side() < cfg.attn_window {
            return Err(Error::Config(format!(
                "attention window {} exceeds feature map side {}",
                cfg.attn_window,
                cfg.map_side()
            )));
        }
        Ok(ObjRepr {
            conv1: ConvBnRelu::new("objrepr/conv1", 1, cfg.conv1_channels, 3, 2, 1),
            res1: ResBlock::new("objrepr/res1", cfg.conv1_channels, cfg.res1_channels, cfg.res1_stride),
            res2: ResBlock::new("objrepr/res2", cfg.res1_channels, cfg.node_dim, cfg.res2_stride),
            bg: ResBlock::new("objrepr/bg", cfg.node_dim, cfg.bg_channels, 1),
            attn_head: attn.then(|| {
                (
                    ConvBnRelu::new("objrepr/attn1", cfg.node_dim, cfg.attn_hidden, 3, 1, 1),
                    Conv2d::new("objrepr/attn2", cfg.attn_hidden, 5, 3, 1, 1),
                )
            }),
            patch_enc: attn.then(|| {
                Conv2d::new("objrepr/patch", cfg.node_dim, cfg.node_dim, cfg.attn_window, 1, 0)
            }),
            cfg,
        })
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.conv1.init(store, rng);
        self.res1.init(store, rng);
        self.res2.init(store, rng);
        self.bg.init(store, rng);
        if let Some((a1, a2)) = &self.attn_head {
            a1.init(store, rng);
            a2.init(store, rng);
        }
        if let Some(p) = &self.patch_enc {
            p.init(store, rng);
        }
    }

    /// Shared backbone: [R, 1, S, S] -> [R, D, h, w].
    fn backbone<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, panels: Var) -> Result<Var> {
        let x = self.conv1.forward(g, store, panels)?;
        let x = g.max_pool2d(x, 2, 2)?;
        let x = self.res1.forward(g, store, x)?;
        self.res2.forward(g, store, x)
    }

    /// Full object-representation pass over a batch of panels [R, 1, S, S].
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, panels: Var) -> Result<NodeSet> {
        let map = self.backbone(g, store, panels)?;
        let background = self.bg.forward(g, store, map)?;
        let shape = g.shape(map).to_vec();
        let (r, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        debug_assert_eq!(h, self.cfg.map_side());
        let n = h * w;
        match self.cfg.mode {
            ReprMode::Grid => {
                // Every spatial location becomes one node vector.
                let perm = g.permute(map, &[0, 2, 3, 1])?;
                let nodes = g.reshape(perm, &[r, n, d])?;
                let presence = g.constant(Array::full(&[r, n], T::ONE));
                Ok(NodeSet { nodes, presence, background, points: None, map_side: h })
            }
            ReprMode::Attention => self.attend(g, store, map, background, r, d, h, w),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        map: Var,
        background: Var,
        r: usize,
        d: usize,
        h: usize,
        w: usize,
    ) -> Result<NodeSet> {
        let (a1, a2) = self.attn_head.as_ref().expect("attention head");
        let patch_enc = self.patch_enc.as_ref().expect("patch encoder");
        let n = h * w;
        // Attention head: per location one presence logit and 4 raw
        // scale/translation parameters (z restricted to scaling and
        // translation).
        let att = a1.forward(g, store, map)?;
        let att = a2.forward(g, store, att)?; // [R, 5, h, w]
        let pres_logits = self.presence_logits(g, att, r, n)?;
        let presence = g.gumbel_sigmoid(pres_logits, self.cfg.gumbel_temperature)?;

        let zwhere = g.slice_channels(att, 1, 5)?; // [R, 4, h, w]
        let zwhere = g.permute(zwhere, &[0, 2, 3, 1])?;
        let zwhere = g.reshape(zwhere, &[r * n, 4])?;
        // Scale in (0, 1), translation in (-1, 1).
        let raw_scale = g.slice_channels(zwhere, 0, 2)?;
        let scale = g.sigmoid(raw_scale);
        let raw_trans = g.slice_channels(zwhere, 2, 4)?;
        let trans = g.tanh(raw_trans);
        // theta rows [sx, 0, tx, 0, sy, ty] via constant embedding matrices.
        let scale_embed = g.constant(embed_matrix::<T>(&[(0, 0), (1, 4)]));
        let trans_embed = g.constant(embed_matrix::<T>(&[(0, 2), (1, 5)]));
        let th_s = g.matmul(scale, scale_embed)?;
        let th_t = g.matmul(trans, trans_embed)?;
        let theta = g.add(th_s, th_t)?; // [R*N, 6]

        let tiled = g.repeat_batch(map, n)?; // [R*N, D, h, w]
        let window = self.cfg.attn_window;
        let patches = g.grid_sample(tiled, theta, window, window)?;
        let enc = patch_enc.forward(g, store, patches)?; // [R*N, D, 1, 1]
        let nodes = g.reshape(enc, &[r, n, d])?;

        let points = g.reshape(trans, &[r, n, 2])?;
        Ok(NodeSet {
            nodes,
            presence,
            background,
            points: Some(points),
            map_side: h,
        })
    }

    fn presence_logits<T: Scalar>(&self, g: &mut Graph<T>, att: Var, r: usize, n: usize) -> Result<Var> {
        let pres = g.slice_channels(att, 0, 1)?; // [R, 1, h, w]
        g.reshape(pres, &[r, n])
    }
}

/// One-hot rows mapping input slot -> theta slot.
fn embed_matrix<T: Scalar>(pairs: &[(usize, usize)]) -> Array<T> {
    let mut m = Array::zeros(&[pairs.len(), 6]);
    for (row, &(_, col)) in pairs.iter().enumerate() {
        m.data_mut()[row * 6 + col] = T::ONE;
    }
    m
}

#[cfg(test)]
mod tests {
    use rand_chacha::rand_core::SeedableRng;

    use super::*;

    fn desk_cfg(mode: ReprMode) -> ObjReprConfig {
        ObjReprConfig {
            panel_side: 32,
            mode,
            conv1_channels: 8,
            res1_channels: 12,
            node_dim: 16,
            bg_channels: 10,
            ..ObjReprConfig::default()
        }
    }

    fn random_panels<T: Scalar>(r: usize, s: usize, seed: u64) -> Array<T> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_vec(
            &[r, 1, s, s],
            (0..r * s * s).map(|_| T::from_f64(rng.random_range(0.0..1.0))).collect(),
        )
    }

    #[test]
    fn default_config_yields_25_nodes_at_side_80() {
        let cfg = ObjReprConfig::default();
        assert_eq!(cfg.map_side(), 5);
        assert_eq!(cfg.node_count(), 25);
    }

    #[test]
    fn grid_mode_shapes_and_determinism() {
        let cfg = desk_cfg(ReprMode::Grid);
        let repr = ObjRepr::new(cfg.clone()).unwrap();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        repr.init(&mut store, &mut rng);
        let panels = random_panels::<f32>(3, 32, 2);
        let run = || {
            let mut g = Graph::<f32>::new(0, false);
            let x = g.constant(panels.clone());
            let ns = repr.forward(&mut g, &store, x).unwrap();
            (
                g.shape(ns.nodes).to_vec(),
                g.shape(ns.background).to_vec(),
                g.value(ns.nodes).data().to_vec(),
                g.value(ns.presence).data().to_vec(),
            )
        };
        let (nshape, bshape, nodes1, pres) = run();
        let n = cfg.node_count();
        assert_eq!(nshape, vec![3, n, 16]);
        assert_eq!(bshape, vec![3, 10, cfg.map_side(), cfg.map_side()]);
        assert!(pres.iter().all(|&p| p == 1.0));
        let (_, _, nodes2, _) = run();
        assert_eq!(nodes1, nodes2);
    }

    #[test]
    fn background_spatial_extent_matches_backbone() {
        // Stride arithmetic: 32 -> conv/2 = 16 -> pool = 8 -> res1/2 = 4 -> res2/2 = 2.
        let cfg = desk_cfg(ReprMode::Grid);
        assert_eq!(cfg.map_side(), 2);
    }

    #[test]
    fn attention_mode_emits_presence_and_points() {
        let cfg = ObjReprConfig {
            res2_stride: 1, // keep an 4x4 map so the window fits
            ..desk_cfg(ReprMode::Attention)
        };
        let repr = ObjRepr::new(cfg.clone()).unwrap();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        repr.init(&mut store, &mut rng);
        let mut g = Graph::<f32>::new(7, true);
        let x = g.constant(random_panels::<f32>(2, 32, 5));
        let ns = repr.forward(&mut g, &store, x).unwrap();
        let n = cfg.node_count();
        assert_eq!(g.shape(ns.nodes), &[2, n, 16]);
        assert_eq!(g.shape(ns.presence), &[2, n]);
        let pts = ns.points.unwrap();
        assert_eq!(g.shape(pts), &[2, n, 2]);
        // Relaxed presence in (0,1); translations in (-1,1).
        assert!(g.value(ns.presence).data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(g.value(pts).data().iter().all(|&t| t > -1.0 && t < 1.0));
    }

    #[test]
    fn attention_window_must_fit_map() {
        let cfg = desk_cfg(ReprMode::Attention); // map side 2 < window 4
        assert!(ObjRepr::new(cfg).is_err());
    }
}
