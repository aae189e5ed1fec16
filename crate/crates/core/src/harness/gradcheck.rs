//! Gradient suite: checks every tape primitive and a composed 3-panel
//! model against central finite differences in 64-bit.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ModelConfig, MxgNet, SubsetStyle};
use crate::mxgraph::EdgeMode;
use crate::numerics::finitediff::{finite_diff_gradients, max_gradient_error, FD_TOLERANCE};
use crate::numerics::{Array, Graph, ParamStore, Scalar, Var};
use crate::objrepr::{ObjReprConfig, ReprMode};
use crate::reasoner;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub results: Vec<CheckResult>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let status = if r.pass {
                "pass".to_string()
            } else {
                format!("FAIL ({})", r.worst_param)
            };
            out.push_str(&format!(
                "{:<28} {:>12.3e}  {status}\n",
                r.name, r.max_rel_err
            ));
        }
        out.push_str(&format!(
            "tolerance {:.1e}: {}\n",
            self.tolerance,
            if self.all_pass() { "all pass" } else { "FAILURES PRESENT" }
        ));
        out
    }
}

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero (for kinked ops like relu and l1).
fn rand_array_offset(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.2..1.0);
                if rng.random_range(0..2) == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

/// Check one op: `build` maps bound parameter Vars to a scalar loss Var.
fn check_op(
    name: &str,
    params: ParamStore<f64>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> CheckResult {
    let run = |store: &ParamStore<f64>| -> (f64, Option<crate::numerics::Gradients<f64>>) {
        let mut g = Graph::<f64>::new(77, true);
        let vars: Vec<Var> = store
            .iter()
            .map(|(n, p)| g.param(n, &p.value))
            .collect();
        let loss = build(&mut g, &vars);
        let value = g.value(loss).item();
        let grads = g.backward(loss).ok();
        (value, grads)
    };
    let (_, analytic) = run(&params);
    let analytic = analytic.expect("backward failed");
    let numeric = finite_diff_gradients(&params, |s| run(s).0);
    let (err, worst) = max_gradient_error(&analytic, &numeric);
    CheckResult {
        name: name.to_string(),
        max_rel_err: err,
        worst_param: worst,
        pass: err < FD_TOLERANCE,
    }
}

fn store_of(entries: Vec<(&str, Array<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, arr) in entries {
        s.insert(name, arr, true);
    }
    s
}

/// Per-primitive finite-difference checks.
pub fn check_primitives() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_817);
    let mut out = Vec::new();

    out.push(check_op(
        "relu",
        store_of(vec![("x", rand_array_offset(&mut rng, &[3, 4]))]),
        |g, v| {
            let y = g.relu(v[0]);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "sigmoid",
        store_of(vec![("x", rand_array(&mut rng, &[3, 4], -2.0, 2.0))]),
        |g, v| {
            let y = g.sigmoid(v[0]);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "tanh",
        store_of(vec![("x", rand_array(&mut rng, &[3, 4], -2.0, 2.0))]),
        |g, v| {
            let y = g.tanh(v[0]);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "scale_add_scalar",
        store_of(vec![("x", rand_array(&mut rng, &[5], -1.0, 1.0))]),
        |g, v| {
            let y = g.scale(v[0], -1.7);
            let y = g.add_scalar(y, 0.3);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "add_sub_mul",
        store_of(vec![
            ("a", rand_array(&mut rng, &[2, 3], -1.0, 1.0)),
            ("b", rand_array(&mut rng, &[2, 3], -1.0, 1.0)),
            ("c", rand_array(&mut rng, &[2, 3], -1.0, 1.0)),
        ]),
        |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let d = g.sub(s, v[2]).unwrap();
            let m = g.mul(d, v[0]).unwrap();
            g.mean_all(m)
        },
    ));
    out.push(check_op(
        "matmul",
        store_of(vec![
            ("x", rand_array(&mut rng, &[4, 3], -1.0, 1.0)),
            ("w", rand_array(&mut rng, &[3, 5], -1.0, 1.0)),
        ]),
        |g, v| {
            let y = g.matmul(v[0], v[1]).unwrap();
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "bias_add",
        store_of(vec![
            ("x", rand_array(&mut rng, &[2, 3, 2, 2], -1.0, 1.0)),
            ("b", rand_array(&mut rng, &[3], -1.0, 1.0)),
        ]),
        |g, v| {
            let y = g.bias_add(v[0], v[1]).unwrap();
            let y = g.tanh(y);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "chan_mul",
        store_of(vec![
            ("x", rand_array(&mut rng, &[2, 3, 2, 2], -1.0, 1.0)),
            ("gate", rand_array(&mut rng, &[3], -1.0, 1.0)),
        ]),
        |g, v| {
            let y = g.chan_mul(v[0], v[1]).unwrap();
            let y = g.tanh(y);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "mul_bcast_last",
        store_of(vec![
            ("x", rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0)),
            ("w", rand_array(&mut rng, &[2, 3], -1.0, 1.0)),
        ]),
        |g, v| {
            let y = g.mul_bcast_last(v[0], v[1]).unwrap();
            let y = g.tanh(y);
            g.mean_all(y)
        },
    ));
    out.push(check_op(
        "softmax",
        store_of(vec![("x", rand_array(&mut rng, &[3, 5], -2.0, 2.0))]),
        |g, v| {
            let y = g.softmax(v[0]).unwrap();
            let sq = g.mul(y, y).unwrap();
            g.mean_all(sq)
        },
    ));
    out.push(check_op(
        "concat_slice",
        store_of(vec![
            ("a", rand_array(&mut rng, &[2, 2, 3], -1.0, 1.0)),
            ("b", rand_array(&mut rng, &[2, 4, 3], -1.0, 1.0)),
        ]),
        |g, v| {
            let c = g.concat(&[v[0], v[1]], 1).unwrap();
            let s = g.slice_channels(c, 1, 5).unwrap();
            let t = g.tanh(s);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "reshape_permute",
        store_of(vec![("x", rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0))]),
        |g, v| {
            let p = g.permute(v[0], &[2, 0, 1]).unwrap();
            let r = g.reshape(p, &[4, 6]).unwrap();
            let t = g.tanh(r);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "reduce_sum_mean",
        store_of(vec![("x", rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0))]),
        |g, v| {
            let s = g.reduce_sum(v[0], 1).unwrap();
            let m = g.reduce_mean(s, 0).unwrap();
            let t = g.tanh(m);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "reduce_max_min",
        store_of(vec![("x", rand_array(&mut rng, &[2, 5, 3], -3.0, 3.0))]),
        |g, v| {
            let mx = g.reduce_max(v[0], 1).unwrap();
            let mn = g.reduce_min(v[0], 1).unwrap();
            let d = g.sub(mx, mn).unwrap();
            g.mean_all(d)
        },
    ));
    out.push(check_op(
        "conv2d",
        store_of(vec![
            ("x", rand_array(&mut rng, &[2, 2, 6, 5], -1.0, 1.0)),
            ("w", rand_array(&mut rng, &[3, 2, 3, 3], -0.5, 0.5)),
        ]),
        |g, v| {
            let y = g.conv2d(v[0], v[1], 2, 1).unwrap();
            let t = g.tanh(y);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "max_pool2d",
        store_of(vec![("x", rand_array(&mut rng, &[2, 2, 4, 4], -3.0, 3.0))]),
        |g, v| {
            let y = g.max_pool2d(v[0], 2, 2).unwrap();
            let t = g.tanh(y);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "batch_norm",
        store_of(vec![
            ("x", rand_array(&mut rng, &[3, 2, 2, 2], -1.0, 1.0)),
            ("gamma", rand_array(&mut rng, &[2], 0.5, 1.5)),
            ("beta", rand_array(&mut rng, &[2], -0.5, 0.5)),
        ]),
        |g, v| {
            let rm = Array::zeros(&[2]);
            let rv = Array::full(&[2], 1.0);
            let y = g
                .batch_norm(v[0], v[1], v[2], (&rm, &rv), ("m", "v"), 1e-5, 0.9)
                .unwrap();
            let t = g.tanh(y);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "grid_sample",
        store_of(vec![
            ("x", rand_array(&mut rng, &[1, 2, 5, 5], -1.0, 1.0)),
            (
                "theta",
                Array::from_vec(&[1, 6], vec![0.631, 0.077, 0.113, -0.051, 0.567, -0.139]),
            ),
        ]),
        |g, v| {
            let y = g.grid_sample(v[0], v[1], 4, 4).unwrap();
            let t = g.tanh(y);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "pair_concat",
        store_of(vec![
            ("a", rand_array(&mut rng, &[2, 3, 4], -1.0, 1.0)),
            ("b", rand_array(&mut rng, &[2, 2, 4], -1.0, 1.0)),
        ]),
        |g, v| {
            let p = g.pair_concat(v[0], v[1]).unwrap();
            let t = g.tanh(p);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "gather_repeat",
        store_of(vec![("x", rand_array(&mut rng, &[4, 3], -1.0, 1.0))]),
        |g, v| {
            let gth = g.gather_rows(v[0], &[0, 2, 2, 3]).unwrap();
            let rep = g.repeat_batch(gth, 2).unwrap();
            let t = g.tanh(rep);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "aggregate_nodes",
        store_of(vec![
            ("edges", rand_array(&mut rng, &[2, 3, 2, 4], -2.0, 2.0)),
            ("presence", rand_array(&mut rng, &[2, 3], 0.2, 0.9)),
        ]),
        |g, v| {
            let a = g.aggregate_nodes(v[0], v[1]).unwrap();
            let t = g.tanh(a);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "splat_points",
        store_of(vec![
            ("values", rand_array(&mut rng, &[1, 3, 2], -1.0, 1.0)),
            (
                "points",
                Array::from_vec(&[1, 3, 2], vec![-0.41, 0.17, 0.23, -0.58, 0.61, 0.37]),
            ),
        ]),
        |g, v| {
            let c = g.splat_points(v[0], v[1], 4, 4).unwrap();
            let t = g.tanh(c);
            g.mean_all(t)
        },
    ));
    out.push(check_op(
        "softmax_cross_entropy",
        store_of(vec![("logits", rand_array(&mut rng, &[3, 8], -1.5, 1.5))]),
        |g, v| g.softmax_cross_entropy(v[0], &[1, 4, 7]).unwrap(),
    ));
    out.push(check_op(
        "bce_with_logits",
        store_of(vec![("logits", rand_array(&mut rng, &[3, 4], -1.5, 1.5))]),
        |g, v| {
            let targets = g.constant(Array::from_vec(
                &[3, 4],
                vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            ));
            g.bce_with_logits(v[0], targets).unwrap()
        },
    ));
    out.push(check_op(
        "l1_norm",
        store_of(vec![("x", rand_array_offset(&mut rng, &[6]))]),
        |g, v| {
            let n = g.l1_norm(v[0]);
            g.scale(n, 0.25)
        },
    ));
    // Gumbel-Sigmoid with frozen noise: the fixed graph seed reproduces the
    // same noise for every finite-difference evaluation, so the noise acts
    // as a constant input.
    out.push(check_op(
        "gumbel_sigmoid_frozen",
        store_of(vec![("logits", rand_array(&mut rng, &[8], -1.0, 1.0))]),
        |g, v| {
            let y = g.gumbel_sigmoid(v[0], 0.7).unwrap();
            g.mean_all(y)
        },
    ));
    out
}

/// Minimal-width full model for the composed check.
fn tiny_model(mode: ReprMode, edge_mode: EdgeMode) -> Result<MxgNet> {
    MxgNet::new(ModelConfig {
        repr: ObjReprConfig {
            panel_side: 16,
            mode,
            conv1_channels: 2,
            res1_channels: 3,
            node_dim: 4,
            bg_channels: 3,
            res1_stride: 1,
            res2_stride: 1,
            gumbel_temperature: 0.7,
            attn_hidden: 4,
            attn_window: 4,
        },
        edge_mode,
        style: SubsetStyle::RowsOnly,
        edge_sublayers: 2,
        edge_hidden: 3,
        edge_out: 2,
        node_out: 4,
        summ_channels: 4,
        trunk_channels: (4, 6),
        meta_width: 2,
    })
}

/// Composed end-to-end check: 16x16 panels through object representation,
/// multiplex graph, reasoner and the two-term loss, every parameter against
/// finite differences.
pub fn check_composed(mode: ReprMode) -> Result<CheckResult> {
    check_composed_seeded(mode, COMPOSED_INIT_SEED, COMPOSED_INPUT_SEED)
}

/// Seeds chosen so the check point is generic: no pooling or aggregation
/// tie sits within the finite-difference step of flipping, which would
/// invalidate the comparison at a non-differentiable point.
pub const COMPOSED_INIT_SEED: u64 = 5;
pub const COMPOSED_INPUT_SEED: u64 = 100;

pub fn check_composed_seeded(mode: ReprMode, init_seed: u64, input_seed: u64) -> Result<CheckResult> {
    let model = tiny_model(mode, EdgeMode::Multiplex)?;
    let store = model.new_store::<f64>(init_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(input_seed);
    let input = rand_array(&mut rng, &[1, 16, 16, 16], 0.0, 1.0);
    let meta_bits = Array::from_vec(&[1, 2], vec![1.0, 0.0]);

    let run = |s: &ParamStore<f64>| -> (f64, Option<crate::numerics::Gradients<f64>>) {
        let mut g = Graph::<f64>::new(31, true);
        let out = model.forward(&mut g, s, &input).expect("forward");
        let (total, _, _) =
            reasoner::loss(&mut g, out.answer_logits, &[3], out.meta_logits, &meta_bits, 1.0)
                .expect("loss");
        (g.value(total).item(), g.backward(total).ok())
    };
    let (_, analytic) = run(&store);
    let analytic = analytic.expect("backward failed");
    let numeric = finite_diff_gradients(&store, |s| run(s).0);
    let (err, worst) = max_gradient_error(&analytic, &numeric);
    let name = match mode {
        ReprMode::Grid => "composed_mxgnet_grid",
        ReprMode::Attention => "composed_mxgnet_attention",
    };
    Ok(CheckResult {
        name: name.into(),
        max_rel_err: err,
        worst_param: worst,
        pass: err < FD_TOLERANCE,
    })
}

/// Attention-path flow check: a tiny attention object-representation whose
/// loss touches nodes, presence and splat positions, so finite differences
/// verify that gradients reach both the z_pres logits and the z_where
/// parameters of the attention head.
pub fn check_attention_flow() -> Result<CheckResult> {
    use crate::objrepr::ObjRepr;
    let cfg = ObjReprConfig {
        panel_side: 16,
        mode: ReprMode::Attention,
        conv1_channels: 2,
        res1_channels: 3,
        node_dim: 4,
        bg_channels: 2,
        res1_stride: 1,
        res2_stride: 1,
        gumbel_temperature: 0.7,
        attn_hidden: 3,
        attn_window: 4,
    };
    let repr = ObjRepr::new(cfg)?;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    repr.init(&mut store, &mut rng);
    let mut input_rng = ChaCha8Rng::seed_from_u64(57);
    let input = rand_array(&mut input_rng, &[2, 1, 16, 16], 0.0, 1.0);

    let run = |s: &ParamStore<f64>| -> (f64, Option<crate::numerics::Gradients<f64>>) {
        let mut g = Graph::<f64>::new(13, true);
        let x = g.constant(input.clone());
        let ns = repr.forward(&mut g, s, x).expect("forward");
        let masked = g.mul_bcast_last(ns.nodes, ns.presence).expect("mask");
        let canvas = g
            .splat_points(masked, ns.points.expect("points"), 4, 4)
            .expect("splat");
        let ct = g.tanh(canvas);
        let a = g.mean_all(ct);
        let bg = g.mean_all(ns.background);
        let total = g.add(a, bg).expect("add");
        (g.value(total).item(), g.backward(total).ok())
    };
    let (_, analytic) = run(&store);
    let analytic = analytic.expect("backward failed");
    // Flow assertion: the attention head must receive nonzero gradients.
    let head = analytic
        .get("objrepr/attn2/weight")
        .expect("attention head gradient");
    assert!(
        head.data().iter().any(|&v| v != 0.0),
        "no gradient reaches the attention head"
    );
    let numeric = finite_diff_gradients(&store, |s| run(s).0);
    let (err, worst) = max_gradient_error(&analytic, &numeric);
    Ok(CheckResult {
        name: "attention_flow".into(),
        max_rel_err: err,
        worst_param: worst,
        pass: err < FD_TOLERANCE,
    })
}

/// The full gradient suite.
pub fn run_gradcheck() -> Result<GradCheckReport> {
    let mut results = check_primitives();
    results.push(check_composed(ReprMode::Grid)?);
    results.push(check_attention_flow()?);
    Ok(GradCheckReport { results, tolerance: FD_TOLERANCE })
}
