//! Layer building blocks over the compute tape: linear, convolution, batch
//! normalization, residual blocks and small MLPs. A layer is plain data
//! (name prefix + shape info); parameters live in the [`ParamStore`] under
//! `<layer-name>/<tensor>` and are bound into a graph per forward pass.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{init, Array, Graph, ParamStore, Scalar, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        store.insert(
            &format!("{}/weight", self.name),
            init::fan_in_uniform(rng, &[self.in_dim, self.out_dim], self.in_dim),
            true,
        );
        store.insert(
            &format!("{}/bias", self.name),
            init::fan_in_uniform(rng, &[self.out_dim], self.in_dim),
            true,
        );
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(&format!("{}/weight", self.name), store.get(&format!("{}/weight", self.name))?);
        let b = g.param(&format!("{}/bias", self.name), store.get(&format!("{}/bias", self.name))?);
        let y = g.matmul(x, w)?;
        // bias broadcasts over dim 1 for rank-2; higher-rank outputs of the
        // flattened matmul add the bias along the last axis via reshape.
        let ys = g.shape(y).to_vec();
        if ys.len() == 2 {
            g.bias_add(y, b)
        } else {
            let flat = g.reshape(y, &[ys.iter().product::<usize>() / self.out_dim, self.out_dim])?;
            let with_bias = g.bias_add(flat, b)?;
            g.reshape(with_bias, &ys)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, kernel, stride, pad }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        let fan_in = self.in_ch * self.kernel * self.kernel;
        store.insert(
            &format!("{}/weight", self.name),
            init::fan_in_uniform(rng, &[self.out_ch, self.in_ch, self.kernel, self.kernel], fan_in),
            true,
        );
        store.insert(
            &format!("{}/bias", self.name),
            init::fan_in_uniform(rng, &[self.out_ch], fan_in),
            true,
        );
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(&format!("{}/weight", self.name), store.get(&format!("{}/weight", self.name))?);
        let b = g.param(&format!("{}/bias", self.name), store.get(&format!("{}/bias", self.name))?);
        let y = g.conv2d(x, w, self.stride, self.pad)?;
        g.bias_add(y, b)
    }
}

/// Batch normalization over dim 1 (works for both [B, F] and [B, C, H, W]).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm { name: name.into(), channels }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        store.insert(&format!("{}/gamma", self.name), Array::full(&[self.channels], T::ONE), true);
        store.insert(&format!("{}/beta", self.name), Array::zeros(&[self.channels]), true);
        store.insert(
            &format!("{}/running_mean", self.name),
            Array::zeros(&[self.channels]),
            false,
        );
        store.insert(
            &format!("{}/running_var", self.name),
            Array::full(&[self.channels], T::ONE),
            false,
        );
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&format!("{}/gamma", self.name), store.get(&format!("{}/gamma", self.name))?);
        let beta = g.param(&format!("{}/beta", self.name), store.get(&format!("{}/beta", self.name))?);
        let rm_name = format!("{}/running_mean", self.name);
        let rv_name = format!("{}/running_var", self.name);
        let rm = store.get(&rm_name)?.clone();
        let rv = store.get(&rv_name)?.clone();
        g.batch_norm(x, gamma, beta, (&rm, &rv), (&rm_name, &rv_name), BN_EPS, BN_MOMENTUM)
    }
}

/// Conv -> BN -> ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(format!("{name}/conv"), in_ch, out_ch, kernel, stride, pad),
            bn: BatchNorm::new(format!("{name}/bn"), out_ch),
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.conv.init(store, rng);
        self.bn.init(store);
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let y = self.bn.forward(g, store, y)?;
        Ok(g.relu(y))
    }
}

/// Residual convolution block: two 3x3 conv+BN stages with identity (or
/// 1x1-projected) shortcut, ReLU after the sum.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl ResBlock {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let shortcut = if in_ch != out_ch || stride != 1 {
            Some((
                Conv2d::new(format!("{name}/short/conv"), in_ch, out_ch, 1, stride, 0),
                BatchNorm::new(format!("{name}/short/bn"), out_ch),
            ))
        } else {
            None
        };
        ResBlock {
            conv1: Conv2d::new(format!("{name}/conv1"), in_ch, out_ch, 3, stride, 1),
            bn1: BatchNorm::new(format!("{name}/bn1"), out_ch),
            conv2: Conv2d::new(format!("{name}/conv2"), out_ch, out_ch, 3, 1, 1),
            bn2: BatchNorm::new(format!("{name}/bn2"), out_ch),
            shortcut,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.conv1.init(store, rng);
        self.bn1.init(store);
        self.conv2.init(store, rng);
        self.bn2.init(store);
        if let Some((c, b)) = &self.shortcut {
            c.init(store, rng);
            b.init(store);
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, store, x)?;
        let y = self.bn1.forward(g, store, y)?;
        let y = g.relu(y);
        let y = self.conv2.forward(g, store, y)?;
        let y = self.bn2.forward(g, store, y)?;
        let sc = match &self.shortcut {
            Some((c, b)) => {
                let s = c.forward(g, store, x)?;
                b.forward(g, store, s)?
            }
            None => x,
        };
        let sum = g.add(y, sc)?;
        Ok(g.relu(sum))
    }
}

/// Fully connected stack: hidden layers use BN + ReLU, output stays linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<BatchNorm>>,
}

impl Mlp {
    /// `dims` = [in, hidden..., out].
    pub fn new(name: &str, dims: &[usize], batch_norm: bool) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(Linear::new(format!("{name}/fc{i}"), dims[i], dims[i + 1]));
            let hidden = i + 2 < dims.len();
            norms.push(if hidden && batch_norm {
                Some(BatchNorm::new(format!("{name}/bn{i}"), dims[i + 1]))
            } else {
                None
            });
        }
        Mlp { layers, norms }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        for (l, n) in self.layers.iter().zip(&self.norms) {
            l.init(store, rng);
            if let Some(bn) = n {
                bn.init(store);
            }
        }
    }

    /// Input of shape [..., in]; leading axes are flattened for the BN on
    /// hidden activations and restored on output.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let lead = g.shape(x)[..g.shape(x).len() - 1].to_vec();
        let in_dim = *g.shape(x).last().unwrap();
        let rows: usize = lead.iter().product();
        let mut h = g.reshape(x, &[rows, in_dim])?;
        let last = self.layers.len() - 1;
        for (i, (l, n)) in self.layers.iter().zip(&self.norms).enumerate() {
            h = l.forward(g, store, h)?;
            if i < last {
                if let Some(bn) = n {
                    h = bn.forward(g, store, h)?;
                }
                h = g.relu(h);
            }
        }
        let out_dim = self.layers[last].out_dim;
        let mut out_shape = lead;
        out_shape.push(out_dim);
        g.reshape(h, &out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn linear_shapes_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Linear::new("fc", 3, 4);
        let mut store = ParamStore::<f64>::new();
        layer.init(&mut store, &mut rng);
        let x = Array::from_vec(&[2, 3], vec![0.1, -0.2, 0.3, 1.0, 0.0, -1.0]);
        let run = || {
            let mut g = Graph::<f64>::new(0, true);
            let xv = g.constant(x.clone());
            let y = layer.forward(&mut g, &store, xv).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resblock_preserves_spatial_extent_at_stride_1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = ResBlock::new("res", 3, 5, 1);
        let mut store = ParamStore::<f32>::new();
        block.init(&mut store, &mut rng);
        let mut g = Graph::<f32>::new(0, true);
        let x = g.constant(Array::full(&[2, 3, 8, 8], 0.5));
        let y = block.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[2, 5, 8, 8]);
    }

    #[test]
    fn batch_norm_training_updates_running_stats() {
        let bn = BatchNorm::new("bn", 2);
        let mut store = ParamStore::<f64>::new();
        bn.init(&mut store);
        let mut g = Graph::<f64>::new(0, true);
        let x = g.constant(Array::from_vec(&[2, 2], vec![1.0, 10.0, 3.0, 20.0]));
        let _ = bn.forward(&mut g, &store, x).unwrap();
        let updates = g.take_stat_updates();
        assert_eq!(updates.len(), 2);
        // mean of channel 0 is 2.0; running mean = 0.9*0 + 0.1*2.
        let (name, val) = &updates[0];
        assert_eq!(name, "bn/running_mean");
        assert!((val.data()[0] - 0.2).abs() < 1e-12);
    }
}
