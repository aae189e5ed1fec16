//! Central finite-difference gradient checking.
//!
//! This is the independent oracle the gradient suite compares reverse-mode
//! results against. It runs in f64 with step 1e-5; analytic gradients are
//! expected to match with max relative error below 1e-4.

use super::array::Array;
use super::graph::Gradients;
use super::params::ParamStore;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Symmetric relative error with an absolute floor so that near-zero
/// gradient pairs compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() / denom
}

/// Central finite differences of `loss` w.r.t. every trainable entry.
pub fn finite_diff_gradients<F>(params: &ParamStore<f64>, loss: F) -> Gradients<f64>
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let mut out = Gradients::new();
    for (name, p) in params.iter() {
        if !p.trainable {
            continue;
        }
        let mut g = vec![0.0f64; p.value.numel()];
        for i in 0..p.value.numel() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            bump(&mut plus, name, i, FD_STEP);
            bump(&mut minus, name, i, -FD_STEP);
            g[i] = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
        }
        out.insert(name.clone(), Array::from_vec(p.value.shape(), g));
    }
    out
}

fn bump(params: &mut ParamStore<f64>, name: &str, index: usize, delta: f64) {
    for (n, p) in params.iter_mut() {
        if n == name {
            p.value.data_mut()[index] += delta;
            return;
        }
    }
    panic!("unknown parameter {name}");
}

/// Largest relative error between analytic and finite-difference gradients.
/// Returns (max error, offending parameter name).
pub fn max_gradient_error(analytic: &Gradients<f64>, numeric: &Gradients<f64>) -> (f64, String) {
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for (name, num) in numeric {
        let Some(ana) = analytic.get(name) else {
            // Parameter unreachable from the loss: numeric gradient must be ~0.
            let mag = num.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if mag > worst {
                worst = mag;
                worst_name = format!("{name} (missing analytic)");
            }
            continue;
        };
        for (&a, &n) in ana.data().iter().zip(num.data()) {
            let e = relative_error(a, n);
            if e > worst {
                worst = e;
                worst_name = name.clone();
            }
        }
    }
    (worst, worst_name)
}
