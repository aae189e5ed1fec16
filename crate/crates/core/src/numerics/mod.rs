//! Deterministic, seedable differentiable array engine: dense arrays, the
//! compute tape with reverse-mode gradients, weight init, the RAdam
//! optimizer and the finite-difference oracle.

pub mod array;
pub mod finitediff;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod params;
pub mod radam;

pub use array::{Array, Dtype, Scalar};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamStore};
pub use radam::{RAdam, RAdamConfig};

/// Derive a per-instance child seed from a master seed and an index, so
/// parallel and serial generation order produce identical streams.
/// SplitMix64 finalizer.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_seeds_are_distinct() {
        let a: Vec<u64> = (0..100).map(|i| child_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }
}
