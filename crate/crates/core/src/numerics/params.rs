//! Named parameter storage shared by model, optimizer and checkpointing.

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::array::{Array, Scalar};

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Array<T>,
    /// Running statistics and other buffers are stored alongside trainable
    /// weights but skipped by the optimizer.
    pub trainable: bool,
}

/// Insertion-ordered map of named parameters. Order is the checkpoint record
/// order and the optimizer update order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array<T>, trainable: bool) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.entries
            .insert(name.to_string(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Result<&Array<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, value: Array<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: shape {:?} incompatible with stored {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.entries.iter_mut()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Element-wise dtype conversion of every entry.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, p) in &self.entries {
            out.insert(name, p.value.cast(), p.trainable);
        }
        out
    }
}
