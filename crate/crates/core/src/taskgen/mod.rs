//! Procedural generation of verifiable matrix-reasoning tasks and
//! Euler-diagram syllogisms: symbolic panel specs, relation semantics with a
//! pure verifier, meta-target encoding, generalization-regime splits,
//! deterministic rasterization and dataset serialization.

pub mod dataset;
pub mod meta;
pub mod regime;
pub mod relations;
pub mod render;
pub mod sampler;
pub mod syllogism;

pub use meta::MetaVocabulary;
pub use regime::{AttrSets, Regime};
pub use relations::verify_candidate;
pub use sampler::sample_task;
pub use syllogism::{sample_syllogism, SetRelation, SyllogismInstance};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3x3 placement grid inside a panel.
pub const GRID_CELLS: u8 = 9;
/// Fixed alphabet of background line patterns.
pub const LINE_PATTERNS: usize = 6;
pub const NUM_CONTEXT: usize = 8;
pub const NUM_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeType {
    Circle = 0,
    Triangle = 1,
    Square = 2,
    Pentagon = 3,
    Star = 4,
}

pub const SHAPE_TYPES: [ShapeType; 5] = [
    ShapeType::Circle,
    ShapeType::Triangle,
    ShapeType::Square,
    ShapeType::Pentagon,
    ShapeType::Star,
];

/// One shape inside a panel: discrete type/size/color indices plus a
/// placement cell in the 3x3 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape_type: ShapeType,
    pub size: u8,
    pub color: u8,
    pub cell: u8,
}

/// Symbolic panel: a set of shapes (at most one per cell) plus background
/// line patterns with a per-pattern intensity index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct PanelSpec {
    pub shapes: Vec<ShapeSpec>,
    pub lines: [Option<u8>; LINE_PATTERNS],
}

impl PanelSpec {
    pub fn empty() -> Self {
        PanelSpec::default()
    }

    /// Bitmask of occupied placement cells.
    pub fn cell_mask(&self) -> u16 {
        self.shapes.iter().fold(0, |m, s| m | 1 << s.cell)
    }

    /// Bitmask of present line patterns.
    pub fn line_mask(&self) -> u8 {
        self.lines
            .iter()
            .enumerate()
            .fold(0, |m, (i, l)| if l.is_some() { m | 1 << i } else { m })
    }

    /// Sorts shapes by cell; panels are compared in this canonical order.
    pub fn normalize(&mut self) {
        self.shapes.sort_by_key(|s| s.cell);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationType {
    Progression = 0,
    And = 1,
    Or = 2,
    Xor = 3,
    ConsistentUnion = 4,
    Arithmetic = 5,
    Constant = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Shape = 0,
    Line = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttributeKind {
    Type = 0,
    Size = 1,
    Color = 2,
    Position = 3,
    Number = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Rows = 0,
    Columns = 1,
}

/// A relation instance: (relation, object, attribute) applied along rows or
/// columns of the 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationSpec {
    pub relation: RelationType,
    pub object: ObjectKind,
    pub attribute: AttributeKind,
    pub orientation: Orientation,
}

pub type RelationTuple = (RelationType, ObjectKind, AttributeKind);

/// Every (relation, object, attribute) combination the generator knows how
/// to construct and verify.
pub const LEGAL_TUPLES: [RelationTuple; 20] = [
    (RelationType::Progression, ObjectKind::Shape, AttributeKind::Size),
    (RelationType::Progression, ObjectKind::Shape, AttributeKind::Color),
    (RelationType::Progression, ObjectKind::Shape, AttributeKind::Number),
    (RelationType::And, ObjectKind::Shape, AttributeKind::Position),
    (RelationType::Or, ObjectKind::Shape, AttributeKind::Position),
    (RelationType::Xor, ObjectKind::Shape, AttributeKind::Position),
    (RelationType::ConsistentUnion, ObjectKind::Shape, AttributeKind::Type),
    (RelationType::ConsistentUnion, ObjectKind::Shape, AttributeKind::Size),
    (RelationType::ConsistentUnion, ObjectKind::Shape, AttributeKind::Color),
    (RelationType::Arithmetic, ObjectKind::Shape, AttributeKind::Number),
    (RelationType::Constant, ObjectKind::Shape, AttributeKind::Type),
    (RelationType::Constant, ObjectKind::Shape, AttributeKind::Size),
    (RelationType::Constant, ObjectKind::Shape, AttributeKind::Color),
    (RelationType::Constant, ObjectKind::Shape, AttributeKind::Number),
    (RelationType::Progression, ObjectKind::Line, AttributeKind::Color),
    (RelationType::And, ObjectKind::Line, AttributeKind::Type),
    (RelationType::Or, ObjectKind::Line, AttributeKind::Type),
    (RelationType::Xor, ObjectKind::Line, AttributeKind::Type),
    (RelationType::ConsistentUnion, ObjectKind::Line, AttributeKind::Type),
    (RelationType::Constant, ObjectKind::Line, AttributeKind::Type),
];

/// A complete task: 8 context panels (matrix positions c11..c32, with c33
/// blank), 8 answer candidates, the answer index, the relations present,
/// the encoded meta-target and the rendered rasters (8 context then 8
/// candidates).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub context: Vec<PanelSpec>,
    pub candidates: Vec<PanelSpec>,
    pub answer: u8,
    pub relations: Vec<RelationSpec>,
    pub meta_target: Vec<bool>,
    pub rasters: Vec<Vec<u8>>,
    pub side: u16,
}

/// Attribute spectra lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectra {
    pub types: u8,
    pub sizes: u8,
    pub colors: u8,
}

impl Default for Spectra {
    fn default() -> Self {
        Spectra { types: 5, sizes: 10, colors: 10 }
    }
}

/// Generator configuration for matrix tasks.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub panel_side: u16,
    pub spectra: Spectra,
    /// Tuples the sampler may draw relations from; must be legal.
    pub relation_pool: Vec<RelationTuple>,
    pub orientations: Vec<Orientation>,
    /// Number of simultaneous relations per task (attribute-disjoint).
    pub relations_min: usize,
    pub relations_max: usize,
    /// When false, attributes not bound by a relation are held constant
    /// across the grid; when true they vary per panel.
    pub attribute_noise: bool,
    /// Values the sampler may use for size/color (regime restriction).
    pub allowed: AttrSets,
    pub vocabulary: MetaVocabulary,
    pub max_retries: usize,
}

impl GeneratorConfig {
    pub fn new(relation_pool: Vec<RelationTuple>, vocabulary: MetaVocabulary) -> Self {
        let spectra = Spectra::default();
        GeneratorConfig {
            panel_side: 80,
            spectra,
            relation_pool,
            orientations: vec![Orientation::Rows, Orientation::Columns],
            relations_min: 1,
            relations_max: 1,
            attribute_noise: false,
            allowed: AttrSets::full(&spectra),
            vocabulary,
            max_retries: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.panel_side < 32 {
            return Err(Error::Config(format!(
                "panel side must be >= 32, got {}",
                self.panel_side
            )));
        }
        if self.relation_pool.is_empty() || self.orientations.is_empty() {
            return Err(Error::Config("empty relation pool or orientation list".into()));
        }
        for t in &self.relation_pool {
            if !LEGAL_TUPLES.contains(t) {
                return Err(Error::Config(format!("illegal relation tuple {t:?}")));
            }
        }
        if self.relations_min == 0 || self.relations_min > self.relations_max {
            return Err(Error::Config(format!(
                "bad relation count range {}..={}",
                self.relations_min, self.relations_max
            )));
        }
        if self.spectra.types as usize > SHAPE_TYPES.len() || self.spectra.types < 2 {
            return Err(Error::Config(format!(
                "type spectrum must have 2..=5 values, got {}",
                self.spectra.types
            )));
        }
        if self.spectra.sizes < 3 || self.spectra.colors < 3 {
            return Err(Error::Config(
                "size and color spectra need at least 3 values".into(),
            ));
        }
        if self.allowed.sizes.is_empty() || self.allowed.colors.is_empty() {
            return Err(Error::Config("empty allowed value sets".into()));
        }
        Ok(())
    }
}

/// Row-major matrix position triples per orientation; position 8 is the
/// blank filled by a candidate.
pub fn orientation_triples(orientation: Orientation) -> [[usize; 3]; 3] {
    match orientation {
        Orientation::Rows => [[0, 1, 2], [3, 4, 5], [6, 7, 8]],
        Orientation::Columns => [[0, 3, 6], [1, 4, 7], [2, 5, 8]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_and_line_masks() {
        let mut p = PanelSpec::empty();
        p.shapes.push(ShapeSpec { shape_type: ShapeType::Circle, size: 0, color: 0, cell: 0 });
        p.shapes.push(ShapeSpec { shape_type: ShapeType::Star, size: 1, color: 2, cell: 4 });
        p.lines[1] = Some(3);
        p.lines[5] = Some(0);
        assert_eq!(p.cell_mask(), 0b1_0001);
        assert_eq!(p.line_mask(), 0b10_0010);
    }

    #[test]
    fn config_validation_rejects_small_panels() {
        let cfg = GeneratorConfig {
            panel_side: 16,
            ..GeneratorConfig::new(vec![LEGAL_TUPLES[0]], MetaVocabulary::pgm12())
        };
        assert!(cfg.validate().is_err());
    }
}
