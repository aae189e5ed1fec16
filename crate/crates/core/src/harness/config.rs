//! Experiment configuration: versioned TOML with a strict schema (unknown
//! keys are errors, preventing silent hyperparameter typos).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SubsetStyle, SyllogismConfig};
use crate::mxgraph::EdgeMode;
use crate::numerics::RAdamConfig;
use crate::objrepr::ReprMode;
use crate::ssr::SsrConfig;
use crate::taskgen::regime::{split_regime, Regime};
use crate::taskgen::{
    AttributeKind, GeneratorConfig, MetaVocabulary, ObjectKind, Orientation, RelationTuple,
    RelationType, Spectra,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskStyle {
    PgmLike,
    RavenLike,
    Syllogism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Pgm,
    Raven,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub style: TaskStyle,
    pub seed: u64,
    pub generator: GeneratorSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    #[serde(default = "default_panel_side")]
    pub panel_side: u16,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    /// Relation tuples as "relation/object/attribute" strings, or the
    /// presets "pgm12", "raven9", "full".
    pub relation_pool: Vec<String>,
    #[serde(default = "default_orientations")]
    pub orientations: Vec<String>,
    #[serde(default = "default_one")]
    pub relations_min: usize,
    #[serde(default = "default_one")]
    pub relations_max: usize,
    #[serde(default)]
    pub attribute_noise: bool,
    #[serde(default = "default_sizes")]
    pub sizes: u8,
    #[serde(default = "default_sizes")]
    pub colors: u8,
    #[serde(default = "default_types")]
    pub types: u8,
    pub train_count: u32,
    #[serde(default)]
    pub val_count: u32,
    #[serde(default)]
    pub test_count: u32,
    /// Syllogism style only: contours per premise panel.
    #[serde(default = "default_contours")]
    pub n_contours: u8,
}

fn default_panel_side() -> u16 {
    80
}
fn default_regime() -> Regime {
    Regime::Neutral
}
fn default_orientations() -> Vec<String> {
    vec!["rows".to_string(), "columns".to_string()]
}
fn default_one() -> usize {
    1
}
fn default_sizes() -> u8 {
    10
}
fn default_types() -> u8 {
    5
}
fn default_contours() -> u8 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: ModelPreset,
    pub repr_mode: ReprMode,
    pub edge_mode: EdgeMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: ModelPreset::Desk,
            repr_mode: ReprMode::Grid,
            edge_mode: EdgeMode::Multiplex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let r = RAdamConfig::default();
        OptimizerSection {
            learning_rate: r.learning_rate,
            beta1: r.beta1,
            beta2: r.beta2,
            epsilon: r.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Meta-target loss weight.
    pub beta: f64,
    /// SSR gate L1 weight.
    pub lambda: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 64,
            epochs: 30,
            patience: 5,
            beta: 10.0,
            lambda: crate::ssr::DEFAULT_LAMBDA,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn serialize(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        if self.style != TaskStyle::Syllogism {
            self.generator_config(true)?.validate()?;
        }
        if self.training.batch_size == 0 || self.training.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.training.beta < 0.0 || self.training.lambda < 0.0 {
            return Err(Error::Config("beta and lambda must be >= 0".into()));
        }
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn relation_pool(&self) -> Result<Vec<RelationTuple>> {
        let mut out = Vec::new();
        for entry in &self.generator.relation_pool {
            match entry.as_str() {
                "pgm12" => out.extend(MetaVocabulary::pgm12().tuples().iter().copied()),
                "raven9" => out.extend(MetaVocabulary::raven9().tuples().iter().copied()),
                "full" => out.extend(MetaVocabulary::full().tuples().iter().copied()),
                s => out.push(parse_tuple(s)?),
            }
        }
        Ok(out)
    }

    /// Meta vocabulary: exactly the configured relation pool.
    pub fn vocabulary(&self) -> Result<MetaVocabulary> {
        Ok(MetaVocabulary::custom(self.relation_pool()?))
    }

    /// Generator configuration for the train (or test) split under the
    /// configured regime.
    pub fn generator_config(&self, train: bool) -> Result<GeneratorConfig> {
        let spectra = Spectra {
            types: self.generator.types,
            sizes: self.generator.sizes,
            colors: self.generator.colors,
        };
        let (train_sets, test_sets) = split_regime(&spectra, self.generator.regime)?;
        let orientations = self
            .generator
            .orientations
            .iter()
            .map(|o| match o.as_str() {
                "rows" => Ok(Orientation::Rows),
                "columns" => Ok(Orientation::Columns),
                other => Err(Error::Config(format!("unknown orientation {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GeneratorConfig {
            panel_side: self.generator.panel_side,
            spectra,
            relation_pool: self.relation_pool()?,
            orientations,
            relations_min: self.generator.relations_min,
            relations_max: self.generator.relations_max,
            attribute_noise: self.generator.attribute_noise,
            allowed: if train { train_sets } else { test_sets },
            vocabulary: self.vocabulary()?,
            max_retries: 1000,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let meta_width = self.vocabulary()?.width();
        let side = self.generator.panel_side as usize;
        let mut cfg = match self.model.preset {
            ModelPreset::Pgm => ModelConfig::pgm_default(meta_width),
            ModelPreset::Raven => ModelConfig::raven_default(meta_width),
            ModelPreset::Desk => ModelConfig::desk(meta_width, side),
        };
        cfg.repr.panel_side = side;
        cfg.repr.mode = self.model.repr_mode;
        cfg.edge_mode = self.model.edge_mode;
        cfg.style = match self.style {
            TaskStyle::PgmLike => SubsetStyle::RowsAndColumns,
            _ => SubsetStyle::RowsOnly,
        };
        Ok(cfg)
    }

    pub fn syllogism_config(&self) -> SyllogismConfig {
        SyllogismConfig::default_for_side(self.generator.panel_side as usize)
    }

    pub fn ssr_config(&self) -> Result<SsrConfig> {
        let meta_width = self.vocabulary()?.width();
        let mut cfg = match self.model.preset {
            ModelPreset::Pgm | ModelPreset::Raven => SsrConfig::paper(),
            ModelPreset::Desk => SsrConfig::desk(meta_width),
        };
        cfg.panel_side = self.generator.panel_side as usize;
        cfg.meta_width = meta_width;
        Ok(cfg)
    }

    pub fn optimizer_config(&self) -> RAdamConfig {
        RAdamConfig {
            learning_rate: self.optimizer.learning_rate,
            beta1: self.optimizer.beta1,
            beta2: self.optimizer.beta2,
            epsilon: self.optimizer.epsilon,
        }
    }

    /// Stable hash of the serialized config, recorded in dataset manifests.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.serialize().as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_tuple(s: &str) -> Result<RelationTuple> {
    let parts: Vec<&str> = s.split('/').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "relation tuple '{s}' is not relation/object/attribute"
        )));
    }
    let relation = match parts[0] {
        "progression" => RelationType::Progression,
        "and" => RelationType::And,
        "or" => RelationType::Or,
        "xor" => RelationType::Xor,
        "consistent-union" => RelationType::ConsistentUnion,
        "arithmetic" => RelationType::Arithmetic,
        "constant" => RelationType::Constant,
        other => return Err(Error::Config(format!("unknown relation '{other}'"))),
    };
    let object = match parts[1] {
        "shape" => ObjectKind::Shape,
        "line" => ObjectKind::Line,
        other => return Err(Error::Config(format!("unknown object '{other}'"))),
    };
    let attribute = match parts[2] {
        "type" => AttributeKind::Type,
        "size" => AttributeKind::Size,
        "color" => AttributeKind::Color,
        "position" => AttributeKind::Position,
        "number" => AttributeKind::Number,
        other => return Err(Error::Config(format!("unknown attribute '{other}'"))),
    };
    Ok((relation, object, attribute))
}
