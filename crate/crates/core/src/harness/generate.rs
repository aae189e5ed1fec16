//! Dataset generation runs: deterministic parallel sampling plus a
//! manifest sidecar recording the config hash and seed.

use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::child_seed;
use crate::taskgen::dataset::{write_dataset, write_syllogisms};
use crate::taskgen::{sample_syllogism, sample_task, SyllogismInstance, TaskInstance};

use super::config::{ExperimentConfig, TaskStyle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub style: TaskStyle,
    pub train_count: u32,
    pub val_count: u32,
    pub test_count: u32,
    pub panel_side: u16,
    pub meta_width: usize,
}

pub struct GeneratedFiles {
    pub train: PathBuf,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub manifest: PathBuf,
}

/// Per-split seed tags. Train/val/test draw from disjoint child-seed
/// streams of the master seed.
const SPLIT_TAGS: [u64; 3] = [0x0100_0000, 0x0200_0000, 0x0300_0000];

/// Sample `count` matrix tasks; instance i uses child seed (master, tag+i),
/// so parallel and serial generation produce identical datasets.
pub fn generate_tasks(
    cfg: &ExperimentConfig,
    train_split: bool,
    split: usize,
    count: u32,
) -> Result<Vec<TaskInstance>> {
    let gen_cfg = cfg.generator_config(train_split)?;
    gen_cfg.validate()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = child_seed(cfg.seed, SPLIT_TAGS[split] + i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_task(&gen_cfg, &mut rng)
        })
        .collect()
}

/// Sample `count` syllogism tasks deterministically.
pub fn generate_syllogisms(
    cfg: &ExperimentConfig,
    split: usize,
    count: u32,
) -> Result<Vec<SyllogismInstance>> {
    let side = cfg.generator.panel_side;
    let contours = cfg.generator.n_contours;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = child_seed(cfg.seed, SPLIT_TAGS[split] + i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_syllogism(side, contours, &mut rng)
        })
        .collect()
}

/// Generate the configured splits into `out_dir` and write the manifest.
pub fn run_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<GeneratedFiles> {
    std::fs::create_dir_all(out_dir)?;
    let counts = [
        cfg.generator.train_count,
        cfg.generator.val_count,
        cfg.generator.test_count,
    ];
    if counts[0] == 0 {
        return Err(Error::Config("train_count must be positive".into()));
    }
    let ext = if cfg.style == TaskStyle::Syllogism { "mxgs" } else { "mxg1" };
    let names = ["train", "val", "test"];
    let mut paths: Vec<Option<PathBuf>> = vec![None, None, None];
    let mut meta_width = 0usize;
    for (split, (&count, name)) in counts.iter().zip(names).enumerate() {
        if count == 0 {
            continue;
        }
        let path = out_dir.join(format!("{name}.{ext}"));
        match cfg.style {
            TaskStyle::Syllogism => {
                let instances = generate_syllogisms(cfg, split, count)?;
                write_syllogisms(&instances, &path)?;
            }
            _ => {
                // Train and val draw from the regime's training value sets;
                // the test split uses the held-out sets.
                let instances = generate_tasks(cfg, split < 2, split, count)?;
                meta_width = instances[0].meta_target.len();
                write_dataset(&instances, &path)?;
            }
        }
        paths[split] = Some(path);
    }

    let manifest = Manifest {
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        style: cfg.style,
        train_count: counts[0],
        val_count: counts[1],
        test_count: counts[2],
        panel_side: cfg.generator.panel_side,
        meta_width,
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Usage(format!("manifest serialization: {e}")))?,
    )?;

    Ok(GeneratedFiles {
        train: paths[0].take().expect("train split exists"),
        val: paths[1].take(),
        test: paths[2].take(),
        manifest: manifest_path,
    })
}

/// Compare a dataset directory's manifest against a config; returns a
/// human-readable warning on mismatch.
pub fn manifest_warning(cfg: &ExperimentConfig, dir: &Path) -> Result<Option<String>> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(Some(format!("no manifest at {}", path.display())));
    }
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&path)?)
        .map_err(|e| Error::Format { offset: 0, msg: format!("bad manifest: {e}") })?;
    if manifest.config_hash != cfg.config_hash() {
        return Ok(Some(format!(
            "dataset manifest config hash {} does not match current config {}",
            manifest.config_hash,
            cfg.config_hash()
        )));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::parse(
            r#"
version = 1
style = "raven-like"
seed = 11
[generator]
panel_side = 40
relation_pool = ["constant/shape/type", "xor/shape/position"]
orientations = ["rows"]
train_count = 12
val_count = 4
test_count = 4
"#,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_across_runs() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let c = cfg();
        run_generate(&c, dir1.path()).unwrap();
        run_generate(&c, dir2.path()).unwrap();
        let a = std::fs::read(dir1.path().join("train.mxg1")).unwrap();
        let b = std::fs::read(dir2.path().join("train.mxg1")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg();
        run_generate(&c, dir.path()).unwrap();
        assert!(manifest_warning(&c, dir.path()).unwrap().is_none());
        let mut other = c.clone();
        other.seed = 999;
        assert!(manifest_warning(&other, dir.path()).unwrap().is_some());
    }

    #[test]
    fn extrapolation_train_and_test_values_are_disjoint() {
        let text = r#"
version = 1
style = "raven-like"
seed = 3
[generator]
panel_side = 40
regime = "extrapolation"
relation_pool = ["progression/shape/size", "constant/shape/color"]
orientations = ["rows"]
train_count = 20
test_count = 10
"#;
        let c = ExperimentConfig::parse(text).unwrap();
        let train = generate_tasks(&c, true, 0, 20).unwrap();
        let test = generate_tasks(&c, false, 2, 10).unwrap();
        let values = |ts: &[TaskInstance]| {
            let mut sizes = std::collections::BTreeSet::new();
            let mut colors = std::collections::BTreeSet::new();
            for t in ts {
                for p in t.context.iter().chain(t.candidates.iter()) {
                    for s in &p.shapes {
                        sizes.insert(s.size);
                        colors.insert(s.color);
                    }
                }
            }
            (sizes, colors)
        };
        let (train_sizes, train_colors) = values(&train);
        let (test_sizes, test_colors) = values(&test);
        assert!(train_sizes.iter().all(|v| *v < 5));
        assert!(test_sizes.iter().all(|v| *v >= 5));
        assert!(train_colors.is_disjoint(&test_colors));
    }
}
