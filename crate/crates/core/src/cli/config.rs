//! TOML run configuration. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! [paths]      dataset, held_out, gan_run, seg_run
//! [dataset]    n, seed, size, ood_rate, corrupt_rate, n_objects, max_ood,
//!              noise_level, held_out_fraction
//! [patches]    patch_size, tau, max_tries, max_triplets
//! [detector]   head, base_filters, conv_layers
//! [train]      lambda_d, lr, batch_size, epochs, seed
//! [generator]  mode ("oracle" | "learned"), widths, disc_base, epochs,
//!              batch_size, lr, lambda_l1, adversarial, l1_gate, seed
//! [segnet]     widths, epochs, batch_size, lr, accuracy_gate, seed,
//!              use_for_eval
//! [eval]       chunk
//! [reproduce]  test_n, test_ood_rate, test_corrupt_rate, heads, render_n
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{CganConfig, DetectorConfig, HeadKind, SegConfig};
use crate::patches::TripletConfig;
use crate::toyworld::{DatasetSpec, SceneSpec, DEFAULT_NOISE};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub dataset: DatasetSection,
    pub patches: PatchSection,
    pub detector: DetectorSection,
    pub train: TrainSection,
    pub generator: GeneratorSection,
    pub segnet: SegnetSection,
    pub eval: EvalSection,
    pub reproduce: ReproduceSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    /// Held-out split; without it the tail of `dataset` is held out.
    pub held_out: Option<PathBuf>,
    /// Run directory of the gan stage.
    pub gan_run: Option<PathBuf>,
    /// Run directory of the seg stage.
    pub seg_run: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub ood_rate: f64,
    pub corrupt_rate: f64,
    pub n_objects: usize,
    pub max_ood: usize,
    pub noise_level: f32,
    pub held_out_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n: 400,
            seed: 0,
            size: 128,
            ood_rate: 0.0,
            corrupt_rate: 0.0,
            n_objects: 8,
            max_ood: 2,
            noise_level: DEFAULT_NOISE,
            held_out_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub patch_size: usize,
    pub tau: f64,
    pub max_tries: usize,
    /// Deterministic subsample of the training triplets.
    pub max_triplets: Option<usize>,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection {
            patch_size: 16,
            tau: 0.5,
            max_tries: 200,
            max_triplets: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub head: String,
    pub base_filters: usize,
    pub conv_layers: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            head: "fc".into(),
            base_filters: 16,
            conv_layers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda_d: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lambda_d: t.lambda_d,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: 1,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub mode: GeneratorMode,
    pub widths: [usize; 4],
    pub disc_base: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_l1: f64,
    pub adversarial: bool,
    pub l1_gate: f64,
    pub seed: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let c = CganConfig::default();
        GeneratorSection {
            mode: GeneratorMode::Oracle,
            widths: c.widths,
            disc_base: c.disc_base,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            lambda_l1: c.lambda_l1,
            adversarial: c.adversarial,
            l1_gate: c.l1_gate,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegnetSection {
    pub widths: [usize; 4],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub accuracy_gate: f64,
    pub seed: u64,
    /// Segment evaluation images with the seg-stage network instead of using
    /// the stored predictions.
    pub use_for_eval: bool,
}

impl Default for SegnetSection {
    fn default() -> Self {
        let c = SegConfig::default();
        SegnetSection {
            widths: c.widths,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            accuracy_gate: c.accuracy_gate,
            seed: c.seed,
            use_for_eval: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Patch pairs per detector forward pass.
    pub chunk: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { chunk: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceSection {
    pub test_n: usize,
    pub test_ood_rate: f64,
    pub test_corrupt_rate: f64,
    pub heads: Vec<String>,
    pub render_n: usize,
}

impl Default for ReproduceSection {
    fn default() -> Self {
        ReproduceSection {
            test_n: 100,
            test_ood_rate: 0.5,
            test_corrupt_rate: 0.3,
            heads: HeadKind::ALL.iter().map(|h| h.to_string()).collect(),
            render_n: 4,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Defaults, or the file when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn head(&self) -> Result<HeadKind> {
        self.detector.head.parse()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.dataset;
        DatasetSpec {
            scene: SceneSpec {
                noise_level: d.noise_level,
                ..SceneSpec::square(d.size, self.patches.patch_size)
            },
            count: d.n,
            seed: d.seed,
            n_objects: d.n_objects,
            ood_rate: d.ood_rate,
            max_ood: d.max_ood,
            corrupt_rate: d.corrupt_rate,
        }
    }

    pub fn detector_config(&self) -> Result<DetectorConfig> {
        Ok(DetectorConfig {
            head: self.head()?,
            patch_size: self.patches.patch_size,
            base_filters: self.detector.base_filters,
            conv_layers: self.detector.conv_layers,
            lambda_d: self.train.lambda_d,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_d: self.train.lambda_d,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.train.seed,
            ..TrainConfig::default()
        }
    }

    pub fn triplet_config(&self) -> TripletConfig {
        TripletConfig {
            patch_size: self.patches.patch_size,
            tau: self.patches.tau,
            seed: self.train.seed,
            max_tries: self.patches.max_tries,
        }
    }

    pub fn cgan_config(&self) -> CganConfig {
        let g = &self.generator;
        CganConfig {
            widths: g.widths,
            disc_base: g.disc_base,
            epochs: g.epochs,
            batch_size: g.batch_size,
            lr: g.lr,
            lambda_l1: g.lambda_l1,
            adversarial: g.adversarial,
            seed: g.seed,
            l1_gate: g.l1_gate,
        }
    }

    pub fn seg_config(&self) -> SegConfig {
        let s = &self.segnet;
        SegConfig {
            widths: s.widths,
            epochs: s.epochs,
            batch_size: s.batch_size,
            lr: s.lr,
            seed: s.seed,
            accuracy_gate: s.accuracy_gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().scene.validate()?;
        self.detector_config()?.validate()?;
        self.train_config().validate()?;
        if !(0.0..=1.0).contains(&self.patches.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1]", self.patches.tau)));
        }
        let f = self.dataset.held_out_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("held_out_fraction {f} outside (0, 1)")));
        }
        for (name, r) in [
            ("ood_rate", self.dataset.ood_rate),
            ("corrupt_rate", self.dataset.corrupt_rate),
            ("test_ood_rate", self.reproduce.test_ood_rate),
            ("test_corrupt_rate", self.reproduce.test_corrupt_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} {r} outside [0, 1]")));
            }
        }
        for h in &self.reproduce.heads {
            h.parse::<HeadKind>()?;
        }
        if self.eval.chunk == 0 {
            return Err(Error::invalid("eval.chunk must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = RunConfig::parse("", Path::new("c")).unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_and_partial_override() {
        let c = RunConfig::parse("[train]\nepochs = 3\n[detector]\nhead = \"deconv\"\n", Path::new("c")).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.lr, TrainSection::default().lr);
        assert_eq!(c.head().unwrap(), HeadKind::Deconv);
        assert_eq!(RunConfig::parse(&c.to_toml(), Path::new("c")).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nepoch = 3\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("[trian]\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("[generator]\nmode = \"magic\"\n", Path::new("c")).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::default();
        c.detector.head = "lstm".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.patches.patch_size = 24;
        assert!(c.validate().is_err());
    }
}
