//! Experiment configuration files and the built-in presets.

use std::path::{Path, PathBuf};

use cleanprio_core::analysis::GradientMode;
use cleanprio_core::data::{corrupt_labels, filter_classes, gen_two_clusters, load_idx};
use cleanprio_core::network::init_ntk;
use cleanprio_core::trainer::{Instrumentation, LossKind, TrainConfig};
use cleanprio_core::{Activation, ClassConvention, Head, LabeledDataset, NetworkConfig, NetworkState, SeededRng};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the MNIST directory named in a config file.
pub const MNIST_DIR_ENV: &str = "CLEANPRIO_MNIST_DIR";

pub const PRESETS: [&str; 3] = ["synthetic-binary", "mnist-7v9-fcn", "mnist10-fcn"];

// Streams of the master seed.
const DATA_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const TEST_STREAM: u64 = 4;
const HIST_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub noise_level: f64,
    pub output_dir: String,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub train: TrainSpec,
    pub instrument: InstrumentSpec,
    pub sweep: SweepAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx(IdxSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub center_a: [f64; 2],
    pub center_b: [f64; 2],
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub dir: String,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
    /// Original digits to keep, relabeled 0.. in this order; empty keeps all.
    pub classes: Vec<usize>,
    /// Random subsample sizes; 0 keeps everything.
    pub train_limit: usize,
    pub test_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub instrument_every: u64,
    pub loss: LossKind,
    /// Write a parameter snapshot every this many steps; 0 disables.
    pub snapshot_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSpec {
    pub classes: Vec<usize>,
    pub mode: GradientMode,
    pub convention: ClassConvention,
    pub pair_budget: usize,
    pub decomposition_check: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    /// Hidden width applied to every hidden layer.
    pub widths: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Training and test sets built from a config.
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "synthetic-binary" => Ok(synthetic_binary()),
            "mnist-7v9-fcn" => Ok(mnist_7v9()),
            "mnist10-fcn" => Ok(mnist10()),
            _ => Err(CliError::Usage(format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(0.0..0.5).contains(&self.noise_level) {
            return bad(format!("noise_level must lie in [0, 0.5), got {}", self.noise_level));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad("network.hidden needs at least one positive width".into());
        }
        if !(self.network.output_scale > 0.0 && self.network.output_scale.is_finite()) {
            return bad("network.output_scale must be positive".into());
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("train.learning_rate must be positive".into());
        }
        if t.eval_every == 0 || t.instrument_every == 0 {
            return bad("train.eval_every and train.instrument_every must be at least 1".into());
        }
        if self.instrument.pair_budget == 0 {
            return bad("instrument.pair_budget must be positive".into());
        }
        let classes = self.num_classes();
        if let Some(c) = self.instrument.classes.iter().find(|&&c| c >= classes) {
            return bad(format!("instrument.classes: class {c} out of range for {classes} classes"));
        }
        if t.loss != LossKind::for_head(self.head()) {
            return bad(format!("train.loss {:?} does not fit a {classes}-class problem", t.loss));
        }
        if classes == 2 && self.instrument.mode == GradientMode::SingleLogit {
            return bad("single_logit mode needs more than two classes".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                if s.n_train == 0 || s.n_train % 2 != 0 || s.n_test == 0 || s.n_test % 2 != 0 {
                    return bad("synthetic n_train and n_test must be even and positive".into());
                }
            }
            DatasetSpec::Idx(s) => {
                if s.classes.len() == 1 {
                    return bad("dataset.classes must keep at least two classes".into());
                }
            }
        }
        let s = &self.sweep;
        if s.widths.contains(&0) {
            return bad("sweep.widths must be positive".into());
        }
        if let Some(d) = s.noise_levels.iter().find(|d| !(0.0..0.5).contains(*d)) {
            return bad(format!("sweep.noise_levels: {d} outside [0, 0.5)"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Synthetic(_) => 2,
            DatasetSpec::Idx(s) if s.classes.is_empty() => 10,
            DatasetSpec::Idx(s) => s.classes.len(),
        }
    }

    pub fn head(&self) -> Head {
        if self.num_classes() == 2 {
            Head::Sigmoid
        } else {
            Head::Softmax
        }
    }

    fn input_dim(&self, ds: &LabeledDataset) -> usize {
        ds.dim()
    }

    fn rng(&self, stream: u64) -> SeededRng {
        SeededRng::new(self.seed).derive(stream)
    }

    /// Loads or generates the data and corrupts the training labels.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                let train = gen_two_clusters(s.n_train, s.center_a, s.center_b, s.spread, &mut self.rng(DATA_STREAM))?;
                let test = gen_two_clusters(s.n_test, s.center_a, s.center_b, s.spread, &mut self.rng(TEST_STREAM))?;
                (train, test)
            }
            DatasetSpec::Idx(s) => {
                let dir = std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&s.dir));
                let train = load_idx(dir.join(&s.train_images), dir.join(&s.train_labels))?;
                let test = load_idx(dir.join(&s.test_images), dir.join(&s.test_labels))?;
                let (train, test) = if s.classes.is_empty() {
                    (train, test)
                } else {
                    (filter_classes(&train, &s.classes)?, filter_classes(&test, &s.classes)?)
                };
                let mut rng = self.rng(DATA_STREAM);
                (limit(train, s.train_limit, &mut rng), limit(test, s.test_limit, &mut rng))
            }
        };
        let train = corrupt_labels(&train, self.noise_level, &mut self.rng(NOISE_STREAM))?;
        Ok(Prepared { train, test })
    }

    pub fn network_config(&self, input_dim: usize) -> NetworkConfig {
        let n = &self.network;
        let cfg = match self.head() {
            Head::Sigmoid => NetworkConfig::binary(input_dim, n.hidden.clone(), n.activation),
            Head::Softmax => NetworkConfig::multiclass(input_dim, n.hidden.clone(), n.activation, self.num_classes()),
        };
        cfg.with_output_scale(n.output_scale)
    }

    pub fn init_network(&self, data: &Prepared) -> Result<NetworkState, CliError> {
        let cfg = self.network_config(self.input_dim(&data.train));
        Ok(init_ntk(cfg, &mut self.rng(INIT_STREAM))?)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            eval_every: t.eval_every,
            instrument_every: t.instrument_every,
            seed: self.rng(TRAIN_STREAM).seed(),
            loss: t.loss,
        }
    }

    pub fn instrumentation(&self) -> Instrumentation {
        let i = &self.instrument;
        Instrumentation {
            classes: i.classes.clone(),
            mode: i.mode,
            convention: i.convention,
            decomposition_check: i.decomposition_check,
        }
    }

    pub fn histogram_rng(&self) -> SeededRng {
        self.rng(HIST_STREAM)
    }
}

fn limit(ds: LabeledDataset, keep: usize, rng: &mut SeededRng) -> LabeledDataset {
    if keep == 0 || keep >= ds.len() {
        return ds;
    }
    let mut rows = rng.sample_indices(ds.len(), keep);
    rows.sort_unstable();
    ds.select(&rows)
}

fn mnist_files(classes: Vec<usize>, train_limit: usize) -> DatasetSpec {
    DatasetSpec::Idx(IdxSpec {
        dir: "data/mnist".into(),
        train_images: "train-images-idx3-ubyte".into(),
        train_labels: "train-labels-idx1-ubyte".into(),
        test_images: "t10k-images-idx3-ubyte".into(),
        test_labels: "t10k-labels-idx1-ubyte".into(),
        classes,
        train_limit,
        test_limit: 0,
    })
}

fn synthetic_binary() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "synthetic-binary".into(),
        seed: 0,
        noise_level: 0.3,
        output_dir: "out".into(),
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            n_train: 1000,
            n_test: 1000,
            center_a: [2.0, 0.5],
            center_b: [-2.0, -0.5],
            spread: 0.8,
        }),
        network: NetworkSpec {
            hidden: vec![1024],
            activation: Activation::Relu,
            output_scale: 0.01,
        },
        train: TrainSpec {
            learning_rate: 100.0,
            batch_size: 0,
            max_steps: 1000,
            eval_every: 5,
            instrument_every: 5,
            loss: LossKind::Logistic,
            snapshot_every: 0,
        },
        instrument: InstrumentSpec {
            classes: vec![0, 1],
            mode: GradientMode::Full,
            convention: ClassConvention::GroundTruth,
            pair_budget: 20_000,
            decomposition_check: true,
        },
        sweep: SweepAxes {
            widths: vec![],
            noise_levels: vec![0.1, 0.2, 0.3, 0.4],
            seeds: vec![],
        },
    }
}

fn mnist_7v9() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "mnist-7v9-fcn".into(),
        seed: 0,
        noise_level: 0.4,
        output_dir: "out".into(),
        dataset: mnist_files(vec![7, 9], 0),
        network: NetworkSpec {
            hidden: vec![512, 512],
            activation: Activation::Relu,
            output_scale: 0.01,
        },
        train: TrainSpec {
            learning_rate: 50.0,
            batch_size: 256,
            max_steps: 6000,
            eval_every: 50,
            instrument_every: 50,
            loss: LossKind::Logistic,
            snapshot_every: 0,
        },
        instrument: InstrumentSpec {
            classes: vec![0, 1],
            mode: GradientMode::Full,
            convention: ClassConvention::GroundTruth,
            pair_budget: 20_000,
            decomposition_check: false,
        },
        sweep: SweepAxes {
            widths: vec![32, 512, 2048],
            noise_levels: vec![],
            seeds: vec![],
        },
    }
}

fn mnist10() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "mnist10-fcn".into(),
        seed: 0,
        noise_level: 0.3,
        output_dir: "out".into(),
        dataset: mnist_files(vec![], 0),
        network: NetworkSpec {
            hidden: vec![512, 512],
            activation: Activation::Relu,
            output_scale: 0.01,
        },
        train: TrainSpec {
            learning_rate: 50.0,
            batch_size: 512,
            max_steps: 3000,
            eval_every: 50,
            instrument_every: 50,
            loss: LossKind::CrossEntropy,
            snapshot_every: 0,
        },
        instrument: InstrumentSpec {
            classes: (0..10).collect(),
            mode: GradientMode::SingleLogit,
            convention: ClassConvention::GroundTruth,
            pair_budget: 20_000,
            decomposition_check: false,
        },
        sweep: SweepAxes::default(),
    }
}
