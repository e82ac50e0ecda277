//! Transfer-learning harness: reuse a trained backbone on a new single-label
//! dataset, sweeping train-set size over ten random splits each.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{self, InferenceMode, LabelSet};
use crate::model::{self, EncoderConfig, EMOTION_HEAD_PREFIX};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;
use crate::trainer::{self, Setup, TrainConfig};
use crate::data::{DefinitionTable, PrimaryExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use std::collections::BTreeSet;

/// One requested train-set size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrainSize {
    Absolute(usize),
    /// Percentage of the dataset, e.g. 80 for the "80% of total" point.
    Percent(u32),
}

impl TrainSize {
    pub fn resolve(self, dataset_len: usize) -> usize {
        match self {
            TrainSize::Absolute(n) => n,
            TrainSize::Percent(p) => dataset_len * p as usize / 100,
        }
    }

    pub fn label(self) -> String {
        match self {
            TrainSize::Absolute(n) => n.to_string(),
            TrainSize::Percent(p) => format!("{p}%"),
        }
    }
}

impl std::str::FromStr for TrainSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_suffix('%') {
            Ok(TrainSize::Percent(p.parse().map_err(|_| {
                Error::Config(format!("bad percentage {s:?}"))
            })?))
        } else {
            Ok(TrainSize::Absolute(s.parse().map_err(|_| {
                Error::Config(format!("bad train size {s:?}"))
            })?))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransferPlan {
    pub sizes: Vec<TrainSize>,
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for TransferPlan {
    fn default() -> Self {
        TransferPlan {
            sizes: vec![
                TrainSize::Absolute(100),
                TrainSize::Absolute(200),
                TrainSize::Absolute(500),
                TrainSize::Absolute(1000),
                TrainSize::Percent(80),
            ],
            n_splits: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TargetExample {
    pub text: String,
    pub label: usize,
}

/// Target dataset with its own label space; label ids follow the sorted
/// order of distinct label names, shared by every split.
#[derive(Clone, Debug)]
pub struct TargetDataset {
    pub examples: Vec<TargetExample>,
    pub label_names: Vec<String>,
}

impl TargetDataset {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("empty target dataset".into()));
        }
        let mut names: Vec<String> = pairs.iter().map(|(_, n)| n.clone()).collect();
        names.sort();
        names.dedup();
        if names.len() < 2 {
            return Err(Error::Data("target dataset needs at least 2 labels".into()));
        }
        let examples = pairs
            .into_iter()
            .map(|(text, name)| {
                let label = names.binary_search(&name).expect("name collected above");
                TargetExample { text, label }
            })
            .collect();
        Ok(TargetDataset { examples, label_names: names })
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }
}

/// Copy the backbone (and CDP/MLM heads) bitwise; replace the emotion head
/// with a fresh `hidden x L_new` layer. Nothing is frozen.
pub fn reinit_classifier_head(
    checkpoint: &Checkpoint,
    num_labels_new: usize,
    seed: u64,
) -> Result<(EncoderConfig, ParamSet<f32>)> {
    if num_labels_new < 2 {
        return Err(Error::Config("new label space must have at least 2 labels".into()));
    }
    let h = checkpoint.encoder_config.hidden_dim;
    let mut params = checkpoint.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).unwrap();
    let mut data = Vec::with_capacity(h * num_labels_new);
    while data.len() < h * num_labels_new {
        let v: f64 = normal.sample(&mut rng);
        if v.abs() <= 0.04 {
            data.push(v as f32);
        }
    }
    params.remove(&format!("{EMOTION_HEAD_PREFIX}w"));
    params.remove(&format!("{EMOTION_HEAD_PREFIX}b"));
    params.insert(
        format!("{EMOTION_HEAD_PREFIX}w"),
        Tensor::new(vec![h, num_labels_new], data)?,
    );
    params.insert(format!("{EMOTION_HEAD_PREFIX}b"), Tensor::zeros(&[num_labels_new]));
    let config = EncoderConfig { num_labels: num_labels_new, ..checkpoint.encoder_config.clone() };
    Ok((config, params))
}

#[derive(Clone, Debug)]
pub struct SplitSpec {
    pub size: TrainSize,
    pub split_index: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// For each size and split index, a seeded uniform sample without
/// replacement; the complement is the test set.
pub fn make_transfer_splits(
    dataset_len: usize,
    plan: &TransferPlan,
) -> Result<Vec<SplitSpec>> {
    let mut out = Vec::new();
    for &size in &plan.sizes {
        let n = size.resolve(dataset_len);
        if n == 0 || n >= dataset_len {
            return Err(Error::Config(format!(
                "train size {} invalid for dataset of {dataset_len}",
                size.label()
            )));
        }
        for split_index in 0..plan.n_splits {
            let mut rng = ChaCha8Rng::seed_from_u64(
                plan.seed ^ (n as u64) << 20 ^ split_index as u64,
            );
            // partial Fisher-Yates: first n entries are the train sample
            let mut ids: Vec<usize> = (0..dataset_len).collect();
            for i in 0..n {
                let j = rng.gen_range(i..dataset_len);
                ids.swap(i, j);
            }
            let mut train_ids = ids[..n].to_vec();
            let mut test_ids = ids[n..].to_vec();
            train_ids.sort_unstable();
            test_ids.sort_unstable();
            out.push(SplitSpec { size, split_index, train_ids, test_ids });
        }
    }
    Ok(out)
}

/// Model initialization for a sweep run.
pub enum Initializer<'a> {
    /// Fresh random weights (the vanilla analog).
    Fresh { config: EncoderConfig },
    /// A trained checkpoint whose backbone is transferred.
    FromCheckpoint { name: String, checkpoint: &'a Checkpoint },
}

impl Initializer<'_> {
    pub fn name(&self) -> String {
        match self {
            Initializer::Fresh { .. } => "fresh".to_string(),
            Initializer::FromCheckpoint { name, .. } => name.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub dataset: String,
    pub initializer: String,
    pub size: String,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub n_runs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub dataset: String,
    pub cells: Vec<SweepCell>,
    /// Per-run macro-F1, keyed `(initializer, size, split_index)`.
    pub runs: Vec<(String, String, usize, f64)>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,initializer,size,mean_macro_f1,std_macro_f1,n_runs\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{}\n",
                c.dataset, c.initializer, c.size, c.mean_macro_f1, c.std_macro_f1, c.n_runs
            ));
        }
        out
    }
}

/// Fine-tune each initializer on every (size, split) and aggregate macro-F1.
/// Single-label targets are trained as one-hot under the same sigmoid BCE
/// head and evaluated by argmax. Auxiliary tasks stay disabled.
pub fn run_transfer_sweep(
    dataset_name: &str,
    dataset: &TargetDataset,
    plan: &TransferPlan,
    train_config: &TrainConfig,
    vocab: &Vocabulary,
    initializers: &[Initializer<'_>],
) -> Result<SweepReport> {
    let splits = make_transfer_splits(dataset.examples.len(), plan)?;
    // one definition entry per target label so the shared train path has a
    // consistent table; transfer fine-tuning never samples auxiliary steps
    let defs = DefinitionTable::new(
        dataset
            .label_names
            .iter()
            .map(|n| (n.clone(), format!("target label {n}")))
            .collect(),
    )?;

    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for init in initializers {
        let init_name = init.name();
        for &size in &plan.sizes {
            let mut scores = Vec::new();
            for spec in splits.iter().filter(|s| s.size == size) {
                let (encoder_config, params) = match init {
                    Initializer::Fresh { config } => {
                        let cfg = EncoderConfig {
                            num_labels: dataset.num_labels(),
                            vocab_size: vocab.len(),
                            ..config.clone()
                        };
                        let p = model::init_parameters::<f32>(&cfg)?;
                        (cfg, p)
                    }
                    Initializer::FromCheckpoint { checkpoint, .. } => reinit_classifier_head(
                        checkpoint,
                        dataset.num_labels(),
                        plan.seed ^ 0x68656164 ^ spec.split_index as u64,
                    )?,
                };
                let train_examples: Vec<PrimaryExample> = spec
                    .train_ids
                    .iter()
                    .map(|&i| PrimaryExample {
                        id: format!("t{i}"),
                        text: dataset.examples[i].text.clone(),
                        labels: BTreeSet::from([dataset.examples[i].label]),
                    })
                    .collect();
                let cfg = TrainConfig {
                    setup: Setup::ClassificationOnly,
                    seed: train_config.seed ^ spec.split_index as u64,
                    ..train_config.clone()
                };
                let out = trainer::train_from_params(
                    &cfg,
                    &encoder_config,
                    params,
                    &train_examples,
                    &[],
                    &defs,
                    vocab,
                    None,
                )?;
                let test_texts: Vec<String> = spec
                    .test_ids
                    .iter()
                    .map(|&i| dataset.examples[i].text.clone())
                    .collect();
                let test_golds: Vec<LabelSet> = spec
                    .test_ids
                    .iter()
                    .map(|&i| BTreeSet::from([dataset.examples[i].label]))
                    .collect();
                let report = eval::evaluate(
                    &out.checkpoint.params,
                    &encoder_config,
                    vocab,
                    &test_texts,
                    &test_golds,
                    None,
                    "transfer-test",
                    cfg.threshold,
                    InferenceMode::Argmax,
                )?;
                scores.push(report.macro_avg.f1);
                runs.push((
                    init_name.clone(),
                    size.label(),
                    spec.split_index,
                    report.macro_avg.f1,
                ));
            }
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let std =
                (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
            cells.push(SweepCell {
                dataset: dataset_name.to_string(),
                initializer: init_name.clone(),
                size: size.label(),
                mean_macro_f1: mean,
                std_macro_f1: std,
                n_runs: scores.len(),
            });
        }
    }
    Ok(SweepReport { dataset: dataset_name.to_string(), cells, runs })
}
