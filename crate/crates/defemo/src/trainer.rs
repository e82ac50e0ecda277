//! Multi-task training loop.
//!
//! Every iteration draws Bernoulli(p) to pick between a primary
//! (classification) step and an auxiliary (CDP / MLM / CDP+MLM) step; an
//! epoch is `ceil(|primary| / batch_size)` iterations regardless of the task
//! mix. Task iterators cycle independently with a per-pass reshuffle, so an
//! auxiliary pass may span several primary epochs.

use crate::adam::{AdamHyper, AdamState};
use crate::checkpoint::Checkpoint;
use crate::data::{
    apply_mlm_masking, build_aux_dataset, AuxExample, DefinitionTable, MaskingPolicy,
    PrimaryExample, Relation,
};
use crate::error::{Error, Result};
use crate::eval::{self, InferenceMode, LabelSet, MetricsReport};
use crate::graph::Graph;
use crate::model::{self, EncoderConfig, PaddedBatch};
use crate::params::ParamSet;
use crate::tokenizer::{self, TokenSequence, Vocabulary};
use crate::tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    ClassificationOnly,
    Cdp,
    Mlm,
    CdpMlm,
}

impl Setup {
    pub fn uses_aux(self) -> bool {
        self != Setup::ClassificationOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            Setup::ClassificationOnly => "classification_only",
            Setup::Cdp => "cdp",
            Setup::Mlm => "mlm",
            Setup::CdpMlm => "cdp_mlm",
        }
    }
}

impl std::str::FromStr for Setup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification_only" | "classification-only" => Ok(Setup::ClassificationOnly),
            "cdp" => Ok(Setup::Cdp),
            "mlm" => Ok(Setup::Mlm),
            "cdp_mlm" | "cdp-mlm" | "cdp+mlm" => Ok(Setup::CdpMlm),
            other => Err(Error::Config(format!("unknown setup {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setup: Setup,
    /// Bernoulli probability of a primary step.
    pub primary_prob: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
    pub resample_aux_per_epoch: bool,
    /// Apply MLM masking (and loss) to IsNotDefinition instances in the
    /// CDP+MLM setup.
    pub mlm_on_negatives: bool,
    pub trailing_sep: bool,
    pub mlm_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            setup: Setup::ClassificationOnly,
            primary_prob: 0.5,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            threshold: 0.3,
            seed: 0,
            resample_aux_per_epoch: false,
            mlm_on_negatives: true,
            trailing_sep: false,
            mlm_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.primary_prob) {
            return Err(Error::Config(format!("primary_prob {} outside [0,1]", self.primary_prob)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0 < self.threshold && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0,1)", self.threshold)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Primary,
    Auxiliary,
}

/// Bernoulli(p) draw between the primary and auxiliary task.
pub fn sample_task(rng: &mut impl Rng, p: f64) -> Result<Task> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("sampling probability {p} outside [0,1]")));
    }
    // p == 1 and p == 0 must be exact
    if p >= 1.0 {
        return Ok(Task::Primary);
    }
    if p <= 0.0 {
        return Ok(Task::Auxiliary);
    }
    Ok(if rng.gen::<f64>() < p { Task::Primary } else { Task::Auxiliary })
}

/// Index stream that reshuffles on every full pass.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(len: usize, seed: u64) -> Self {
        let mut c = Cycler { order: (0..len).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        c.reshuffle();
        c
    }

    fn reshuffle(&mut self) {
        // Fisher-Yates
        for i in (1..self.order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum LogEntry {
    Step { step: usize, task: Task, loss: f64 },
    Epoch { epoch: usize, dev_metrics: Option<MetricsReport> },
}

/// Labeled dev split used for per-epoch metrics.
pub struct DevSplit {
    pub texts: Vec<String>,
    pub golds: Vec<LabelSet>,
}

/// Observer for test hooks; sees every auxiliary batch before the step runs.
pub trait AuxObserver {
    fn on_aux_batch(&mut self, instances: &[AuxExample]);
}

impl<F: FnMut(&[AuxExample])> AuxObserver for F {
    fn on_aux_batch(&mut self, instances: &[AuxExample]) {
        self(instances)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogEntry>,
    pub primary_steps: usize,
    pub auxiliary_steps: usize,
}

pub fn train(
    train_config: &TrainConfig,
    encoder_config: &EncoderConfig,
    primary: &[PrimaryExample],
    aux: &[AuxExample],
    defs: &DefinitionTable,
    vocab: &Vocabulary,
    dev: Option<&DevSplit>,
) -> Result<TrainOutcome> {
    let params = model::init_parameters(encoder_config)?;
    train_impl(train_config, encoder_config, params, primary, aux, defs, vocab, dev, None)
}

/// Train starting from existing parameters (transfer fine-tuning).
#[allow(clippy::too_many_arguments)]
pub fn train_from_params(
    train_config: &TrainConfig,
    encoder_config: &EncoderConfig,
    params: ParamSet<f32>,
    primary: &[PrimaryExample],
    aux: &[AuxExample],
    defs: &DefinitionTable,
    vocab: &Vocabulary,
    dev: Option<&DevSplit>,
) -> Result<TrainOutcome> {
    train_impl(train_config, encoder_config, params, primary, aux, defs, vocab, dev, None)
}

#[allow(clippy::too_many_arguments)]
pub fn train_with_observer(
    train_config: &TrainConfig,
    encoder_config: &EncoderConfig,
    primary: &[PrimaryExample],
    aux: &[AuxExample],
    defs: &DefinitionTable,
    vocab: &Vocabulary,
    dev: Option<&DevSplit>,
    observer: Option<&mut dyn AuxObserver>,
) -> Result<TrainOutcome> {
    let params = model::init_parameters(encoder_config)?;
    train_impl(train_config, encoder_config, params, primary, aux, defs, vocab, dev, observer)
}

#[allow(clippy::too_many_arguments)]
fn train_impl(
    train_config: &TrainConfig,
    encoder_config: &EncoderConfig,
    initial_params: ParamSet<f32>,
    primary: &[PrimaryExample],
    aux: &[AuxExample],
    defs: &DefinitionTable,
    vocab: &Vocabulary,
    dev: Option<&DevSplit>,
    mut observer: Option<&mut dyn AuxObserver>,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    encoder_config.validate()?;
    if primary.is_empty() {
        return Err(Error::Data("empty primary dataset".into()));
    }
    if defs.num_labels() != encoder_config.num_labels {
        return Err(Error::Config(format!(
            "definitions list {} labels but the model has {}",
            defs.num_labels(),
            encoder_config.num_labels
        )));
    }
    if vocab.len() != encoder_config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary size {} does not match model vocab_size {}",
            vocab.len(),
            encoder_config.vocab_size
        )));
    }

    // classification-only is the degenerate p = 1 run
    let primary_prob =
        if train_config.setup == Setup::ClassificationOnly { 1.0 } else { train_config.primary_prob };

    // the MLM setup trains only on positive instances
    let filter_aux = |items: &[AuxExample]| -> Vec<AuxExample> {
        match train_config.setup {
            Setup::Mlm => items
                .iter()
                .filter(|a| a.relation == Relation::IsDefinition)
                .cloned()
                .collect(),
            _ => items.to_vec(),
        }
    };
    let mut active_aux = filter_aux(aux);
    if train_config.setup.uses_aux() && active_aux.is_empty() {
        return Err(Error::Data("auxiliary dataset is empty".into()));
    }

    let seed = train_config.seed;
    let mut task_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7461736b);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61736b);
    let mut primary_iter = Cycler::new(primary.len(), seed ^ 0x7072696d);
    let mut aux_iter = Cycler::new(active_aux.len().max(1), seed ^ 0x617578);

    let mut params = initial_params;
    let mut adam = AdamState::new(&params, AdamHyper::with_lr(train_config.learning_rate));

    let steps_per_epoch = primary.len().div_ceil(train_config.batch_size);
    let mut log = Vec::new();
    let mut step = 0usize;
    let mut primary_steps = 0usize;
    let mut auxiliary_steps = 0usize;

    for epoch in 0..train_config.epochs {
        if train_config.resample_aux_per_epoch && epoch > 0 && train_config.setup.uses_aux() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x61757862 ^ (epoch as u64) << 32);
            active_aux = filter_aux(&build_aux_dataset(primary, defs, &mut rng)?);
            aux_iter = Cycler::new(active_aux.len(), seed ^ 0x617578 ^ (epoch as u64) << 16);
        }
        for _ in 0..steps_per_epoch {
            step += 1;
            let task = sample_task(&mut task_rng, primary_prob)?;
            let loss = match task {
                Task::Primary => {
                    primary_steps += 1;
                    let indices = primary_iter.next_batch(train_config.batch_size);
                    primary_step(
                        &mut params,
                        &mut adam,
                        encoder_config,
                        train_config,
                        vocab,
                        primary,
                        &indices,
                        step,
                    )?
                }
                Task::Auxiliary => {
                    auxiliary_steps += 1;
                    let indices = aux_iter.next_batch(train_config.batch_size);
                    let instances: Vec<AuxExample> =
                        indices.iter().map(|&i| active_aux[i].clone()).collect();
                    if let Some(obs) = observer.as_deref_mut() {
                        obs.on_aux_batch(&instances);
                    }
                    auxiliary_step(
                        &mut params,
                        &mut adam,
                        encoder_config,
                        train_config,
                        vocab,
                        defs,
                        &instances,
                        &mut mask_rng,
                    )?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    op: "train_step".into(),
                    detail: Some(format!("task {task:?}, step {step}")),
                });
            }
            log.push(LogEntry::Step { step, task, loss });
        }
        let dev_metrics = match dev {
            Some(split) => Some(eval::evaluate(
                &params,
                encoder_config,
                vocab,
                &split.texts,
                &split.golds,
                Some(defs),
                "dev",
                train_config.threshold,
                InferenceMode::Threshold,
            )?),
            None => None,
        };
        log.push(LogEntry::Epoch { epoch: epoch + 1, dev_metrics });
    }

    let checkpoint =
        Checkpoint::new(encoder_config.clone(), train_config.clone(), params);
    Ok(TrainOutcome { checkpoint, log, primary_steps, auxiliary_steps })
}

#[allow(clippy::too_many_arguments)]
fn primary_step(
    params: &mut ParamSet<f32>,
    adam: &mut AdamState<f32>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    vocab: &Vocabulary,
    primary: &[PrimaryExample],
    indices: &[usize],
    step: usize,
) -> Result<f64> {
    let seqs: Vec<TokenSequence> = indices
        .iter()
        .map(|&i| tokenizer::encode_single(&primary[i].text, vocab, encoder_config.max_len))
        .collect::<Result<_>>()?;
    let label_sets: Vec<LabelSet> = indices.iter().map(|&i| primary[i].labels.clone()).collect();
    let batch = PaddedBatch::from_sequences(&seqs, encoder_config.max_len)?;
    let targets = model::multi_hot::<f32>(&label_sets, encoder_config.num_labels);

    let mut g = Graph::new(true);
    let bound = params.bind(&mut g);
    let hidden = model::encode(&mut g, &bound, encoder_config, &batch)?;
    let pooled = model::pool(&mut g, &bound, hidden, &batch)?;
    let dropout_seed = train_config.seed ^ 0x64726f70 ^ (step as u64);
    let logits = model::emotion_logits(&mut g, &bound, encoder_config, pooled, dropout_seed)?;
    let loss = model::emotion_loss(&mut g, logits, &targets)?;
    g.backward(loss)?;
    let grads = bound.gradients(&g);
    adam.step(params, &grads)?;
    Ok(g.value(loss).item().as_f64())
}

#[allow(clippy::too_many_arguments)]
fn auxiliary_step(
    params: &mut ParamSet<f32>,
    adam: &mut AdamState<f32>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    vocab: &Vocabulary,
    defs: &DefinitionTable,
    instances: &[AuxExample],
    mask_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pairs: Vec<TokenSequence> = instances
        .iter()
        .map(|a| {
            tokenizer::encode_pair(
                &a.text,
                defs.definition(a.def_label),
                vocab,
                encoder_config.max_len,
                train_config.trailing_sep,
            )
        })
        .collect::<Result<_>>()?;
    let cdp_targets: Vec<usize> = instances
        .iter()
        .map(|a| usize::from(a.relation == Relation::IsDefinition))
        .collect();

    let setup = train_config.setup;
    let needs_mlm = matches!(setup, Setup::Mlm | Setup::CdpMlm);

    // mask where required; other instances keep their original tokens
    let policy = MaskingPolicy::default();
    let mut input_ids: Vec<Vec<usize>> = Vec::with_capacity(pairs.len());
    let mut segments: Vec<Vec<usize>> = Vec::with_capacity(pairs.len());
    let mut masked_positions: Vec<(usize, usize)> = Vec::new(); // (row, pos)
    let mut mlm_targets: Vec<usize> = Vec::new();
    for (row, (seq, inst)) in pairs.iter().zip(instances).enumerate() {
        let mask_this = needs_mlm
            && (setup == Setup::Mlm
                || train_config.mlm_on_negatives
                || inst.relation == Relation::IsDefinition);
        if mask_this {
            let masked = apply_mlm_masking(seq, vocab, &policy, mask_rng)?;
            for (&pos, &target) in masked.mask_positions.iter().zip(&masked.target_ids) {
                masked_positions.push((row, pos));
                mlm_targets.push(target);
            }
            input_ids.push(masked.input_ids);
            segments.push(masked.segment_ids);
        } else {
            input_ids.push(seq.ids.clone());
            segments.push(seq.segment_ids.clone());
        }
    }
    let batch = PaddedBatch::new(&input_ids, &segments, encoder_config.max_len)?;
    let flat_positions: Vec<usize> =
        masked_positions.iter().map(|&(row, pos)| row * batch.seq + pos).collect();

    let mut g = Graph::new(true);
    let bound = params.bind(&mut g);
    let hidden = model::encode(&mut g, &bound, encoder_config, &batch)?;
    let loss = match setup {
        Setup::Cdp => {
            let pooled = model::pool(&mut g, &bound, hidden, &batch)?;
            let logits = model::cdp_logits(&mut g, &bound, pooled)?;
            model::cross_entropy_loss(&mut g, logits, cdp_targets)?
        }
        Setup::Mlm => {
            let logits = model::mlm_logits(&mut g, &bound, hidden, &flat_positions)?;
            model::cross_entropy_loss(&mut g, logits, mlm_targets)?
        }
        Setup::CdpMlm => {
            let pooled = model::pool(&mut g, &bound, hidden, &batch)?;
            let logits = model::cdp_logits(&mut g, &bound, pooled)?;
            let cdp_loss = model::cross_entropy_loss(&mut g, logits, cdp_targets)?;
            let mlm_logits = model::mlm_logits(&mut g, &bound, hidden, &flat_positions)?;
            let mlm_loss = model::cross_entropy_loss(&mut g, mlm_logits, mlm_targets)?;
            model::combined_loss(&mut g, cdp_loss, mlm_loss, train_config.mlm_weight)?
        }
        Setup::ClassificationOnly => unreachable!("no auxiliary steps in classification_only"),
    };
    g.backward(loss)?;
    let grads = bound.gradients(&g);
    adam.step(params, &grads)?;
    Ok(g.value(loss).item().as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CDP_HEAD_PREFIX, EMOTION_HEAD_PREFIX, MLM_HEAD_PREFIX};
    use std::collections::BTreeSet;

    fn defs(n: usize) -> DefinitionTable {
        DefinitionTable::new(
            (0..n)
                .map(|i| (format!("label{i}"), format!("definition words for label {i}")))
                .collect(),
        )
        .unwrap()
    }

    fn toy_dataset(n: usize, num_labels: usize) -> Vec<PrimaryExample> {
        (0..n)
            .map(|i| PrimaryExample {
                id: format!("e{i}"),
                text: format!("sample text number {i} about label{}", i % num_labels),
                labels: BTreeSet::from([i % num_labels]),
            })
            .collect()
    }

    fn toy_setup(
        setup: Setup,
        epochs: usize,
    ) -> (TrainConfig, EncoderConfig, Vec<PrimaryExample>, Vec<AuxExample>, DefinitionTable, Vocabulary)
    {
        let num_labels = 4;
        let d = defs(num_labels);
        let primary = toy_dataset(12, num_labels);
        let mut corpus: Vec<String> = primary.iter().map(|e| e.text.clone()).collect();
        corpus.extend((0..num_labels).map(|l| d.definition(l).to_string()));
        let vocab = tokenizer::build_vocab(corpus.iter(), 1, 500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let aux = build_aux_dataset(&primary, &d, &mut rng).unwrap();
        let encoder = EncoderConfig {
            max_len: 32,
            ..EncoderConfig::tiny(vocab.len(), num_labels)
        };
        let train = TrainConfig {
            setup,
            epochs,
            batch_size: 4,
            primary_prob: 0.5,
            seed: 7,
            ..TrainConfig::default()
        };
        (train, encoder, primary, aux, d, vocab)
    }

    #[test]
    fn sample_task_extremes_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_task(&mut rng, 1.0).unwrap(), Task::Primary);
            assert_eq!(sample_task(&mut rng, 0.0).unwrap(), Task::Auxiliary);
        }
        assert!(sample_task(&mut rng, 1.5).is_err());
        assert!(sample_task(&mut rng, -0.1).is_err());
    }

    #[test]
    fn sample_task_frequency_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 10_000;
        let primary = (0..n)
            .filter(|_| sample_task(&mut rng, 0.5).unwrap() == Task::Primary)
            .count();
        let fraction = primary as f64 / n as f64;
        assert!((0.485..=0.515).contains(&fraction), "fraction {fraction}");
    }

    #[test]
    fn cycler_covers_every_index_each_pass() {
        let mut c = Cycler::new(10, 5);
        let mut seen: Vec<usize> = c.next_batch(10);
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn primary_step_leaves_aux_heads_untouched() {
        let (train_cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::CdpMlm, 1);
        let cfg = TrainConfig { primary_prob: 1.0, epochs: 1, ..train_cfg };
        let before: ParamSet<f32> = model::init_parameters(&enc).unwrap();
        let out = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        let after = &out.checkpoint.params;
        for name in after.names() {
            let same = after.get(name).unwrap() == before.get(name).unwrap();
            if name.starts_with(CDP_HEAD_PREFIX) || name.starts_with(MLM_HEAD_PREFIX) {
                assert!(same, "{name} changed on a primary-only run");
            }
            if name == "emb.token" {
                assert!(!same, "backbone never updated");
            }
        }
    }

    #[test]
    fn aux_cdp_step_leaves_emotion_head_untouched_but_changes_backbone() {
        let (train_cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::Cdp, 1);
        let cfg = TrainConfig { primary_prob: 0.0, epochs: 1, ..train_cfg };
        let before: ParamSet<f32> = model::init_parameters(&enc).unwrap();
        let out = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        let after = &out.checkpoint.params;
        assert_eq!(
            after.get("head.emotion.w").unwrap(),
            before.get("head.emotion.w").unwrap()
        );
        assert_ne!(after.get("emb.token").unwrap(), before.get("emb.token").unwrap());
        assert_ne!(
            after.get(&format!("{CDP_HEAD_PREFIX}w")).unwrap(),
            before.get(&format!("{CDP_HEAD_PREFIX}w")).unwrap()
        );
        let _ = EMOTION_HEAD_PREFIX;
    }

    #[test]
    fn mlm_setup_never_sees_negative_instances() {
        let (cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::Mlm, 2);
        let cfg = TrainConfig { primary_prob: 0.3, ..cfg };
        let mut saw_negative = false;
        let mut observer = |batch: &[AuxExample]| {
            if batch.iter().any(|a| a.relation == Relation::IsNotDefinition) {
                saw_negative = true;
            }
        };
        train_with_observer(&cfg, &enc, &primary, &aux, &d, &vocab, None, Some(&mut observer))
            .unwrap();
        assert!(!saw_negative);
    }

    #[test]
    fn classification_only_equals_p1_run_bitwise() {
        let (cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::ClassificationOnly, 1);
        let a = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        // same seed, p forced to 1.0 internally even with a different requested p
        let cfg2 = TrainConfig { primary_prob: 0.2, ..cfg };
        let b = train(&cfg2, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        for name in a.checkpoint.params.names() {
            assert_eq!(
                a.checkpoint.params.get(name).unwrap(),
                b.checkpoint.params.get(name).unwrap(),
                "{name}"
            );
        }
        assert_eq!(a.auxiliary_steps, 0);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let (cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::CdpMlm, 2);
        let a = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        let b = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn epoch_accounting_follows_primary_size() {
        let (cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::Cdp, 3);
        let out = train(&cfg, &enc, &primary, &aux, &d, &vocab, None).unwrap();
        let expected = 3 * primary.len().div_ceil(cfg.batch_size);
        assert_eq!(out.primary_steps + out.auxiliary_steps, expected);
    }

    #[test]
    fn empty_primary_dataset_rejected() {
        let (cfg, enc, _, aux, d, vocab) = toy_setup(Setup::Cdp, 1);
        assert!(train(&cfg, &enc, &[], &aux, &d, &vocab, None).is_err());
    }

    #[test]
    fn overfit_loss_decreases() {
        let (cfg, enc, primary, aux, d, vocab) = toy_setup(Setup::ClassificationOnly, 40);
        let primary8 = &primary[..8];
        let out = train(&cfg, &enc, primary8, &aux, &d, &vocab, None).unwrap();
        let losses: Vec<f64> = out
            .log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect();
        assert!(losses.len() >= 40);
        assert!(
            losses.last().unwrap() < &losses[0],
            "no improvement: first {} last {}",
            losses[0],
            losses.last().unwrap()
        );
    }
}
