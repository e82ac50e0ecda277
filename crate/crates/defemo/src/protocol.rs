//! Experiment protocols: the four-setup comparison and the Bernoulli-p
//! sweep, each emitting a compact results grid.

use crate::data::{build_aux_dataset, AuxExample, DefinitionTable, PrimaryExample};
use crate::error::Result;
use crate::eval::{self, InferenceMode, LabelSet};
use crate::model::EncoderConfig;
use crate::tokenizer::Vocabulary;
use crate::trainer::{self, Setup, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const ALL_SETUPS: [Setup; 4] =
    [Setup::ClassificationOnly, Setup::Cdp, Setup::Mlm, Setup::CdpMlm];

pub const SWEEP_SETUPS: [Setup; 3] = [Setup::Cdp, Setup::Mlm, Setup::CdpMlm];

pub const DEFAULT_P_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// One row of the setup-comparison report (test macro metrics per setup).
#[derive(Clone, Debug, Serialize)]
pub struct SetupRow {
    pub setup: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SetupComparison {
    pub split: String,
    pub rows: Vec<SetupRow>,
}

impl SetupComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setup,macro_precision,macro_recall,macro_f1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4}\n",
                r.setup, r.macro_precision, r.macro_recall, r.macro_f1
            ));
        }
        out
    }
}

/// p-sweep grid: one row per sampling probability, one column per setup.
#[derive(Clone, Debug, Serialize)]
pub struct PSweepReport {
    pub setups: Vec<String>,
    /// `(p, macro-F1 per setup in column order)`
    pub rows: Vec<(f64, Vec<f64>)>,
}

impl PSweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("p,{}\n", self.setups.join(","));
        for (p, scores) in &self.rows {
            let cells: Vec<String> = scores.iter().map(|s| format!("{s:.4}")).collect();
            out.push_str(&format!("{:.1},{}\n", p, cells.join(",")));
        }
        out
    }

    pub fn best_p(&self, setup_index: usize) -> f64 {
        self.rows
            .iter()
            .max_by(|a, b| a.1[setup_index].partial_cmp(&b.1[setup_index]).unwrap())
            .map(|(p, _)| *p)
            .unwrap_or(f64::NAN)
    }
}

pub struct ExperimentData<'a> {
    pub test_texts: Vec<String>,
    pub test_golds: Vec<LabelSet>,
    pub aux: Vec<AuxExample>,
    pub defs: &'a DefinitionTable,
    pub vocab: &'a Vocabulary,
}

/// Deterministic 80/20 head/tail split plus a seeded auxiliary dataset.
pub fn prepare_experiment_data<'a>(
    examples: &'a [PrimaryExample],
    defs: &'a DefinitionTable,
    vocab: &'a Vocabulary,
    seed: u64,
) -> Result<(Vec<PrimaryExample>, ExperimentData<'a>)> {
    let split = examples.len() * 8 / 10;
    let (train, test) = examples.split_at(split.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x617578);
    let aux = build_aux_dataset(train, defs, &mut rng)?;
    let data = ExperimentData {
        test_texts: test.iter().map(|e| e.text.clone()).collect(),
        test_golds: test.iter().map(|e| e.labels.clone()).collect(),
        aux,
        defs,
        vocab,
    };
    Ok((train.to_vec(), data))
}

fn run_one(
    setup: Setup,
    p: f64,
    base: &TrainConfig,
    encoder: &EncoderConfig,
    train: &[PrimaryExample],
    data: &ExperimentData<'_>,
) -> Result<(f64, f64, f64)> {
    let cfg = TrainConfig { setup, primary_prob: p, ..base.clone() };
    let out = trainer::train(&cfg, encoder, train, &data.aux, data.defs, data.vocab, None)?;
    let report = eval::evaluate(
        &out.checkpoint.params,
        encoder,
        data.vocab,
        &data.test_texts,
        &data.test_golds,
        Some(data.defs),
        "test",
        cfg.threshold,
        InferenceMode::Threshold,
    )?;
    Ok((report.macro_avg.precision, report.macro_avg.recall, report.macro_avg.f1))
}

/// Train and evaluate all four setups at the configured p; the comparative
/// deltas are reported, not asserted.
pub fn run_setup_comparison(
    base: &TrainConfig,
    encoder: &EncoderConfig,
    train: &[PrimaryExample],
    data: &ExperimentData<'_>,
) -> Result<SetupComparison> {
    let mut rows = Vec::new();
    for setup in ALL_SETUPS {
        let (precision, recall, f1) =
            run_one(setup, base.primary_prob, base, encoder, train, data)?;
        rows.push(SetupRow {
            setup: setup.label().to_string(),
            macro_precision: precision,
            macro_recall: recall,
            macro_f1: f1,
        });
    }
    Ok(SetupComparison { split: "test".into(), rows })
}

/// Sweep the Bernoulli probability over `p_grid` for every auxiliary setup.
pub fn run_p_sweep(
    base: &TrainConfig,
    encoder: &EncoderConfig,
    train: &[PrimaryExample],
    data: &ExperimentData<'_>,
    p_grid: &[f64],
) -> Result<PSweepReport> {
    let mut rows = Vec::new();
    for &p in p_grid {
        let mut scores = Vec::new();
        for setup in SWEEP_SETUPS {
            let (_, _, f1) = run_one(setup, p, base, encoder, train, data)?;
            scores.push(f1);
        }
        rows.push((p, scores));
    }
    Ok(PSweepReport {
        setups: SWEEP_SETUPS.iter().map(|s| s.label().to_string()).collect(),
        rows,
    })
}
