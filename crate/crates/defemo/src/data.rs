//! Dataset ingestion and auxiliary-dataset construction.
//!
//! The primary file is the published GoEmotions TSV layout
//! (`text<TAB>comma-joined label ids<TAB>id`). The definitions file is
//! `label_name<TAB>definition`, one line per label, line order defining the
//! label ids. For every (example, gold label) pair the auxiliary builder
//! emits one `IsDefinition` instance and one `IsNotDefinition` instance whose
//! definition label is drawn uniformly from the non-gold labels.

use crate::error::{Error, Result};
use crate::tokenizer::{TokenSequence, Vocabulary, CLS, MASK, NUM_SPECIALS, PAD, SEP};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::io::BufRead;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimaryExample {
    pub id: String,
    pub text: String,
    /// Gold label ids, always non-empty.
    pub labels: BTreeSet<usize>,
}

#[derive(Clone, Debug)]
pub struct DefinitionTable {
    names: Vec<String>,
    definitions: Vec<String>,
}

impl DefinitionTable {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut names = Vec::new();
        let mut definitions = Vec::new();
        for (i, (name, def)) in entries.into_iter().enumerate() {
            if names.contains(&name) {
                return Err(Error::Parse { line: i + 1, msg: format!("duplicate label {name:?}") });
            }
            if def.trim().is_empty() {
                return Err(Error::Parse { line: i + 1, msg: format!("empty definition for {name:?}") });
            }
            names.push(name);
            definitions.push(def);
        }
        if names.len() < 2 {
            return Err(Error::Data("definition table needs at least 2 labels".into()));
        }
        Ok(DefinitionTable { names, definitions })
    }

    pub fn num_labels(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn definition(&self, label: usize) -> &str {
        &self.definitions[label]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// The GoEmotions label set in the published order, with the definitions the
/// dataset authors gave their raters.
pub const GOEMOTIONS_DEFINITIONS_TSV: &str = include_str!("../data/goemotions_definitions.tsv");

pub fn default_definitions() -> DefinitionTable {
    parse_definitions(GOEMOTIONS_DEFINITIONS_TSV.as_bytes()).expect("bundled table is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    IsDefinition,
    IsNotDefinition,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::IsDefinition => "IsDefinition",
            Relation::IsNotDefinition => "IsNotDefinition",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxExample {
    pub text: String,
    pub def_label: usize,
    pub relation: Relation,
}

pub fn load_primary_tsv(path: &Path, num_labels: usize) -> Result<Vec<PrimaryExample>> {
    let file = std::fs::File::open(path)?;
    parse_primary(std::io::BufReader::new(file), num_labels)
}

pub fn parse_primary(r: impl BufRead, num_labels: usize) -> Result<Vec<PrimaryExample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut parts = line.split('\t');
        let (text, label_field, id) = match (parts.next(), parts.next(), parts.next()) {
            (Some(t), Some(l), Some(id)) => (t, l, id),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected text<TAB>labels<TAB>id".into(),
                })
            }
        };
        if label_field.trim().is_empty() {
            return Err(Error::Parse { line: lineno, msg: "empty label field".into() });
        }
        let mut labels = BTreeSet::new();
        for raw in label_field.split(',') {
            let label: usize = raw.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-integer label {raw:?}"),
            })?;
            if label >= num_labels {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("label {label} out of range (L = {num_labels})"),
                });
            }
            labels.insert(label);
        }
        out.push(PrimaryExample { id: id.to_string(), text: text.to_string(), labels });
    }
    Ok(out)
}

pub fn load_definitions(path: &Path) -> Result<DefinitionTable> {
    let file = std::fs::File::open(path)?;
    parse_definitions(std::io::BufReader::new(file))
}

pub fn parse_definitions(r: impl BufRead) -> Result<DefinitionTable> {
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (name, def) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected label_name<TAB>definition".into(),
        })?;
        entries.push((name.trim().to_string(), def.trim().to_string()));
    }
    DefinitionTable::new(entries)
}

/// Target (transfer) data: `text<TAB>single label name`.
pub fn parse_target(r: impl BufRead) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (text, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected text<TAB>label_name".into(),
        })?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty label name".into() });
        }
        out.push((text.to_string(), name.to_string()));
    }
    Ok(out)
}

/// Two auxiliary instances per (example, gold label) pair: one IsDefinition
/// for the gold label, one IsNotDefinition for a uniformly drawn non-gold
/// label. Output order follows input order, so the result is deterministic
/// for a fixed seed.
pub fn build_aux_dataset(
    examples: &[PrimaryExample],
    defs: &DefinitionTable,
    rng: &mut impl Rng,
) -> Result<Vec<AuxExample>> {
    let num_labels = defs.num_labels();
    let mut out = Vec::new();
    for ex in examples {
        if ex.labels.is_empty() {
            return Err(Error::Data(format!("example {:?} has no labels", ex.id)));
        }
        if let Some(&bad) = ex.labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::Data(format!("example {:?} label {} out of range", ex.id, bad)));
        }
        let negatives: Vec<usize> =
            (0..num_labels).filter(|l| !ex.labels.contains(l)).collect();
        if negatives.is_empty() {
            return Err(Error::Data(format!(
                "example {:?} is labeled with every class; no negative definition exists",
                ex.id
            )));
        }
        for &gold in &ex.labels {
            out.push(AuxExample {
                text: ex.text.clone(),
                def_label: gold,
                relation: Relation::IsDefinition,
            });
            let neg = negatives[rng.gen_range(0..negatives.len())];
            out.push(AuxExample {
                text: ex.text.clone(),
                def_label: neg,
                relation: Relation::IsNotDefinition,
            });
        }
    }
    Ok(out)
}

/// BERT-style masking policy.
#[derive(Clone, Copy, Debug)]
pub struct MaskingPolicy {
    /// Per-token selection probability.
    pub select_prob: f64,
    /// Of the selected: replaced by `[MASK]`.
    pub mask_prob: f64,
    /// Of the selected: replaced by a random non-special vocabulary token.
    pub random_prob: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy { select_prob: 0.15, mask_prob: 0.80, random_prob: 0.10 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedSequence {
    pub input_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// Sorted positions that were selected for prediction.
    pub mask_positions: Vec<usize>,
    /// Original ids at those positions.
    pub target_ids: Vec<usize>,
}

fn maskable(id: usize) -> bool {
    !matches!(id, CLS | SEP | PAD)
}

/// Select each maskable token independently with `select_prob` (forcing one
/// selection if the draw picks none), then 80/10/10 replace with `[MASK]`, a
/// random non-special token, or keep the original.
pub fn apply_mlm_masking(
    seq: &TokenSequence,
    vocab: &Vocabulary,
    policy: &MaskingPolicy,
    rng: &mut impl Rng,
) -> Result<MaskedSequence> {
    let candidates: Vec<usize> =
        (0..seq.ids.len()).filter(|&i| maskable(seq.ids[i])).collect();
    if candidates.is_empty() {
        return Err(Error::Data("sequence has no maskable tokens".into()));
    }
    if vocab.len() <= NUM_SPECIALS {
        return Err(Error::Data("vocabulary has no non-special tokens".into()));
    }

    let mut selected: Vec<usize> =
        candidates.iter().copied().filter(|_| rng.gen::<f64>() < policy.select_prob).collect();
    if selected.is_empty() {
        selected.push(candidates[rng.gen_range(0..candidates.len())]);
    }

    let mut input_ids = seq.ids.clone();
    let mut target_ids = Vec::with_capacity(selected.len());
    for &pos in &selected {
        target_ids.push(seq.ids[pos]);
        let roll: f64 = rng.gen();
        if roll < policy.mask_prob {
            input_ids[pos] = MASK;
        } else if roll < policy.mask_prob + policy.random_prob {
            input_ids[pos] = rng.gen_range(NUM_SPECIALS..vocab.len());
        } // else keep the original token
    }
    Ok(MaskedSequence {
        input_ids,
        segment_ids: seq.segment_ids.clone(),
        mask_positions: selected,
        target_ids,
    })
}

/// Distribution report over a primary dataset.
#[derive(Clone, Debug, Serialize)]
pub struct DatasetStats {
    pub num_examples: usize,
    pub per_label_counts: Vec<usize>,
    /// cardinality -> fraction of examples with that many labels
    pub cardinality_histogram: Vec<(usize, f64)>,
    pub single_label_fraction: f64,
}

pub fn dataset_stats(examples: &[PrimaryExample], num_labels: usize) -> Result<DatasetStats> {
    if examples.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let mut per_label = vec![0usize; num_labels];
    let mut by_cardinality: std::collections::BTreeMap<usize, usize> = Default::default();
    for ex in examples {
        for &l in &ex.labels {
            per_label[l] += 1;
        }
        *by_cardinality.entry(ex.labels.len()).or_insert(0) += 1;
    }
    let n = examples.len() as f64;
    let histogram: Vec<(usize, f64)> =
        by_cardinality.iter().map(|(&k, &c)| (k, c as f64 / n)).collect();
    let single = by_cardinality.get(&1).copied().unwrap_or(0) as f64 / n;
    Ok(DatasetStats {
        num_examples: examples.len(),
        per_label_counts: per_label,
        cardinality_histogram: histogram,
        single_label_fraction: single,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defs(n: usize) -> DefinitionTable {
        DefinitionTable::new(
            (0..n).map(|i| (format!("label{i}"), format!("definition of label {i}"))).collect(),
        )
        .unwrap()
    }

    fn example(id: &str, labels: &[usize]) -> PrimaryExample {
        PrimaryExample {
            id: id.into(),
            text: format!("text {id}"),
            labels: labels.iter().copied().collect(),
        }
    }

    #[test]
    fn parse_primary_line() {
        let got = parse_primary("good job\t0,15\tabc1\n".as_bytes(), 28).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].text, "good job");
        assert_eq!(got[0].labels, [0, 15].into_iter().collect());
        assert_eq!(got[0].id, "abc1");
    }

    #[test]
    fn parse_primary_rejects_out_of_range_and_empty_labels() {
        let err = parse_primary("x\t28\ta\n".as_bytes(), 28).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(parse_primary("x\t\ta\n".as_bytes(), 28).is_err());
        assert!(parse_primary("x\tfoo\ta\n".as_bytes(), 28).is_err());
    }

    #[test]
    fn bundled_definitions_match_published_table() {
        let t = default_definitions();
        assert_eq!(t.num_labels(), 28);
        assert_eq!(t.name(0), "admiration");
        assert_eq!(t.name(27), "neutral");
        let anger = t.label_of("anger").unwrap();
        assert_eq!(t.definition(anger), "A strong feeling of displeasure or antagonism.");
        let joy = t.label_of("joy").unwrap();
        assert!(t.definition(joy).starts_with("A feeling of pleasure and"));
    }

    #[test]
    fn definitions_reject_duplicates_and_empties() {
        assert!(parse_definitions("a\tdef\na\tother\n".as_bytes()).is_err());
        assert!(parse_definitions("a\tdef\nb\t \n".as_bytes()).is_err());
    }

    #[test]
    fn aux_counts_per_gold_label() {
        let d = defs(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aux = build_aux_dataset(&[example("a", &[2])], &d, &mut rng).unwrap();
        assert_eq!(aux.len(), 2);
        assert_eq!(aux[0].relation, Relation::IsDefinition);
        assert_eq!(aux[0].def_label, 2);
        assert_eq!(aux[1].relation, Relation::IsNotDefinition);
        assert_ne!(aux[1].def_label, 2);

        let aux = build_aux_dataset(&[example("b", &[1, 4])], &d, &mut rng).unwrap();
        assert_eq!(aux.len(), 4);
        assert_eq!(aux.iter().filter(|a| a.relation == Relation::IsDefinition).count(), 2);
    }

    #[test]
    fn aux_rejects_all_labels_gold() {
        let d = defs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_aux_dataset(&[example("a", &[0, 1, 2])], &d, &mut rng).is_err());
    }

    #[test]
    fn aux_deterministic_for_fixed_seed() {
        let d = defs(8);
        let examples: Vec<_> = (0..20).map(|i| example(&format!("e{i}"), &[i % 8])).collect();
        let a = build_aux_dataset(&examples, &d, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_aux_dataset(&examples, &d, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masking_never_touches_specials_and_restores_targets() {
        let vocab = tokenizer::build_vocab(["a b c d e f g h i j"], 1, 100).unwrap();
        let seq = tokenizer::encode_pair("a b c d e", "f g h i j", &vocab, 32, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let masked =
                apply_mlm_masking(&seq, &vocab, &MaskingPolicy::default(), &mut rng).unwrap();
            assert!(!masked.mask_positions.is_empty());
            assert_eq!(masked.mask_positions.len(), masked.target_ids.len());
            for &pos in &masked.mask_positions {
                assert!(maskable(seq.ids[pos]));
            }
            // restoring originals at mask positions differs from the input only
            // where random-token replacement happened
            let mut restored = masked.input_ids.clone();
            for (&pos, &orig) in masked.mask_positions.iter().zip(&masked.target_ids) {
                restored[pos] = orig;
            }
            assert_eq!(restored, seq.ids);
        }
    }

    #[test]
    fn masking_rejects_sequence_without_maskable_tokens() {
        let vocab = tokenizer::build_vocab(["a"], 1, 100).unwrap();
        let seq = TokenSequence { ids: vec![CLS, SEP], segment_ids: vec![0, 0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_mlm_masking(&seq, &vocab, &MaskingPolicy::default(), &mut rng).is_err());
    }

    #[test]
    fn stats_histograms() {
        let examples = vec![
            example("a", &[0]),
            example("b", &[1]),
            example("c", &[0, 1]),
            example("d", &[2]),
        ];
        let s = dataset_stats(&examples, 4).unwrap();
        assert_eq!(s.per_label_counts, vec![2, 2, 1, 0]);
        assert_eq!(s.single_label_fraction, 0.75);
        let total_label_mentions: usize = s.per_label_counts.iter().sum();
        assert!(total_label_mentions >= s.num_examples);
        assert_eq!(s.cardinality_histogram, vec![(1, 0.75), (2, 0.25)]);
    }

    #[test]
    fn stats_all_single_label() {
        let examples = vec![example("a", &[0]), example("b", &[1])];
        let s = dataset_stats(&examples, 2).unwrap();
        assert_eq!(s.cardinality_histogram, vec![(1, 1.0)]);
    }
}
