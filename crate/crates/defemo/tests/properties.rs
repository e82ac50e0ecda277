//! Property tests for spec invariants that benefit from broad random input.

use defemo::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use defemo::data::{apply_mlm_masking, MaskingPolicy};
use defemo::eval;
use defemo::model::EncoderConfig;
use defemo::params::ParamSet;
use defemo::tensor::Tensor;
use defemo::tokenizer::{self, TokenSequence, NUM_SPECIALS};
use defemo::trainer::TrainConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    /// A predicted label set contains exactly the indices whose probability
    /// strictly exceeds the threshold.
    #[test]
    fn threshold_set_matches_pointwise_comparison(
        probs in proptest::collection::vec(0.0f64..1.0, 1..12),
        threshold in 0.0f64..1.0,
    ) {
        let set = eval::predict_label_set(&probs, threshold);
        for (i, &p) in probs.iter().enumerate() {
            prop_assert_eq!(set.contains(&i), p > threshold);
        }
    }

    /// Masking restores to the original sequence: targets hold the original
    /// ids at every selected position, non-selected positions are untouched,
    /// and specials are never selected.
    #[test]
    fn masking_restores_original_sequence(
        words in proptest::collection::vec(0usize..40, 1..30),
        seed in 0u64..1000,
    ) {
        let corpus: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let vocab = tokenizer::build_vocab(corpus.iter(), 1, 100).unwrap();
        let text: Vec<String> = words.iter().map(|&w| format!("w{w}")).collect();
        let seq: TokenSequence =
            tokenizer::encode_single(&text.join(" "), &vocab, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masked =
            apply_mlm_masking(&seq, &vocab, &MaskingPolicy::default(), &mut rng).unwrap();

        prop_assert!(!masked.mask_positions.is_empty());
        let mut restored = masked.input_ids.clone();
        for (&pos, &orig) in masked.mask_positions.iter().zip(&masked.target_ids) {
            prop_assert!(seq.ids[pos] >= NUM_SPECIALS, "special token selected");
            restored[pos] = orig;
        }
        prop_assert_eq!(restored, seq.ids);
    }

    /// Checkpoint serialization round-trips bitwise for arbitrary payloads.
    #[test]
    fn checkpoint_round_trip_is_identity(
        values in proptest::collection::vec(-1000.0f32..1000.0, 1..64),
        seed in 0u64..100,
    ) {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::from_vec(values.clone()));
        params.insert("b", Tensor::from_vec(vec![seed as f32]));
        let ckpt = Checkpoint::new(
            EncoderConfig::tiny(20, 3),
            TrainConfig::default(),
            params,
        );
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        let loaded = read_checkpoint(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        write_checkpoint(&mut bytes2, &loaded).unwrap();
        prop_assert_eq!(bytes, bytes2);
    }

    /// Tokenization is deterministic and ids stay inside the vocabulary.
    #[test]
    fn encoding_is_deterministic_and_in_range(text in "[a-z ,.!?0-9]{0,60}") {
        let corpus = ["hello world this is a tiny corpus".to_string()];
        let vocab = tokenizer::build_vocab(corpus.iter(), 1, 100).unwrap();
        let a = tokenizer::encode_single(&text, &vocab, 32).unwrap();
        let b = tokenizer::encode_single(&text, &vocab, 32).unwrap();
        prop_assert_eq!(&a.ids, &b.ids);
        prop_assert!(a.ids.len() <= 32);
        for &id in &a.ids {
            prop_assert!(id < vocab.len());
        }
    }
}
