//! Train all four architectures on the same split and rank them on the
//! held-out test set.
//!
//! Run with: cargo run --example compare_architectures

use phasenet::eval::round_half_up_2dp;
use phasenet::nncore::{Architecture, ModelSpec};
use phasenet::synth::{generate_corpus_seeded, SynthProfile};
use phasenet::textprep::{
    encode_sequence, prepare_tokens, Dataset, EncodedRecord, PrepConfig, Vocabulary,
};
use phasenet::train::{evaluate_on, split_dataset, train_model, TrainConfig};

fn main() {
    let mut profile = SynthProfile::default();
    profile.label_noise = 0.05;
    let records = generate_corpus_seeded(&profile, 600, 7).expect("default profile is valid");

    let prep = PrepConfig {
        max_len: 32,
        vocab_size: 500,
        ..PrepConfig::default()
    };
    let token_lists: Vec<Vec<String>> = records
        .iter()
        .map(|r| prepare_tokens(&r.narrative, &prep))
        .collect();
    let vocab = Vocabulary::build(&token_lists, &prep);
    let dataset = Dataset {
        num_classes: profile.m(),
        max_len: prep.max_len,
        vocab_size: prep.vocab_size,
        vocab_digest: vocab.digest(),
        records: token_lists
            .iter()
            .zip(&records)
            .map(|(tokens, r)| EncodedRecord {
                label: r.label as u32,
                seq: encode_sequence(tokens, &vocab, &prep),
            })
            .collect(),
    };

    let mut config = TrainConfig::default();
    config.epochs = 6;
    config.batch_size = 16;
    config.adam.lr = 0.005;
    config.keep_best_val = true;
    let split = split_dataset(dataset.records.len(), config.seed).expect("enough records");

    println!("architecture  test_loss  test_accuracy");
    for arch in Architecture::ALL {
        let spec = ModelSpec {
            architecture: arch,
            vocab_size: prep.vocab_size,
            embed_dim: 16,
            hidden_dim: 32,
            kernel_width: 3,
            dense_dim: 32,
            num_classes: profile.m(),
            max_len: prep.max_len,
        };
        let outcome = train_model::<f32>(&spec, &dataset, &split.train, &split.val, &config)
            .expect("trains");
        let (loss, acc) =
            evaluate_on(&spec, &outcome.params, &dataset, &split.test).expect("test split scores");
        println!(
            "{:<12}  {:>9.4}  {:>13.2}",
            arch.as_str(),
            loss,
            round_half_up_2dp(acc)
        );
    }
}
