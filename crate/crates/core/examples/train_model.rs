//! Train an LSTM classifier on a synthetic corpus and save the weights
//! as a model artifact.
//!
//! Run with: cargo run --example train_model

use phasenet::artifacts::{save_model, ModelArtifact};
use phasenet::ingest::LabelSchema;
use phasenet::nncore::{Architecture, ModelSpec};
use phasenet::synth::{generate_corpus_seeded, SynthProfile};
use phasenet::textprep::{
    encode_sequence, prepare_tokens, Dataset, EncodedRecord, PrepConfig, Vocabulary,
};
use phasenet::train::{evaluate_on, split_dataset, train_model, TrainConfig};

fn main() {
    let profile = SynthProfile::default();
    let records = generate_corpus_seeded(&profile, 400, 7).expect("default profile is valid");

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

    let spec = ModelSpec {
        architecture: Architecture::Lstm,
        vocab_size: prep.vocab_size,
        embed_dim: 16,
        hidden_dim: 32,
        kernel_width: 3,
        dense_dim: 32,
        num_classes: profile.m(),
        max_len: prep.max_len,
    };
    let mut config = TrainConfig::default();
    config.epochs = 8;
    config.batch_size = 16;
    config.adam.lr = 0.005;

    let split = split_dataset(dataset.records.len(), config.seed).expect("enough records");
    println!(
        "training on {} records, validating on {}, holding out {}",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let outcome =
        train_model::<f32>(&spec, &dataset, &split.train, &split.val, &config).expect("trains");
    println!("\nepoch  train_loss  val_loss  val_accuracy");
    for e in &outcome.history.epochs {
        println!(
            "{:>5}  {:>10.4}  {:>8.4}  {:>12.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }

    let (test_loss, test_acc) =
        evaluate_on(&spec, &outcome.params, &dataset, &split.test).expect("test split scores");
    println!("\nheld-out test: loss {test_loss:.4}, accuracy {test_acc:.4}");

    let artifact = ModelArtifact::new(spec, LabelSchema::default(), vocab.digest(), outcome.params);
    let path = std::env::temp_dir().join("phasenet-example-model.pnm");
    save_model(&artifact, &path).expect("artifact writes");
    println!("model saved to {}", path.display());
}
