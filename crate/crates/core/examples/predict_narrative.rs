//! Load a trained model artifact from disk and classify ad-hoc
//! narrative text, printing the class and the full probability row.
//!
//! Run with: cargo run --example predict_narrative

use phasenet::artifacts::{load_model, save_model, ModelArtifact};
use phasenet::ingest::LabelSchema;
use phasenet::nncore::{model_forward, predict_class, Architecture, ModelSpec};
use phasenet::synth::{generate_corpus_seeded, SynthProfile};
use phasenet::textprep::{
    encode_sequence, prepare_tokens, Dataset, EncodedRecord, PrepConfig, Vocabulary,
};
use phasenet::train::{split_dataset, train_model, TrainConfig};

fn main() {
    // train a small model so the example is self-contained; a real
    // caller would only run the load-and-predict half
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
    let outcome =
        train_model::<f32>(&spec, &dataset, &split.train, &split.val, &config).expect("trains");

    let path = std::env::temp_dir().join("phasenet-example-predict.pnm");
    let artifact = ModelArtifact::new(spec, LabelSchema::default(), vocab.digest(), outcome.params);
    save_model(&artifact, &path).expect("artifact writes");

    // the load-and-predict half
    let model = load_model(&path).expect("artifact loads");
    println!("loaded {} model from {}\n", model.spec.architecture.as_str(), path.display());

    let narratives = [
        "aircraft entered an uncommanded spin during aerobatics practice",
        "glideslope deviation on final approach required a go around",
        "tyre burst on the runway during the takeoff roll",
    ];
    for text in narratives {
        let tokens = prepare_tokens(text, &prep);
        let seq = encode_sequence(&tokens, &vocab, &prep);
        let cache = model_forward(&model.spec, &model.params, &seq.ids);
        let class = predict_class(cache.probs());
        println!("{}", text);
        println!("  -> {}", model.schema.classes[class]);
        let probs: Vec<String> = model
            .schema
            .classes
            .iter()
            .zip(cache.probs())
            .map(|(name, p)| format!("{name} {p:.3}"))
            .collect();
        println!("     {}\n", probs.join(", "));
    }
}
