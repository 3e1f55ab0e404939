//! Ingest a CSV corpus and turn it into an encoded dataset: parse,
//! clean the labels, tokenize, build the vocabulary, and encode every
//! narrative as a fixed-length id sequence.
//!
//! Run with: cargo run --example prepare_dataset

use phasenet::ingest::{clean_corpus, parse_corpus_text, LabelSchema, LoadOptions};
use phasenet::synth::{generate_corpus_seeded, to_corpus_text, SynthProfile};
use phasenet::textprep::{encode_sequence, prepare_tokens, PrepConfig, Vocabulary};

fn main() {
    // a small corpus stands in for a real export
    let profile = SynthProfile::default();
    let records = generate_corpus_seeded(&profile, 200, 11).expect("default profile is valid");
    let csv_text = to_corpus_text(&records, &profile);

    let raw = parse_corpus_text(&csv_text, &LoadOptions::default()).expect("corpus parses");
    println!("parsed {} raw records", raw.len());

    let schema = LabelSchema::default();
    let (clean, stats) = clean_corpus(&raw, &schema);
    println!(
        "cleaned: kept {}, dropped {} empty narratives, {} unmappable labels",
        stats.retained_count, stats.dropped_empty_narrative, stats.dropped_unmappable_label
    );

    let prep = PrepConfig {
        max_len: 32,
        vocab_size: 500,
        ..PrepConfig::default()
    };
    let token_lists: Vec<Vec<String>> = clean
        .iter()
        .map(|r| prepare_tokens(&r.narrative, &prep))
        .collect();
    let vocab = Vocabulary::build(&token_lists, &prep);
    println!(
        "vocabulary holds {} ids (digest {}...)",
        vocab.size(),
        &vocab.digest()[..12]
    );

    let first = &clean[0];
    let tokens = prepare_tokens(&first.narrative, &prep);
    let seq = encode_sequence(&tokens, &vocab, &prep);
    println!("\nnarrative: {}", first.narrative);
    println!("tokens:    {}", tokens.join(" "));
    println!(
        "ids:       {:?} (true length {}, padded to {})",
        &seq.ids[..seq.true_length],
        seq.true_length,
        seq.ids.len()
    );
    println!("label:     {} = {}", first.label, schema.classes[first.label]);
}
