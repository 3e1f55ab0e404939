//! Generate a synthetic labeled corpus and write it as a CSV file.
//!
//! Run with: cargo run --example generate_corpus

use phasenet::synth::{best_possible_accuracy, generate_corpus_seeded, to_corpus_text, SynthProfile};

fn main() {
    let mut profile = SynthProfile::default();
    profile.label_noise = 0.05;

    let records = generate_corpus_seeded(&profile, 1000, 7).expect("default profile is valid");

    println!("first five records:");
    for r in &records[..5] {
        let class = &profile.classes[r.label].name;
        println!("  [{class}] {}", r.narrative);
    }

    // empirical class mix vs the profile's target proportions
    println!("\nclass mix over {} records:", records.len());
    for (k, class) in profile.classes.iter().enumerate() {
        let count = records.iter().filter(|r| r.label == k).count();
        println!(
            "  {:<20} {:>4} drawn, target {:.3}",
            class.name,
            count,
            class.proportion
        );
    }

    let flipped = records.iter().filter(|r| r.label != r.true_class).count();
    println!(
        "\n{} labels flipped by noise; best reachable accuracy {:.4}",
        flipped,
        best_possible_accuracy(profile.label_noise, profile.m())
    );

    let path = std::env::temp_dir().join("phasenet-example-corpus.csv");
    std::fs::write(&path, to_corpus_text(&records, &profile)).expect("corpus writes");
    println!("corpus written to {}", path.display());
}
