//! Build a confusion matrix and render the classification report:
//! per-class precision, recall, F1, and support, plus accuracy and the
//! macro and support-weighted averages.
//!
//! Run with: cargo run --example classification_report

use phasenet::eval::{render_report, ConfusionMatrix, EvalSummary};
use phasenet::synth::{generate_corpus_seeded, keyword_classifier, SynthProfile};

fn main() {
    // score a keyword-matching baseline against noisy labels; with 10%
    // label noise even a perfect classifier cannot reach accuracy 1.0
    let mut profile = SynthProfile::default();
    profile.label_noise = 0.10;
    let records = generate_corpus_seeded(&profile, 1500, 5).expect("default profile is valid");

    let y_true: Vec<usize> = records.iter().map(|r| r.label).collect();
    let y_pred: Vec<usize> = records
        .iter()
        .map(|r| keyword_classifier(&r.narrative, &profile))
        .collect();
    let labels: Vec<String> = profile.classes.iter().map(|c| c.name.clone()).collect();

    let cm = ConfusionMatrix::from_pairs(&y_true, &y_pred, &labels).expect("pairs are in range");
    println!("confusion matrix (rows = actual, columns = predicted):\n");
    print!("{}", cm.to_delimited('\t'));

    let summary = EvalSummary::compute(&cm).expect("non-empty matrix");
    println!("\n{}", render_report(&summary));
    println!(
        "macro F1 {:.4}, weighted F1 {:.4}",
        summary.macro_f1, summary.weighted_f1
    );
}
