//! Verify every architecture's analytic gradients against central
//! finite differences at toy dimensions.
//!
//! Run with: cargo run --example gradient_check

use phasenet::cli::{gradcheck_batch, gradcheck_params, gradcheck_spec};
use phasenet::nncore::{grad_check, Architecture, DEFAULT_STEP};

fn main() {
    let batch = gradcheck_batch();
    println!("checking {} records per architecture, step {DEFAULT_STEP:e}\n", batch.len());

    for arch in Architecture::ALL {
        let spec = gradcheck_spec(arch);
        let params = gradcheck_params(&spec, 7);
        let report = grad_check(&spec, &params, &batch, DEFAULT_STEP);
        println!(
            "{:<6} {} parameters checked, max relative error {:.3e} at {}",
            arch.as_str(),
            report.params_checked,
            report.max_rel_error,
            report.worst_tensor
        );
        assert!(report.max_rel_error <= 1e-4, "backpropagation drifted");
    }
    println!("\nall architectures agree with finite differences");
}
