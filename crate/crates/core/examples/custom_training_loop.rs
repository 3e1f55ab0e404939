//! Drive the network primitives directly: forward pass, loss, exact
//! backpropagation, and Adam updates, without the training harness.
//!
//! Run with: cargo run --example custom_training_loop

use phasenet::nncore::{
    cross_entropy, model_backward, model_forward, predict_class, softmax_cross_entropy_grad,
    Architecture, ModelSpec, ParamSet,
};
use phasenet::optim::{adam_step, clip_global_norm, AdamHyper, AdamState};

// four tiny sequences with an obvious rule: class = first token % 2
const BATCH: [(&[u32], usize); 4] = [
    (&[2, 5, 3], 0),
    (&[3, 4, 0], 1),
    (&[4, 2, 6], 0),
    (&[5, 6, 0], 1),
];

fn scale_grads(grads: &mut ParamSet<f64>, factor: f64) {
    for (_, tensor) in grads.tensors_mut() {
        for v in tensor.data_mut() {
            *v *= factor;
        }
    }
}

fn main() {
    let spec = ModelSpec {
        architecture: Architecture::Srnn,
        vocab_size: 8,
        embed_dim: 6,
        hidden_dim: 8,
        kernel_width: 3,
        dense_dim: 8,
        num_classes: 2,
        max_len: 3,
    };
    let mut params: ParamSet<f64> = ParamSet::init(&spec, 1);
    let mut state: AdamState<f64> = AdamState::new(&spec);
    let hyper = AdamHyper {
        lr: 0.01,
        ..AdamHyper::default()
    };

    for step in 1..=60 {
        // mean loss gradient over the batch
        let mut grads = ParamSet::zeros(&spec);
        let mut loss = 0.0;
        for (ids, label) in BATCH {
            let cache = model_forward(&spec, &params, ids);
            let mut one_hot = vec![0.0; spec.num_classes];
            one_hot[label] = 1.0;
            loss += cross_entropy(cache.probs(), &one_hot);
            let d = softmax_cross_entropy_grad(cache.probs(), &one_hot);
            model_backward(&spec, &params, &cache, &d, &mut grads);
        }
        scale_grads(&mut grads, 1.0 / BATCH.len() as f64);
        let norm = clip_global_norm(&mut grads, 5.0);
        adam_step(&mut params, &grads, &mut state, &hyper).expect("finite gradients");

        if step % 15 == 0 || step == 1 {
            println!(
                "step {step:>2}: mean loss {:.5}, gradient norm {:.4}",
                loss / BATCH.len() as f64,
                norm
            );
        }
    }

    println!();
    for (ids, label) in BATCH {
        let cache = model_forward(&spec, &params, ids);
        let class = predict_class(cache.probs());
        println!(
            "sequence {ids:?}: predicted {class}, actual {label}, p = {:?}",
            cache
                .probs()
                .iter()
                .map(|p| (p * 1000.0).round() / 1000.0)
                .collect::<Vec<f64>>()
        );
        assert_eq!(class, label, "the toy rule is learnable in 60 steps");
    }
    println!("\nall four sequences classified correctly");
}
