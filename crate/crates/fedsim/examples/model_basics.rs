//! The native classifiers: exact gradients, SGD steps and the FLOP
//! counting model, shown on a hand-rolled training loop.

use fedsim::dataset::Sample;
use fedsim::model::{
    accuracy_top1, forward_loss, gradient, gradient_flops, init_params, sgd_step, Init,
    ModelSpec,
};
use fedsim::rng::derive_rng;
use rand::Rng;

fn main() -> fedsim::Result<()> {
    let spec = ModelSpec::one_hidden(6, 8, 3);
    println!("one-hidden model, {} parameters", spec.param_len());

    // three Gaussian blobs, one per class
    let mut rng = derive_rng(11, &[1]);
    let data: Vec<Sample> = (0..300)
        .map(|i| {
            let label = i % 3;
            let center = (label as f64 - 1.0) * 2.5;
            Sample {
                features: (0..6).map(|_| center + rng.gen_range(-1.0..1.0)).collect(),
                label,
            }
        })
        .collect();

    let mut params = init_params(&spec, Init::Gaussian { std: 0.1, seed: 2 });
    let mut flops = 0u64;
    for step in 0..200 {
        let g = gradient(&spec, &params, &data)?;
        params = sgd_step(&params, &g.grad, 0.5)?;
        flops += g.flops;
        if step % 50 == 0 {
            println!("step {step:3}: loss {:.4}", g.mean_loss);
        }
    }

    let final_loss = forward_loss(&spec, &params, &data)?.mean_loss;
    let acc = accuracy_top1(&spec, &params, &data)?;
    println!("final: loss {final_loss:.4}, accuracy {:.1}%", 100.0 * acc);
    println!(
        "training cost {flops} flops ({} per full-batch gradient)",
        gradient_flops(&spec, data.len())
    );
    Ok(())
}
