//! Short contrastive pretraining run on two shapes.

use pointfuse::datagen::{make_variant_set, Shape};
use pointfuse::net::WeightBundle;
use pointfuse::pipeline::{pretrain_encoder, PretrainConfig};

pub fn run_example() -> pointfuse::Result<()> {
    let data = vec![
        make_variant_set(&Shape::Cube.sample(1500, 1), &[0.005, 0.01], 1)?,
        make_variant_set(&Shape::Sphere.sample(1500, 2), &[0.005, 0.01], 2)?,
    ];
    let cfg = PretrainConfig {
        epochs: 2,
        batch_size: 8,
        pairs_per_epoch: Some(16),
        seed: 3,
        ..PretrainConfig::default()
    };
    let outcome = pretrain_encoder(&data, &cfg)?;
    println!("epoch losses: {:?}", outcome.epoch_losses);

    let bundle = WeightBundle::new(vec![outcome.encoder.to_document(), outcome.projection.to_document()]);
    println!("encoder digest {}", &outcome.encoder.digest()[..16]);
    println!("bundle is {} bytes of JSON", bundle.to_json()?.len());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
