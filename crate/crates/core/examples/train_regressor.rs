//! Trains the displacement and normal regressor on a frozen encoder with
//! both loss variants.

use pointfuse::datagen::{make_variant_set, Shape};
use pointfuse::loss::{JointLossConfig, LossVariant};
use pointfuse::net::EncoderWeights;
use pointfuse::pipeline::{train_regressor, RegressTrainConfig};

pub fn run_example() -> pointfuse::Result<()> {
    let data = vec![
        make_variant_set(&Shape::Cube.sample(1200, 1), &[0.01], 1)?,
        make_variant_set(&Shape::Torus.sample(1200, 2), &[0.01], 2)?,
    ];
    let encoder = EncoderWeights::init(3);
    let digest = encoder.digest();
    for variant in [LossVariant::Joint, LossVariant::Alternative] {
        let cfg = RegressTrainConfig {
            epochs: 4,
            samples_per_epoch: Some(96),
            loss: JointLossConfig { variant, ..JointLossConfig::default() },
            seed: 4,
            ..RegressTrainConfig::default()
        };
        let outcome = train_regressor(&data, &encoder, &cfg)?;
        let trace: Vec<String> = outcome.epoch_losses.iter().map(|l| format!("{l:.5}")).collect();
        println!("{variant:?}: {}", trace.join(" "));
    }
    assert_eq!(encoder.digest(), digest);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
