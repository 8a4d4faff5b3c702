//! Runs the filtering loop on a small noisy sphere and inspects the stages
//! of one pass separately.

use pointfuse::datagen::{add_noise, NoiseSpec, Shape};
use pointfuse::eval::chamfer;
use pointfuse::geom::{IndexedCloud, PointCloud};
use pointfuse::net::{EncoderWeights, RegressorWeights};
use pointfuse::pipeline::{
    apply_regressor, encode_cloud, filter_cloud, lrma_update, taubin_inflate, InferenceConfig, Model,
};

pub fn run_example() -> pointfuse::Result<()> {
    let clean = Shape::Sphere.sample(300, 1);
    let noisy = add_noise(&clean, &NoiseSpec::gaussian(0.01, 2))?.without_normals();
    // Untrained weights: the normals come out as each patch's PCA-like axis.
    let model = Model {
        encoder: EncoderWeights::init(3),
        regressor: RegressorWeights::zeros(),
    };

    let indexed = IndexedCloud::new(noisy.clone());
    let encoded = encode_cloud(&indexed, &model.encoder, 0.05, 0, 0)?;
    let estimates = apply_regressor(&encoded, &model.regressor)?;
    let predicted = PointCloud::with_normals(
        estimates.iter().map(|e| e.position).collect(),
        estimates.iter().map(|e| e.normal).collect(),
    )?;
    let inflated = taubin_inflate(&predicted, &noisy, 100)?;
    let refined = lrma_update(&inflated, 20)?;

    let cfg = InferenceConfig { iterations: 1, ..InferenceConfig::default() };
    let outcome = filter_cloud(&noisy, &model, &cfg)?;
    assert_eq!(outcome.cloud, refined);
    println!("chamfer to clean: noisy {:.3e}, filtered {:.3e}", chamfer(&clean, &noisy)?, chamfer(&clean, &outcome.cloud)?);
    println!("{} degenerate patches", outcome.degenerate_points);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
