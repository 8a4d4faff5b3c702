//! Builds positive pairs from a variant set and scores a batch with NT-Xent.

use pointfuse::datagen::{make_variant_set, sample_contrastive_pair, Shape, DEFAULT_SIGMAS};
use pointfuse::loss::nt_xent_batch;
use pointfuse::net::{EncoderWeights, ProjectionWeights};
use pointfuse::seed;
use pointfuse::tensor::Tensor;

pub fn run_example() -> pointfuse::Result<()> {
    let set = make_variant_set(&Shape::Torus.sample(3000, 1), &DEFAULT_SIGMAS, 2)?;
    println!("{} clouds per variant set", set.len());

    let encoder = EncoderWeights::init(3);
    let projection = ProjectionWeights::init(4);
    let mut rng = seed::rng(5, &[]);
    let (mut zp, mut zq) = (Vec::new(), Vec::new());
    for center in [10, 500, 1500, 2900] {
        let pair = sample_contrastive_pair(&set, center, &mut rng)?;
        println!(
            "point {center}: second view rotated {:.0} degrees about {:?}",
            pair.angle.to_degrees(),
            pair.axis
        );
        zp.extend(projection.project(&encoder.encode(&pair.first.points)?)?.z);
        zq.extend(projection.project(&encoder.encode(&pair.second.points)?)?.z);
    }
    let d = zp.len() / 4;
    let loss = nt_xent_batch(&Tensor::matrix(4, d, zp)?, &Tensor::matrix(4, d, zq)?, 0.01)?;
    println!("NT-Xent of 4 pairs with untrained weights: {loss:.4}");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
