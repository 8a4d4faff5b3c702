//! Scores PCA normal estimates on a noisy cube against the analytic surface.

use pointfuse::datagen::{add_noise, classify_sharp_features, NoiseSpec, Shape};
use pointfuse::eval::{evaluate_detailed, pca_normals, PCA_NEIGHBORHOODS};
use pointfuse::geom::PointCloud;

pub fn run_example() -> pointfuse::Result<()> {
    let gt = Shape::Cube.sample(4000, 1);
    let mesh = Shape::Cube.mesh();
    let sharp = classify_sharp_features(&gt)?;
    let noisy = add_noise(&gt, &NoiseSpec::gaussian(0.005, 2))?;
    for k in PCA_NEIGHBORHOODS {
        let pca = pca_normals(&noisy, k)?;
        let pred = PointCloud::with_normals(noisy.points().to_vec(), pca.normals)?;
        let (report, errors) = evaluate_detailed(&gt, &pred, Some(&mesh), Some(&sharp))?;
        println!("k = {k}: {}", serde_json::to_string(&report)?);
        if k == PCA_NEIGHBORHOODS[0] {
            println!("{}", errors.to_csv().lines().take(3).collect::<Vec<_>>().join("\n"));
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
