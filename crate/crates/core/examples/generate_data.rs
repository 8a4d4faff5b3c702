//! Synthesizes noisy training data for the analytic shapes and writes it in
//! the on-disk layout the `pointfuse` command reads.

use pointfuse::cli::{generate_dataset, load_dataset, NoiseConfig};
use pointfuse::datagen::{add_noise, classify_sharp_features, density_resample, DensityRegime, NoiseSpec, Shape};
use pointfuse::io::write_xyz;

pub fn run_example() -> pointfuse::Result<()> {
    let cube = Shape::Cube.sample(2000, 1);
    let sharp = classify_sharp_features(&cube)?;
    println!("cube: {} points, {} on sharp features", cube.len(), sharp.iter().filter(|&&s| s).count());

    let impulsive = add_noise(&cube, &NoiseSpec::impulsive(0.01, 0.3, 2))?;
    let moved = cube.points().iter().zip(impulsive.points()).filter(|(a, b)| a != b).count();
    println!("impulsive noise moved {moved} points");

    for regime in [DensityRegime::gradient(), DensityRegime::striped()] {
        let thinned = density_resample(&cube, regime, 3)?;
        println!("{regime:?}: kept {} of {}", thinned.len(), cube.len());
    }

    let shapes = tempfile::tempdir().map_err(|e| pointfuse::Error::io("tempdir", e))?;
    let out = tempfile::tempdir().map_err(|e| pointfuse::Error::io("tempdir", e))?;
    for shape in [Shape::Sphere, Shape::Torus] {
        write_xyz(&shapes.path().join(format!("{shape}.xyz")), &shape.sample(1000, 4))?;
    }
    let manifests = generate_dataset(shapes.path(), out.path(), &NoiseConfig::default())?;
    for m in &manifests {
        let files: Vec<&str> = m.variants.iter().map(|v| v.file.as_str()).collect();
        println!("{}: {} + {files:?}", m.shape, m.clean);
    }
    let sets = load_dataset(out.path())?;
    println!("reloaded {} variant sets of {} clouds each", sets.len(), sets[0].len());
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
