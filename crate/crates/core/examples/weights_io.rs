//! Saves and reloads a model bundle and the plain-text geometry formats.

use pointfuse::datagen::{classify_sharp_features, Shape};
use pointfuse::io::{read_mask, read_off, read_xyz, write_mask, write_off, write_xyz};
use pointfuse::net::{EncoderWeights, RegressorWeights};
use pointfuse::pipeline::Model;

pub fn run_example() -> pointfuse::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| pointfuse::Error::io("tempdir", e))?;
    let model = Model {
        encoder: EncoderWeights::init(1),
        regressor: RegressorWeights::init(2),
    };
    let path = dir.path().join("model.json");
    model.save(&path)?;
    let back = Model::load(&path)?;
    assert_eq!(back.encoder.digest(), model.encoder.digest());
    println!("model.json: {} bytes", std::fs::metadata(&path).map_err(|e| pointfuse::Error::io(&path, e))?.len());

    let cloud = Shape::Cube.sample(500, 3);
    write_xyz(&dir.path().join("cube.xyz"), &cloud)?;
    assert_eq!(read_xyz(&dir.path().join("cube.xyz"))?, cloud);
    write_off(&dir.path().join("cube.off"), &Shape::Cube.mesh())?;
    println!("cube.off: {} triangles", read_off(&dir.path().join("cube.off"))?.triangles().len());
    let mask = classify_sharp_features(&cloud)?;
    write_mask(&dir.path().join("sharp.txt"), &mask)?;
    assert_eq!(read_mask(&dir.path().join("sharp.txt"))?, mask);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
