//! Nearest-neighbor queries, patch extraction and the canonical frame.

use pointfuse::datagen::Shape;
use pointfuse::geom::{canonical_frame, eigen3_symmetric, IndexedCloud, Mat3, SpatialIndex, PATCH_SIZE};
use pointfuse::seed;

pub fn run_example() -> pointfuse::Result<()> {
    let cloud = Shape::Torus.sample(5000, 1);
    let index = SpatialIndex::build(cloud.points());
    let q = cloud.points()[42];
    println!("5 nearest to point 42: {:?}", index.knn(&q, 5)?);
    println!("{} points within 0.05", index.within_radius(&q, 0.05).len());

    let indexed = IndexedCloud::new(cloud);
    let mut rng = seed::rng(2, &[]);
    let patch = indexed.extract_patch(42, 0.05 * indexed.diagonal, &mut rng)?;
    assert_eq!(patch.points.len(), PATCH_SIZE);
    let frame = canonical_frame(&patch)?;
    let local = patch.canonicalize(&frame);
    let mut cov = Mat3::zeros();
    for p in &local.points {
        cov += p * p.transpose();
    }
    let eigen = eigen3_symmetric(&(cov / PATCH_SIZE as f64))?;
    println!("canonical second moments {:.4?}", eigen.values);
    println!("patch normal estimate {:.3?}, true {:.3?}", frame.rotation.row(2), indexed.cloud.normals().unwrap()[42]);
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
