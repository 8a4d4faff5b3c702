//! Drives the whole command-line workflow in-process: generate data,
//! pretrain, train, filter and evaluate.

use pointfuse::cli::run;
use pointfuse::datagen::{add_noise, NoiseSpec, Shape};
use pointfuse::io::write_xyz;

pub fn run_example() -> pointfuse::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| pointfuse::Error::io("tempdir", e))?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::create_dir(dir.path().join("shapes")).map_err(|e| pointfuse::Error::io("shapes", e))?;
    write_xyz(&dir.path().join("shapes/cube.xyz"), &Shape::Cube.sample(600, 1))?;
    write_xyz(&dir.path().join("shapes/torus.xyz"), &Shape::Torus.sample(600, 2))?;
    let gt = Shape::Sphere.sample(200, 3);
    write_xyz(&dir.path().join("gt.xyz"), &gt)?;
    write_xyz(&dir.path().join("noisy.xyz"), &add_noise(&gt, &NoiseSpec::gaussian(0.01, 4))?)?;

    let steps: [Vec<String>; 5] = [
        vec!["gen-data".into(), "--input".into(), p("shapes"), "--output".into(), p("data"), "--noise".into(), "0.5,1.0".into()],
        vec!["pretrain".into(), "--data".into(), p("data"), "--epochs".into(), "1".into(), "--batch".into(), "8".into(), "--pairs-per-epoch".into(), "16".into(), "--out".into(), p("encoder.json")],
        vec!["train".into(), "--data".into(), p("data"), "--encoder".into(), p("encoder.json"), "--epochs".into(), "2".into(), "--samples".into(), "32".into(), "--loss".into(), "alt".into(), "--out".into(), p("model.json")],
        vec!["filter".into(), "--model".into(), p("model.json"), "--input".into(), p("noisy.xyz"), "--iterations".into(), "1".into(), "--output".into(), p("filtered.xyz")],
        vec!["eval".into(), "--gt".into(), p("gt.xyz"), "--pred".into(), p("filtered.xyz"), "--out".into(), p("report.json")],
    ];
    for args in steps {
        let code = run(std::iter::once("pointfuse".to_string()).chain(args.iter().cloned()));
        println!("pointfuse {} -> exit {code}", args[0]);
        if code != 0 {
            return Err(pointfuse::Error::Data(format!("{} failed", args[0])));
        }
    }
    let report = std::fs::read_to_string(dir.path().join("report.json")).map_err(|e| pointfuse::Error::io("report.json", e))?;
    println!("{report}");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
