//! Compares tape gradients of the regressor plus joint loss with central
//! finite differences.

use pointfuse::geom::{CanonicalFrame, Patch, Vec3};
use pointfuse::datagen::TrainingSample;
use pointfuse::loss::{joint_loss_var, JointLossConfig};
use pointfuse::net::{RegressorWeights, FEATURE_DIM};
use pointfuse::seed;
use pointfuse::tensor::{gradcheck, Tape, Tensor, Var};
use rand::Rng;

pub fn run_example() -> pointfuse::Result<()> {
    let mut rng = seed::rng(1, &[]);
    let regressor = RegressorWeights::init(2);
    let gt: Vec<Vec3> = (0..50).map(|_| Vec3::new(rng.random(), rng.random(), 0.1 * rng.random::<f64>())).collect();
    let sample = TrainingSample {
        noisy_patch: Patch { points: vec![], center_index: 0, center: Vec3::zeros(), radius: 1.0, source_sigma: 0.0 },
        frame: CanonicalFrame::identity(),
        gt_normals: vec![Vec3::z(); gt.len()],
        gt_center: gt[0],
        gt_center_normal: Vec3::z(),
        gt_patch: gt,
    };
    let cfg = JointLossConfig::default();

    let mut inputs: Vec<Tensor> = regressor.params().iter().map(|p| p.value().clone()).collect();
    let np = inputs.len();
    inputs.push(Tensor::vector((0..FEATURE_DIM).map(|_| rng.random()).collect()));
    let coords: Vec<(usize, usize)> = (0..20)
        .map(|_| {
            let i = rng.random_range(0..inputs.len());
            (i, rng.random_range(0..inputs[i].len()))
        })
        .collect();
    let report = gradcheck::check(&inputs, &coords, 1e-5, |tape: &mut Tape, v: &[Var]| {
        let out = regressor.forward(tape, &v[..np], v[np])?;
        joint_loss_var(tape, out.displacement, out.normal, &sample, &cfg)
    })?;
    println!(
        "{} coordinates checked, {} skipped at relu kinks, max relative error {:.2e}",
        report.checked, report.skipped, report.max_rel_error
    );
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
