//! Acceptance suite. Every test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::PI;
use std::time::Instant;

use pointfuse::datagen::{
    add_noise, classify_sharp_features, make_variant_set, NoiseSpec, Shape, TrainingSample,
    SHARP_ANGLE_RANGE, SHARP_NEIGHBORS,
};
use pointfuse::eval::{
    chamfer, closest_point_on_triangle, msae, point2surface_distances, unoriented_angle, MeshIndex, TriangleMesh,
};
use pointfuse::geom::{
    eigen3_symmetric, rotate_patch, Axis, CanonicalFrame, IndexedCloud, Mat3, Patch, PointCloud, SpatialIndex, Vec3,
    PATCH_SIZE,
};
use pointfuse::loss::{
    alt_joint_loss, alt_joint_loss_var, angular_term, joint_loss, joint_loss_var, normal_loss, nt_xent_batch,
    nt_xent_var, position_loss, JointLossConfig, LossVariant,
};
use pointfuse::net::{EncoderWeights, ProjectionWeights, RegressorWeights, FEATURE_DIM};
use pointfuse::pipeline::{
    apply_regressor, encode_cloud, lrma_update, pretrain_encoder, taubin_inflate, train_regressor, PretrainConfig,
    RegressTrainConfig,
};
use pointfuse::seed;
use pointfuse::tensor::{gradcheck, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
}

fn ball_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n).map(|_| unit(rng) * rng.random::<f64>()).collect()
}

fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Tensor {
    let data = (0..n)
        .flat_map(|_| {
            let row: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.into_iter().map(move |x| x / norm)
        })
        .collect();
    Tensor::matrix(n, d, data).unwrap()
}

/// Neighbors of `i` (itself excluded) by full sort, ties to the lower index.
fn brute_knn_excluding(p: &[Vec3], i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| {
        (p[a] - p[i]).norm_squared().partial_cmp(&(p[b] - p[i]).norm_squared()).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

fn brute_nt_xent(zp: &Tensor, zq: &Tensor, tau: f64) -> f64 {
    let n = zp.shape()[0];
    let d = zp.shape()[1];
    let rows: Vec<&[f64]> = zp.data().chunks(d).chain(zq.data().chunks(d)).collect();
    let mut sim = vec![vec![0.0; 2 * n]; 2 * n];
    for a in 0..2 * n {
        for b in 0..2 * n {
            sim[a][b] = rows[a].iter().zip(rows[b]).map(|(x, y)| x * y).sum::<f64>() / tau;
        }
    }
    let mut total = 0.0;
    for a in 0..2 * n {
        let partner = if a < n { a + n } else { a - n };
        let denom: f64 = (0..2 * n).filter(|&b| b != a).map(|b| sim[a][b].exp()).sum();
        total += -(sim[a][partner].exp() / denom).ln();
    }
    total / (2 * n) as f64
}

fn bare_sample(gt_patch: Vec<Vec3>, gt_normals: Vec<Vec3>, gt_center: Vec3, gt_center_normal: Vec3) -> TrainingSample {
    TrainingSample {
        noisy_patch: Patch {
            points: vec![],
            center_index: 0,
            center: Vec3::zeros(),
            radius: 1.0,
            source_sigma: 0.0,
        },
        frame: CanonicalFrame::identity(),
        gt_patch,
        gt_normals,
        gt_center,
        gt_center_normal,
    }
}

fn random_loss_config(rng: &mut impl Rng, variant: LossVariant) -> JointLossConfig {
    JointLossConfig {
        alpha: rng.random_range(0.05..0.95),
        beta: rng.random_range(0.0..0.5),
        delta: rng.random_range(0.0..1.0),
        gamma: 2 * rng.random_range(1..=6),
        variant,
    }
}

#[derive(Default)]
struct GradTally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl GradTally {
    fn add(&mut self, r: gradcheck::GradCheckReport) {
        self.checked += r.checked;
        self.skipped += r.skipped;
        self.worst = self.worst.max(r.max_rel_error);
    }
}

fn param_inputs(params: &pointfuse::tensor::ParamSet) -> Vec<Tensor> {
    params.iter().map(|p| p.value().clone()).collect()
}

fn random_coords(rng: &mut impl Rng, inputs: &[Tensor], count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..inputs.len());
            (i, rng.random_range(0..inputs[i].len()))
        })
        .collect()
}

#[test]
fn criterion_1_gradient_fidelity() {
    const CONFIGS: u64 = 50;
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut tallies: Vec<(&str, GradTally)> = Vec::new();

    let mut t = GradTally::default();
    for c in 0..CONFIGS {
        let mut rng = seed::rng(100 + c, &[]);
        let enc = EncoderWeights::init(c);
        let mut inputs = param_inputs(enc.params());
        let np = inputs.len();
        inputs.push(pointfuse::net::points_tensor(&ball_points(&mut rng, PATCH_SIZE)));
        let probe = Tensor::vector((0..FEATURE_DIM).map(|_| rng.random::<f64>() - 0.5).collect());
        let mut coords = random_coords(&mut rng, &inputs[..np], 3);
        coords.push((np, rng.random_range(0..PATCH_SIZE * 3)));
        t.add(
            gradcheck::check(&inputs, &coords, STEP, |tape: &mut Tape, v: &[Var]| {
                let f = enc.forward(tape, &v[..np], v[np])?;
                let w = tape.constant(probe.clone());
                tape.dot(f, w)
            })
            .unwrap(),
        );
    }
    tallies.push(("encoder", t));

    let mut t = GradTally::default();
    for c in 0..CONFIGS {
        let mut rng = seed::rng(200 + c, &[]);
        let proj = ProjectionWeights::init(c);
        let mut inputs = param_inputs(proj.params());
        let np = inputs.len();
        inputs.push(Tensor::vector((0..FEATURE_DIM).map(|_| rng.random::<f64>()).collect()));
        let probe = Tensor::vector((0..256).map(|_| rng.random::<f64>() - 0.5).collect());
        let mut coords = random_coords(&mut rng, &inputs[..np], 4);
        coords.push((np, rng.random_range(0..FEATURE_DIM)));
        coords.push((np, rng.random_range(0..FEATURE_DIM)));
        t.add(
            gradcheck::check(&inputs, &coords, STEP, |tape: &mut Tape, v: &[Var]| {
                let z = proj.forward(tape, &v[..np], v[np])?;
                let w = tape.constant(probe.clone());
                tape.dot(z, w)
            })
            .unwrap(),
        );
    }
    tallies.push(("projection", t));

    let mut t = GradTally::default();
    for c in 0..CONFIGS {
        let mut rng = seed::rng(300 + c, &[]);
        let reg = RegressorWeights::init(c);
        let mut inputs = param_inputs(reg.params());
        let np = inputs.len();
        inputs.push(Tensor::vector((0..FEATURE_DIM).map(|_| rng.random::<f64>()).collect()));
        let (a, b) = (Tensor::vector(vec![0.3, -0.7, 0.5]), Tensor::vector(vec![0.9, 0.2, -0.4]));
        let mut coords = random_coords(&mut rng, &inputs[..np], 4);
        coords.push((np, rng.random_range(0..FEATURE_DIM)));
        coords.push((np - 2, rng.random_range(0..inputs[np - 2].len())));
        t.add(
            gradcheck::check(&inputs, &coords, STEP, |tape: &mut Tape, v: &[Var]| {
                let out = reg.forward(tape, &v[..np], v[np])?;
                let (wa, wb) = (tape.constant(a.clone()), tape.constant(b.clone()));
                let da = tape.dot(out.displacement, wa)?;
                let nb = tape.dot(out.normal, wb)?;
                tape.add(da, nb)
            })
            .unwrap(),
        );
    }
    tallies.push(("regressor", t));

    for variant in [LossVariant::Joint, LossVariant::Alternative] {
        let mut t = GradTally::default();
        for c in 0..CONFIGS {
            let mut rng = seed::rng(400 + c, &[variant as u64]);
            let cfg = random_loss_config(&mut rng, variant);
            let gt = ball_points(&mut rng, PATCH_SIZE);
            let normals: Vec<Vec3> = (0..PATCH_SIZE).map(|_| unit(&mut rng)).collect();
            let sample = bare_sample(gt.clone(), normals.clone(), gt[0], normals[0]);
            let p = ball_points(&mut rng, 1)[0] * 0.5;
            let n = unit(&mut rng);
            let inputs = [Tensor::vector(vec![p.x, p.y, p.z]), Tensor::vector(vec![n.x, n.y, n.z])];
            t.add(
                gradcheck::check(&inputs, &gradcheck::all_coords(&inputs), STEP, |tape: &mut Tape, v: &[Var]| {
                    let n = tape.l2_normalize(v[1])?;
                    match variant {
                        LossVariant::Joint => joint_loss_var(tape, v[0], n, &sample, &cfg),
                        LossVariant::Alternative => {
                            alt_joint_loss_var(tape, v[0], n, &sample.gt_center, &sample.gt_center_normal, &cfg)
                        }
                    }
                })
                .unwrap(),
            );
        }
        tallies.push((if variant == LossVariant::Joint { "joint loss" } else { "alternative loss" }, t));
    }

    let mut t = GradTally::default();
    for c in 0..CONFIGS {
        let mut rng = seed::rng(500 + c, &[]);
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let tau = 10f64.powf(rng.random_range(-2.0..0.0));
        // rows enter as free vectors and are normalized on the tape, so
        // perturbed inputs stay valid embeddings
        let inputs: Vec<Tensor> = [unit_rows(&mut rng, n, d), unit_rows(&mut rng, n, d)]
            .iter()
            .flat_map(|m| m.data().chunks(d).map(|r| Tensor::vector(r.to_vec())).collect::<Vec<_>>())
            .collect();
        t.add(
            gradcheck::check(&inputs, &gradcheck::all_coords(&inputs), STEP, |tape: &mut Tape, v: &[Var]| {
                let unit = v.iter().map(|&r| tape.l2_normalize(r)).collect::<pointfuse::Result<Vec<_>>>()?;
                let zp = tape.concat_rows(&unit[..n])?;
                let zq = tape.concat_rows(&unit[n..])?;
                nt_xent_var(tape, zp, zq, tau)
            })
            .unwrap(),
        );
    }
    tallies.push(("nt-xent", t));

    let elapsed = start.elapsed().as_secs_f64();
    let worst = tallies.iter().map(|(_, t)| t.worst).fold(0.0, f64::max);
    let all_checked = tallies.iter().all(|(_, t)| t.checked > 0);
    let detail = tallies
        .iter()
        .map(|(name, t)| format!("{name}: {} coords, {} skipped, max rel {:.1e}", t.checked, t.skipped, t.worst))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(
        1,
        "gradient fidelity",
        worst < 1e-4 && all_checked && elapsed < 120.0,
        &format!("{detail}; {elapsed:.1}s"),
    );
}

#[test]
fn criterion_2_loss_oracles() {
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let mut worst_nt: f64 = 0.0;
    for n in [1, 2, 4, 8] {
        for s in 0..10 {
            let mut rng = seed::rng(s, &[n as u64]);
            let (zp, zq) = (unit_rows(&mut rng, n, 16), unit_rows(&mut rng, n, 16));
            for tau in [0.01, 0.1, 1.0] {
                let got = nt_xent_batch(&zp, &zq, tau).unwrap();
                if n == 1 {
                    check(got == 0.0, "N=1 gives exactly 0");
                }
                let mut tape = Tape::new();
                let (a, b) = (tape.constant(zp.clone()), tape.constant(zq.clone()));
                let on_tape = nt_xent_var(&mut tape, a, b, tau).unwrap();
                let on_tape = tape.scalar_value(on_tape).unwrap();
                let want = brute_nt_xent(&zp, &zq, tau);
                worst_nt = worst_nt.max((got - want).abs()).max((on_tape - want).abs());
            }
        }
    }
    check(worst_nt < 1e-9, "nt-xent equals brute force");
    let e1 = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let two = nt_xent_batch(&e1, &e1, 1.0).unwrap();
    let e = std::f64::consts::E;
    check((two - -(e / (e + 2.0)).ln()).abs() < 1e-12 && (two - 0.5514).abs() < 1e-4, "orthogonal pairs give 0.5514");

    let mut rng = seed::rng(7, &[]);
    let gt = ball_points(&mut rng, PATCH_SIZE);
    check(position_loss(&gt[17], &gt, 0.0).unwrap() == 0.0, "position loss at a gt point with beta 0");
    let r = 0.8;
    let disc: Vec<Vec3> = (0..PATCH_SIZE)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / PATCH_SIZE as f64;
            let s = if k % 2 == 0 { r } else { r * rng.random::<f64>() };
            Vec3::new(s * t.cos(), s * t.sin(), 0.0)
        })
        .chain(std::iter::once(Vec3::zeros()))
        .collect();
    check((position_loss(&Vec3::zeros(), &disc, 1.0).unwrap() - r * r).abs() < 1e-12, "disc max term equals r²");
    let mut worst_scan: f64 = 0.0;
    for _ in 0..100 {
        let p = ball_points(&mut rng, 1)[0];
        let beta: f64 = rng.random();
        let d: Vec<f64> = gt.iter().map(|g| (p - g).norm_squared()).collect();
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(0.0, f64::max);
        worst_scan = worst_scan.max((position_loss(&p, &gt, beta).unwrap() - ((1.0 - beta) * lo + beta * hi)).abs());
    }
    check(worst_scan < 1e-12, "position loss equals a brute-force scan");

    let at = |theta: f64, delta: f64, gamma: u32| {
        let target = Vec3::z();
        let n = Vec3::new(theta.sin(), 0.0, theta.cos());
        normal_loss(&n, &Vec3::zeros(), &[Vec3::zeros()], &[target], delta, gamma).unwrap()
    };
    check(at(0.0, 0.3, 12).abs() < 1e-12, "normal loss at 0");
    check((at(PI / 2.0, 0.3, 12) - 1.0).abs() < 1e-12, "normal loss at π/2");
    check(at(PI, 0.3, 12).abs() < 1e-12, "normal loss at π");
    let third = at(PI / 3.0, 0.3, 12);
    check((third - 0.9248291).abs() < 1e-6, "normal loss at π/3 is 0.9248291");
    check((third - (1.0 - (0.3 * 0.25 + 0.7 * 0.5f64.powi(12)))).abs() < 1e-12, "normal loss at π/3 by arithmetic");

    let normals: Vec<Vec3> = (0..PATCH_SIZE).map(|_| unit(&mut rng)).collect();
    let sample = bare_sample(gt.clone(), normals.clone(), gt[0], normals[0]);
    let mut worst_joint: f64 = 0.0;
    for _ in 0..50 {
        let p = ball_points(&mut rng, 1)[0];
        let n = unit(&mut rng);
        let cfg = random_loss_config(&mut rng, LossVariant::Joint);
        let pos = position_loss(&p, &gt, cfg.beta).unwrap();
        let nrm = normal_loss(&n, &p, &gt, &normals, cfg.delta, cfg.gamma).unwrap();
        let only_pos = JointLossConfig { alpha: 1.0, ..cfg };
        let only_nrm = JointLossConfig { alpha: 0.0, ..cfg };
        worst_joint = worst_joint
            .max((joint_loss(&p, &n, &sample, &only_pos).unwrap() - pos).abs())
            .max((joint_loss(&p, &n, &sample, &only_nrm).unwrap() - nrm).abs())
            .max((joint_loss(&p, &n, &sample, &cfg).unwrap() - (cfg.alpha * pos + (1.0 - cfg.alpha) * nrm)).abs());
        let j = (0..gt.len())
            .min_by(|&a, &b| (p - gt[a]).norm_squared().partial_cmp(&(p - gt[b]).norm_squared()).unwrap())
            .unwrap();
        let c = n.dot(&normals[j]);
        let by_hand = 1.0 - (cfg.delta * c * c + (1.0 - cfg.delta) * c.powi(cfg.gamma as i32));
        worst_joint = worst_joint.max((nrm - by_hand).abs());
    }
    check(worst_joint < 1e-12, "joint loss reduces and composes");

    let cfg = JointLossConfig::default();
    check(alt_joint_loss(&gt[0], &normals[0], &gt[0], &normals[0], &cfg).abs() < 1e-12, "alternative loss at the target");
    let one = JointLossConfig { alpha: 1.0, ..cfg };
    check((alt_joint_loss(&(gt[0] + Vec3::y()), &normals[0], &gt[0], &normals[0], &one) - 1.0).abs() < 1e-12, "unit displacement gives 1");
    let mut worst_alt: f64 = 0.0;
    for _ in 0..50 {
        let (p, n, c, cn) = (ball_points(&mut rng, 1)[0], unit(&mut rng), ball_points(&mut rng, 1)[0], unit(&mut rng));
        let cfg = random_loss_config(&mut rng, LossVariant::Alternative);
        let cos = n.dot(&cn);
        let by_hand = cfg.alpha * (p - c).norm_squared()
            + (1.0 - cfg.alpha) * (1.0 - (cfg.delta * cos * cos + (1.0 - cfg.delta) * cos.powi(cfg.gamma as i32)));
        worst_alt = worst_alt.max((alt_joint_loss(&p, &n, &c, &cn, &cfg) - by_hand).abs());
        worst_alt = worst_alt.max((angular_term(&n, &cn, cfg.delta, cfg.gamma) - angular_term(&-n, &cn, cfg.delta, cfg.gamma)).abs());
    }
    check(worst_alt < 1e-12, "alternative loss equals hand composition");

    verdict(
        2,
        "loss oracles",
        failures.is_empty(),
        &format!("nt-xent max error {worst_nt:.1e}, normal loss at π/3 = {third:.7}; failed: {failures:?}"),
    );
}

#[test]
fn criterion_3_refinement_oracles() {
    let mut worst_taubin: f64 = 0.0;
    let mut worst_lrma: f64 = 0.0;
    for c in 0..100u64 {
        let mut rng = seed::rng(c, &[3]);
        let n = rng.random_range(30..=2000);
        let original = random_points(&mut rng, n);
        let moved: Vec<Vec3> = original.iter().map(|p| p + (Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5)) * 0.05).collect();
        let normals: Vec<Vec3> = (0..n).map(|_| unit(&mut rng)).collect();
        let k_t = rng.random_range(1..=100);
        let k_l = rng.random_range(1..=30);

        let out = taubin_inflate(&PointCloud::new(moved.clone()).unwrap(), &PointCloud::new(original.clone()).unwrap(), k_t).unwrap();
        let cloud = PointCloud::with_normals(moved.clone(), normals.clone()).unwrap();
        let refined = lrma_update(&cloud, k_l).unwrap();
        for i in 0..n {
            let hood = brute_knn_excluding(&moved, i, k_t);
            let mut shift = Vec3::zeros();
            for &j in &hood {
                shift += moved[j] - original[j];
            }
            let want = moved[i] - shift / hood.len() as f64;
            worst_taubin = worst_taubin.max((out.points()[i] - want).norm());

            let hood = brute_knn_excluding(&moved, i, k_l);
            let mut step = [0.0f64; 3];
            for &j in &hood {
                let d = moved[j] - moved[i];
                for (r, s) in step.iter_mut().enumerate() {
                    for m in 0..3 {
                        *s += d[m] * (normals[j][m] * normals[j][r] + normals[i][m] * normals[i][r]);
                    }
                }
            }
            let want = moved[i] + Vec3::from(step) / (3.0 * hood.len() as f64);
            worst_lrma = worst_lrma.max((refined.points()[i] - want).norm());
        }
    }

    let h = 0.37;
    let mut plane = vec![Vec3::new(0.0, 0.0, h)];
    let mut normals = vec![Vec3::z()];
    for x in -3..=3 {
        for y in -3..=3 {
            if (x, y) != (0, 0) {
                plane.push(Vec3::new(x as f64, y as f64, 0.0));
                normals.push(if (x + y) % 2 == 0 { Vec3::z() } else { -Vec3::z() });
            }
        }
    }
    let out = lrma_update(&PointCloud::with_normals(plane, normals).unwrap(), 20).unwrap();
    let offset_error = (out.points()[0].z - h / 3.0).abs();

    let mut rng = seed::rng(9, &[]);
    let original = random_points(&mut rng, 800);
    let t = Vec3::new(0.1, -0.2, 0.05);
    let shifted: Vec<Vec3> = original.iter().map(|p| p + t).collect();
    let back = taubin_inflate(&PointCloud::new(shifted).unwrap(), &PointCloud::new(original.clone()).unwrap(), 100).unwrap();
    let restore_error = back.points().iter().zip(&original).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    verdict(
        3,
        "refinement oracles",
        worst_taubin < 1e-10 && worst_lrma < 1e-10 && offset_error < 1e-10 && restore_error < 1e-12,
        &format!(
            "taubin {worst_taubin:.1e}, lrma {worst_lrma:.1e}, planar offset error {offset_error:.1e}, translation restore {restore_error:.1e}"
        ),
    );
}

/// Distance to a triangle from the plane projection and the three edges,
/// independent of the region-based closest-point routine.
fn brute_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let seg = |a: &Vec3, b: &Vec3| {
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        (p - (a + ab * t)).norm()
    };
    let n = (b - a).cross(&(c - a));
    let q = p - n * ((p - a).dot(&n) / n.norm_squared());
    let inside = [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (*v - *u).cross(&(q - *u)).dot(&n) >= 0.0);
    let edges = seg(a, b).min(seg(b, c)).min(seg(c, a));
    if inside {
        (p - q).norm().min(edges)
    } else {
        edges
    }
}

#[test]
fn criterion_4_geometry_oracles() {
    let mut rng = seed::rng(4, &[]);
    let mut knn_mismatch = 0;
    let mut radius_mismatch = 0;
    for c in 0..20 {
        let n = rng.random_range(50..=2000);
        let pts = random_points(&mut rng, n);
        let index = SpatialIndex::build(&pts);
        for _ in 0..50 {
            let q = if c % 2 == 0 { pts[rng.random_range(0..n)] } else { Vec3::new(rng.random(), rng.random(), rng.random()) };
            let k = rng.random_range(1..=n.min(64));
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| (pts[a] - q).norm_squared().partial_cmp(&(pts[b] - q).norm_squared()).unwrap().then(a.cmp(&b)));
            if index.knn(&q, k).unwrap() != order[..k] {
                knn_mismatch += 1;
            }
            let r: f64 = rng.random_range(0.0..0.3);
            let within: Vec<usize> = (0..n).filter(|&j| (pts[j] - q).norm_squared() < r * r).collect();
            if index.within_radius(&q, r) != within {
                radius_mismatch += 1;
            }
        }
    }

    let mut sharp_mismatch = 0;
    let mut sharp_count = 0;
    for (s, shape) in [Shape::Cube, Shape::Torus, Shape::Cube].into_iter().enumerate() {
        let cloud = shape.sample(1500 + 250 * s, s as u64);
        let mask = classify_sharp_features(&cloud).unwrap();
        let (p, nrm) = (cloud.points(), cloud.normals().unwrap());
        for i in 0..p.len() {
            let want = brute_knn_excluding(p, i, SHARP_NEIGHBORS).iter().any(|&j| {
                let theta = nrm[i].dot(&nrm[j]).clamp(-1.0, 1.0).acos();
                SHARP_ANGLE_RANGE.0 < theta && theta < SHARP_ANGLE_RANGE.1
            });
            sharp_count += want as usize;
            sharp_mismatch += (mask[i] != want) as usize;
        }
    }

    let verts: Vec<Vec3> = (0..600).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.0).collect();
    let tris: Vec<[usize; 3]> = (0..500).map(|t| [t, t + 1 + rng.random_range(0..50), t + 51 + rng.random_range(0..49)]).collect();
    let mesh = TriangleMesh::new(verts, tris).unwrap();
    let queries: Vec<Vec3> = (0..2000).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 2.5 - Vec3::repeat(0.25)).collect();
    let got = point2surface_distances(&queries, &mesh).unwrap();
    let index = MeshIndex::build(&mesh).unwrap();
    let mut worst_p2s: f64 = 0.0;
    for (q, d) in queries.iter().zip(&got) {
        let want = (0..mesh.triangles().len())
            .map(|t| {
                let [a, b, c] = mesh.corners(t);
                let brute = brute_triangle_distance(q, &a, &b, &c);
                let closest = (q - closest_point_on_triangle(q, &a, &b, &c)).norm();
                worst_p2s = worst_p2s.max((brute - closest).abs());
                brute
            })
            .fold(f64::INFINITY, f64::min);
        worst_p2s = worst_p2s.max((d - want).abs()).max((index.distance(q) - want).abs());
    }

    let mut worst_eigen: f64 = 0.0;
    for _ in 0..1000 {
        let a = Mat3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let m = a + a.transpose();
        let e = eigen3_symmetric(&m).unwrap();
        worst_eigen = worst_eigen.max((e.reconstruct() - m).norm() / m.norm().max(1.0));
    }

    verdict(
        4,
        "geometry oracles",
        knn_mismatch == 0 && radius_mismatch == 0 && sharp_mismatch == 0 && sharp_count > 0 && worst_p2s < 1e-10 && worst_eigen < 1e-8,
        &format!(
            "knn mismatches {knn_mismatch}, radius mismatches {radius_mismatch}, sharp mismatches {sharp_mismatch} of {sharp_count} sharp, p2s {worst_p2s:.1e}, eigen residual {worst_eigen:.1e}"
        ),
    );
}

#[test]
fn criterion_5_invariance_suite() {
    let mut rng = seed::rng(5, &[]);
    let mut failures = Vec::new();

    let enc = EncoderWeights::init(5);
    for _ in 0..3 {
        let mut pts = ball_points(&mut rng, PATCH_SIZE);
        let before = enc.encode(&pts).unwrap();
        pts.shuffle(&mut rng);
        if enc.encode(&pts).unwrap() != before {
            failures.push("encoder permutation");
        }
    }

    let gt = ball_points(&mut rng, PATCH_SIZE);
    let normals: Vec<Vec3> = (0..PATCH_SIZE).map(|_| unit(&mut rng)).collect();
    for _ in 0..100 {
        let (p, n) = (ball_points(&mut rng, 1)[0], unit(&mut rng));
        let a = normal_loss(&n, &p, &gt, &normals, 0.3, 12).unwrap();
        let b = normal_loss(&-n, &p, &gt, &normals, 0.3, 12).unwrap();
        let flipped: Vec<Vec3> = normals.iter().map(|m| -m).collect();
        let c = normal_loss(&n, &p, &gt, &flipped, 0.3, 12).unwrap();
        if a != b || a != c {
            failures.push("normal loss sign flip");
        }
    }

    let a: Vec<Vec3> = (0..200).map(|_| unit(&mut rng)).collect();
    let b: Vec<Vec3> = (0..200).map(|_| unit(&mut rng)).collect();
    let flipped: Vec<Vec3> = b.iter().map(|v| if rng.random::<bool>() { -v } else { *v }).collect();
    if msae(&a, &b).unwrap() != msae(&a, &flipped).unwrap() {
        failures.push("msae orientation");
    }
    if a.iter().zip(&b).any(|(x, y)| unoriented_angle(x, y) != unoriented_angle(x, &-y)) {
        failures.push("unoriented angle");
    }

    let mut worst_iso: f64 = 0.0;
    for _ in 0..20 {
        let patch = Patch {
            points: ball_points(&mut rng, 200),
            center_index: 0,
            center: Vec3::zeros(),
            radius: 1.0,
            source_sigma: 0.0,
        };
        let axis = Axis::ALL[rng.random_range(0..3)];
        let turned = rotate_patch(&patch, axis, rng.random_range(0.0..2.0 * PI));
        for i in 0..patch.points.len() {
            for j in 0..patch.points.len() {
                let d0 = (patch.points[i] - patch.points[j]).norm();
                let d1 = (turned.points[i] - turned.points[j]).norm();
                worst_iso = worst_iso.max((d0 - d1).abs());
            }
        }
    }

    let mut worst_swap: f64 = 0.0;
    for n in 1..=8 {
        let (zp, zq) = (unit_rows(&mut rng, n, 32), unit_rows(&mut rng, n, 32));
        for tau in [0.01, 0.5] {
            worst_swap = worst_swap.max((nt_xent_batch(&zp, &zq, tau).unwrap() - nt_xent_batch(&zq, &zp, tau).unwrap()).abs());
        }
    }

    verdict(
        5,
        "invariance suite",
        failures.is_empty() && worst_iso < 1e-10 && worst_swap < 1e-12,
        &format!("exact checks failed: {failures:?}; isometry {worst_iso:.1e}; view swap {worst_swap:.1e}"),
    );
}

fn mean_epoch_drop(losses: &[f64]) -> bool {
    losses.last().unwrap() < losses.first().unwrap()
}

#[test]
fn criterion_6_desk_scale_end_to_end() {
    const POINTS: usize = 10_000;
    const SIGMA: f64 = 0.01;
    let start = Instant::now();
    let train: Vec<_> = [(Shape::Cube, 61), (Shape::Torus, 62)]
        .into_iter()
        .map(|(shape, s)| make_variant_set(&shape.sample(POINTS, s), &[SIGMA], s).unwrap())
        .collect();

    let pcfg = PretrainConfig {
        epochs: 20,
        batch_size: 64,
        pairs_per_epoch: Some(128),
        seed: 6,
        ..PretrainConfig::default()
    };
    let pre = pretrain_encoder(&train, &pcfg).unwrap();
    let pretrain_secs = start.elapsed().as_secs_f64();

    let rcfg = RegressTrainConfig {
        epochs: 10,
        samples_per_epoch: Some(1024),
        seed: 6,
        ..RegressTrainConfig::default()
    };
    let reg = train_regressor(&train, &pre.encoder, &rcfg).unwrap();
    let train_secs = start.elapsed().as_secs_f64() - pretrain_secs;

    let gt = Shape::Sphere.sample(POINTS, 63);
    let noisy = add_noise(&gt, &NoiseSpec::gaussian(SIGMA, 64)).unwrap();
    let indexed = IndexedCloud::new(noisy.clone().without_normals());
    let encoded = encode_cloud(&indexed, &pre.encoder, 0.05, 6, 0).unwrap();
    let trained = apply_regressor(&encoded, &reg.regressor).unwrap();
    let random = apply_regressor(&encoded, &RegressorWeights::init(65)).unwrap();

    let predicted = PointCloud::with_normals(trained.iter().map(|e| e.position).collect(), trained.iter().map(|e| e.normal).collect()).unwrap();
    let inflated = taubin_inflate(&predicted, &noisy, 100).unwrap();
    let filtered = lrma_update(&inflated, 20).unwrap();

    let gt_normals = gt.normals().unwrap();
    let chamfer_noisy = chamfer(&gt, &noisy).unwrap();
    let chamfer_filtered = chamfer(&gt, &filtered).unwrap();
    let msae_trained = msae(gt_normals, &trained.iter().map(|e| e.normal).collect::<Vec<_>>()).unwrap();
    let msae_random = msae(gt_normals, &random.iter().map(|e| e.normal).collect::<Vec<_>>()).unwrap();

    let a = chamfer_filtered < chamfer_noisy;
    let b = msae_trained < 0.5 * msae_random;
    let c = mean_epoch_drop(&pre.epoch_losses) && mean_epoch_drop(&reg.epoch_losses);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        6,
        "desk-scale end-to-end",
        a && b && c,
        &format!(
            "(a) chamfer {chamfer_filtered:.3e} vs noisy {chamfer_noisy:.3e}; (b) msae {msae_trained:.4} vs random {msae_random:.4}; \
             (c) contrastive {:.4} -> {:.4}, regression {:.5} -> {:.5}; pretrain {pretrain_secs:.0}s, train {train_secs:.0}s, total {secs:.0}s",
            pre.epoch_losses[0],
            pre.epoch_losses.last().unwrap(),
            reg.epoch_losses[0],
            reg.epoch_losses.last().unwrap(),
        ),
    );
}

#[test]
fn criterion_7_ablation_plumbing() {
    let train = vec![
        make_variant_set(&Shape::Cube.sample(800, 71), &[0.01], 71).unwrap(),
        make_variant_set(&Shape::Torus.sample(800, 72), &[0.01], 72).unwrap(),
    ];
    let encoder = EncoderWeights::init(7);
    let mut traces = Vec::new();
    for alpha in [0.8, 0.9] {
        for gamma in [8, 12] {
            let json = format!(
                r#"{{"schema_version": 1, "train": {{"epochs": 3, "samples_per_epoch": 96, "seed": 7, "loss": {{"alpha": {alpha}, "gamma": {gamma}}}}}}}"#
            );
            let cfg = pointfuse::cli::RunConfig::from_json(&json).unwrap();
            assert_eq!((cfg.train.loss.alpha, cfg.train.loss.gamma), (alpha, gamma));
            let out = train_regressor(&train, &encoder, &cfg.train).unwrap();
            traces.push(((alpha, gamma), out.epoch_losses));
        }
    }
    let complete = traces.iter().all(|(_, t)| t.len() == 3 && t.iter().all(|v| v.is_finite()));
    let distinct = (0..traces.len()).all(|i| (i + 1..traces.len()).all(|j| traces[i].1 != traces[j].1));
    verdict(
        7,
        "ablation plumbing",
        complete && distinct,
        &traces
            .iter()
            .map(|((a, g), t)| format!("α={a} γ={g}: {:.5}/{:.5}/{:.5}", t[0], t[1], t[2]))
            .collect::<Vec<_>>()
            .join("; "),
    );
}

#[test]
fn criterion_8_cli_determinism() {
    use std::path::Path;
    use std::process::Command;

    let input = tempfile::tempdir().unwrap();
    pointfuse::io::write_xyz(&input.path().join("cube.xyz"), &Shape::Cube.sample(600, 81)).unwrap();
    pointfuse::io::write_xyz(&input.path().join("torus.xyz"), &Shape::Torus.sample(600, 82)).unwrap();
    let probe = add_noise(&Shape::Sphere.sample(300, 83), &NoiseSpec::gaussian(0.01, 84)).unwrap();
    pointfuse::io::write_xyz(&input.path().join("probe.xyz"), &probe).unwrap();
    let gt_path = input.path().join("probe_gt.xyz");
    pointfuse::io::write_xyz(&gt_path, &Shape::Sphere.sample(300, 83)).unwrap();

    let run = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let shapes = root.join("shapes");
        std::fs::create_dir_all(&shapes).unwrap();
        for name in ["cube.xyz", "torus.xyz"] {
            std::fs::copy(input.path().join(name), shapes.join(name)).unwrap();
        }
        let exe = env!("CARGO_BIN_EXE_pointfuse");
        let p = |s: &str| root.join(s).to_string_lossy().into_owned();
        let commands: Vec<Vec<String>> = vec![
            vec!["gen-data".into(), "--input".into(), p("shapes"), "--output".into(), p("data"), "--noise".into(), "1.0".into(), "--impulsive".into(), "1.0:0.3".into(), "--seed".into(), "8".into()],
            vec!["pretrain".into(), "--data".into(), p("data"), "--epochs".into(), "2".into(), "--batch".into(), "8".into(), "--pairs-per-epoch".into(), "16".into(), "--seed".into(), "8".into(), "--out".into(), p("encoder.json")],
            vec!["train".into(), "--data".into(), p("data"), "--encoder".into(), p("encoder.json"), "--epochs".into(), "2".into(), "--samples".into(), "32".into(), "--batch".into(), "8".into(), "--seed".into(), "8".into(), "--out".into(), p("model.json")],
            vec!["filter".into(), "--model".into(), p("model.json"), "--input".into(), input.path().join("probe.xyz").to_string_lossy().into_owned(), "--iterations".into(), "1".into(), "--seed".into(), "8".into(), "--output".into(), p("filtered.xyz")],
            vec!["eval".into(), "--gt".into(), gt_path.to_string_lossy().into_owned(), "--pred".into(), p("filtered.xyz"), "--out".into(), p("report.json"), "--per-point".into(), p("errors.csv")],
        ];
        for args in &commands {
            let status = Command::new(exe).args(args).env("RUST_LOG", "warn").status().unwrap();
            assert!(status.success(), "{args:?} failed");
        }
        let mut files = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else if !path.starts_with(root.join("shapes")) {
                    files.push((path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let (first, second) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = run(first.path());
    let b = run(second.path());
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    verdict(
        8,
        "cli determinism",
        a.len() == b.len() && differing.is_empty() && a.len() >= 12,
        &format!("{} files compared, differing: {differing:?}; files: {names:?}", a.len()),
    );
}
