//! On-disk dataset layout: one directory per shape holding `clean.xyz`, the
//! noisy variants, `sharp.txt` and a `manifest.json` listing them.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::NoiseConfig;
use crate::datagen::{add_noise, classify_sharp_features, density_resample, make_variant_set, NoiseKind, NoiseSpec, VariantSet};
use crate::error::{Error, Result};
use crate::io::{read_xyz, write_mask, write_xyz};
use crate::seed;

const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;
const DENSITY_TAG: u64 = 0x4445;
const IMPULSIVE_TAG: u64 = 0x494d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub file: String,
    pub kind: NoiseKind,
    pub sigma_fraction: f64,
    pub affected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub shape: String,
    pub seed: u64,
    pub points: usize,
    pub clean: String,
    pub sharp: String,
    pub variants: Vec<VariantEntry>,
}

fn input_clouds(input: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "xyz"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .xyz files", input.display())));
    }
    Ok(files)
}

/// Writes the variant set and sharp mask of every `.xyz` file in `input`.
/// Shapes are seeded by their position in file-name order. Returns the
/// manifests in that order.
pub fn generate_dataset(input: &Path, output: &Path, cfg: &NoiseConfig) -> Result<Vec<DatasetManifest>> {
    let mut manifests = Vec::new();
    for (s, file) in input_clouds(input)?.iter().enumerate() {
        let shape = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let shape_seed = seed::derive(cfg.seed, &[s as u64]);
        let mut clean = read_xyz(file)?;
        clean.require_normals().map_err(|_| Error::Data(format!("{}: normals are required", file.display())))?;
        if let Some(regime) = cfg.density {
            clean = density_resample(&clean, regime, seed::derive(shape_seed, &[DENSITY_TAG]))?;
        }
        let sigmas: Vec<f64> = cfg.sigmas_percent.iter().map(|p| p / 100.0).collect();
        let set = make_variant_set(&clean, &sigmas, shape_seed)?;

        let dir = output.join(&shape);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_xyz(&dir.join("clean.xyz"), set.clean())?;
        write_mask(&dir.join("sharp.txt"), &classify_sharp_features(set.clean())?)?;
        let mut variants = Vec::new();
        for (percent, (sigma, cloud)) in cfg.sigmas_percent.iter().zip(set.noisy()) {
            let name = format!("sigma_{percent}.xyz");
            write_xyz(&dir.join(&name), cloud)?;
            variants.push(VariantEntry {
                file: name,
                kind: NoiseKind::Gaussian,
                sigma_fraction: sigma,
                affected_fraction: 1.0,
            });
        }
        if let Some(imp) = cfg.impulsive {
            let spec = NoiseSpec::impulsive(imp.sigma_fraction, imp.affected_fraction, seed::derive(shape_seed, &[IMPULSIVE_TAG]));
            let name = format!("impulsive_{}_{}.xyz", imp.sigma_fraction, imp.affected_fraction);
            write_xyz(&dir.join(&name), &add_noise(set.clean(), &spec)?)?;
            variants.push(VariantEntry {
                file: name,
                kind: NoiseKind::Impulsive,
                sigma_fraction: imp.sigma_fraction,
                affected_fraction: imp.affected_fraction,
            });
        }
        let manifest = DatasetManifest {
            format_version: MANIFEST_VERSION,
            shape,
            seed: shape_seed,
            points: set.point_count(),
            clean: "clean.xyz".into(),
            sharp: "sharp.txt".into(),
            variants,
        };
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        info!("{}: {} points, {} variants", manifest.shape, manifest.points, manifest.variants.len() + 1);
        manifests.push(manifest);
    }
    Ok(manifests)
}

/// Reads every shape directory under `dir` that has a manifest, in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<VariantSet>> {
    let mut shape_dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    shape_dirs.sort();
    if shape_dirs.is_empty() {
        return Err(Error::Data(format!("{}: no shape directories with a {MANIFEST}", dir.display())));
    }
    shape_dirs
        .iter()
        .map(|d| {
            let path = d.join(MANIFEST);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let manifest: DatasetManifest =
                serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if manifest.format_version != MANIFEST_VERSION {
                return Err(Error::Data(format!("{}: unsupported format version {}", path.display(), manifest.format_version)));
            }
            let clean = read_xyz(&d.join(&manifest.clean))?;
            let noisy = manifest
                .variants
                .iter()
                .map(|v| Ok((v.sigma_fraction, read_xyz(&d.join(&v.file))?)))
                .collect::<Result<Vec<_>>>()?;
            VariantSet::from_parts(clean, noisy)
        })
        .collect()
}
