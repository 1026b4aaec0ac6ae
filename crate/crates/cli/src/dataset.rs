//! Supervised training corpus: reference reconstructions of short-readout
//! simulations paired with blurred inputs regridded onto longer readouts
//! with injected global off-resonance.
//!
//! References are reconstructions of the short-readout data, not the
//! pristine phantoms, so they carry the same sampling footprint as the
//! inputs. The manifest is written only after every pair has been
//! persisted, so a partial build leaves no manifest behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use offres_core::forward::{add_global_offres, forward_freq_segmented_with_params};
use offres_core::phantom::{gen_field_map, gen_vessel_phantom};
use offres_core::recon::{grid_adjoint, regrid_to_trajectory, GridParams};
use offres_core::trajectory::{scale_readout, ConesTrajectory};
use offres_core::volume::{ComplexVolume, FieldMap};

use crate::{cfl, format_err, trajfile, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub phantom_id: usize,
    pub seed: u64,
    pub factor: f64,
    pub f0_hz: f64,
    pub input_path: String,
    pub reference_path: String,
    pub traj_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub shape: [usize; 3],
    pub scale_factors: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub entries: Vec<ManifestEntry>,
}

pub struct CorpusParams {
    pub n_phantoms: usize,
    pub n_vessels: usize,
    pub scale_factors: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub seed: u64,
    pub use_field_maps: bool,
    pub fieldmap_f_max_hz: f64,
    pub n_bins: usize,
    pub grid: GridParams,
}

/// Uniformly spaced augmentation frequencies over \[-span, span\].
pub fn uniform_freqs(n: usize, span_hz: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -span_hz + 2.0 * span_hz * i as f64 / (n - 1) as f64).collect()
}

/// Build the corpus under `out_dir` and return the manifest (also written
/// to `out_dir/manifest.json`).
pub fn build_corpus(
    traj_short: &ConesTrajectory,
    params: &CorpusParams,
    out_dir: &Path,
) -> Result<Manifest> {
    if params.scale_factors.is_empty() || params.freqs_hz.is_empty() {
        return Err(format_err("scale factors and frequencies must be nonempty"));
    }
    if params.n_phantoms == 0 {
        return Err(format_err("need at least one phantom"));
    }
    let n = traj_short.meta.grid_size;
    let shape = [n, n, n];
    fs::create_dir_all(out_dir)?;

    // Persist the trajectory family once, up front.
    let traj_dir = out_dir.join("traj");
    trajfile::write_traj(&traj_dir.join("short"), traj_short)?;
    let mut scaled: Vec<(f64, ConesTrajectory, PathBuf)> = Vec::new();
    for &factor in &params.scale_factors {
        let t = scale_readout(traj_short, factor)?;
        let path = traj_dir.join(format!("scaled-{factor:.3}"));
        trajfile::write_traj(&path, &t)?;
        scaled.push((factor, t, path));
    }

    let mut entries = Vec::new();
    for p in 0..params.n_phantoms {
        let phantom_seed = params.seed.wrapping_add(1000 * p as u64);
        let phantom = gen_vessel_phantom(shape, params.n_vessels, phantom_seed)?;
        let fmap = if params.use_field_maps {
            gen_field_map(shape, params.fieldmap_f_max_hz, 5, phantom_seed ^ 0xf1e1d)?
        } else {
            FieldMap::zeros(shape)?
        };
        let ks_short = forward_freq_segmented_with_params(
            &phantom,
            &fmap,
            traj_short,
            params.n_bins,
            &params.grid,
        )?;
        let reference = grid_adjoint(&ks_short, traj_short, shape, &params.grid)?;
        let ph_dir = out_dir.join(format!("ph{p:03}"));
        let ref_base = ph_dir.join("reference");
        cfl::write_volume(&ref_base, &reference)?;

        for (factor, traj_f, traj_path) in &scaled {
            let ks_regrid =
                regrid_to_trajectory(&ks_short, traj_short, traj_f, shape, &params.grid)?;
            for &f0 in &params.freqs_hz {
                let ks_aug = add_global_offres(&ks_regrid, traj_f, f0)?;
                let input = grid_adjoint(&ks_aug, traj_f, shape, &params.grid)?;
                let input_base = ph_dir.join(format!("input_x{factor:.3}_f{f0:+07.1}"));
                cfl::write_volume(&input_base, &input)?;
                entries.push(ManifestEntry {
                    phantom_id: p,
                    seed: phantom_seed,
                    factor: *factor,
                    f0_hz: f0,
                    input_path: rel_path(out_dir, &input_base),
                    reference_path: rel_path(out_dir, &ref_base),
                    traj_path: rel_path(out_dir, traj_path),
                });
            }
        }
    }

    let manifest = Manifest {
        seed: params.seed,
        shape,
        scale_factors: params.scale_factors.clone(),
        freqs_hz: params.freqs_hz.clone(),
        entries,
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn rel_path(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned()
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    crate::ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(manifest).map_err(format_err)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| format_err(format!("bad manifest: {e}")))
}

/// Split at phantom granularity so no phantom appears in both sets.
/// Deterministic per seed.
pub fn split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(format_err("train fraction must be in (0, 1)"));
    }
    let mut ids: Vec<usize> = manifest.entries.iter().map(|e| e.phantom_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(format_err("need at least two phantoms to split"));
    }
    let mut rng = offres_core::rng::Rng::new(seed ^ 0x5117);
    rng.shuffle(&mut ids);
    let n_train = ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: std::collections::BTreeSet<usize> = ids[..n_train].iter().copied().collect();

    let pick = |keep_train: bool| -> Manifest {
        Manifest {
            seed: manifest.seed,
            shape: manifest.shape,
            scale_factors: manifest.scale_factors.clone(),
            freqs_hz: manifest.freqs_hz.clone(),
            entries: manifest
                .entries
                .iter()
                .filter(|e| train_ids.contains(&e.phantom_id) == keep_train)
                .cloned()
                .collect(),
        }
    };
    Ok((pick(true), pick(false)))
}

/// Load the (input, reference) volume pairs of a manifest.
pub fn load_pairs(root: &Path, manifest: &Manifest) -> Result<Vec<(ComplexVolume, ComplexVolume)>> {
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let input = cfl::read_volume(&root.join(&e.input_path))?;
        let reference = cfl::read_volume(&root.join(&e.reference_path))?;
        pairs.push((input, reference));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use offres_core::trajectory::generate_cones;

    fn quick_params(seed: u64) -> CorpusParams {
        CorpusParams {
            n_phantoms: 3,
            n_vessels: 2,
            scale_factors: vec![1.0, 2.0],
            freqs_hz: uniform_freqs(3, 300.0),
            seed,
            use_field_maps: false,
            fieldmap_f_max_hz: 300.0,
            n_bins: 1,
            grid: GridParams::default(),
        }
    }

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("offres-dataset-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn corpus_counts_and_round_trips() {
        let traj = generate_cones(8, 2, 256, 1e-3, 8.0, 16).unwrap();
        let out = tmp_dir("counts");
        let manifest = build_corpus(&traj, &quick_params(7), &out).unwrap();
        assert_eq!(manifest.entries.len(), 3 * 2 * 3);

        // Every referenced file exists and loads.
        for e in &manifest.entries {
            let input = cfl::read_volume(&out.join(&e.input_path)).unwrap();
            assert_eq!(input.shape, manifest.shape);
            let reference = cfl::read_volume(&out.join(&e.reference_path)).unwrap();
            assert_eq!(reference.shape, manifest.shape);
            let t = trajfile::read_traj(&out.join(&e.traj_path)).unwrap();
            assert_eq!(t.meta.grid_size, 16);
        }

        // factor == 1, f0 == 0 reproduces the reference exactly: the
        // regrid is the identity on coincident positions.
        let e = manifest
            .entries
            .iter()
            .find(|e| e.factor == 1.0 && e.f0_hz == 0.0)
            .unwrap();
        let input = cfl::read_volume(&out.join(&e.input_path)).unwrap();
        let reference = cfl::read_volume(&out.join(&e.reference_path)).unwrap();
        let rel = input.rel_l2_error(&reference).unwrap();
        assert!(rel < 2e-2, "identity pair error {rel}");
    }

    #[test]
    fn corpus_regeneration_is_bit_identical() {
        let traj = generate_cones(8, 2, 256, 1e-3, 8.0, 16).unwrap();
        let out_a = tmp_dir("regen-a");
        let out_b = tmp_dir("regen-b");
        let ma = build_corpus(&traj, &quick_params(9), &out_a).unwrap();
        let mb = build_corpus(&traj, &quick_params(9), &out_b).unwrap();
        assert_eq!(ma, mb);
        let bytes_a = fs::read(out_a.join("manifest.json")).unwrap();
        let bytes_b = fs::read(out_b.join("manifest.json")).unwrap();
        assert_eq!(bytes_a, bytes_b, "manifest bytes must be identical");
        for e in &ma.entries {
            let a = fs::read(out_a.join(format!("{}.cfl", e.input_path))).unwrap();
            let b = fs::read(out_b.join(format!("{}.cfl", e.input_path))).unwrap();
            assert_eq!(a, b, "volume bytes for {}", e.input_path);
        }
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let traj = generate_cones(8, 2, 256, 1e-3, 8.0, 16).unwrap();
        let out = tmp_dir("split");
        let manifest = build_corpus(&traj, &quick_params(11), &out).unwrap();
        let (train, test) = split(&manifest, 0.34, 3).unwrap();
        assert!(!train.entries.is_empty() && !test.entries.is_empty());
        let train_ids: std::collections::BTreeSet<_> =
            train.entries.iter().map(|e| e.phantom_id).collect();
        let test_ids: std::collections::BTreeSet<_> =
            test.entries.iter().map(|e| e.phantom_id).collect();
        assert!(train_ids.is_disjoint(&test_ids), "phantom leakage across splits");
        assert_eq!(train.entries.len() + test.entries.len(), manifest.entries.len());

        let (train2, _) = split(&manifest, 0.34, 3).unwrap();
        assert_eq!(train.entries, train2.entries);
    }

    #[test]
    fn split_proportions_match_request() {
        // 30 phantoms at 8/30 train fraction: 8 train, 22 test.
        let manifest = Manifest {
            seed: 0,
            shape: [16, 16, 16],
            scale_factors: vec![1.0],
            freqs_hz: vec![0.0],
            entries: (0..30)
                .map(|p| ManifestEntry {
                    phantom_id: p,
                    seed: p as u64,
                    factor: 1.0,
                    f0_hz: 0.0,
                    input_path: format!("ph{p:03}/input"),
                    reference_path: format!("ph{p:03}/reference"),
                    traj_path: "traj/short".into(),
                })
                .collect(),
        };
        let (train, test) = split(&manifest, 8.0 / 30.0, 1).unwrap();
        let train_ids: std::collections::BTreeSet<_> =
            train.entries.iter().map(|e| e.phantom_id).collect();
        let test_ids: std::collections::BTreeSet<_> =
            test.entries.iter().map(|e| e.phantom_id).collect();
        assert_eq!(train_ids.len(), 8);
        assert_eq!(test_ids.len(), 22);
    }
}
