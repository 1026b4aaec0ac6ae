//! Trajectory persistence: a `.traj.cfl` float32 array of shape
//! `[5, n_samples]` with rows (kx, ky, kz, t_seconds, dcf), a `.traj.hdr`
//! text header, and a `.traj.json` sidecar carrying metadata plus the
//! per-interleaf sample counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use offres_core::trajectory::{ConesTrajectory, TrajMeta};

use crate::{cfl, ensure_parent, format_err, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TrajSidecar {
    id: String,
    grid_size: usize,
    fov_cm: f64,
    t_read_s: f64,
    interleaf_counts: Vec<usize>,
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

pub fn write_traj(base: &Path, traj: &ConesTrajectory) -> Result<()> {
    let n = traj.len();
    let mut flat = Vec::with_capacity(5 * n);
    for j in 0..n {
        flat.push(traj.samples[j][0]);
        flat.push(traj.samples[j][1]);
        flat.push(traj.samples[j][2]);
        flat.push(traj.timestamps[j]);
        flat.push(traj.dcf[j]);
    }
    cfl::write_real(&with_suffix(base, ".traj"), &[5, n], &flat, &[("Id", traj.meta.id.clone())])?;

    let sidecar = TrajSidecar {
        id: traj.meta.id.clone(),
        grid_size: traj.meta.grid_size,
        fov_cm: traj.meta.fov_cm,
        t_read_s: traj.meta.t_read,
        interleaf_counts: traj.interleaf_ranges().iter().map(|r| r.len()).collect(),
    };
    let json_path = with_suffix(base, ".traj.json");
    ensure_parent(&json_path)?;
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar).map_err(format_err)?)?;
    Ok(())
}

pub fn read_traj(base: &Path) -> Result<ConesTrajectory> {
    let (dims, flat) = cfl::read_real(&with_suffix(base, ".traj"))?;
    if dims.len() != 2 || dims[0] != 5 {
        return Err(format_err(format!(
            "{}: trajectory array must be [5, n_samples], got {dims:?}",
            base.display()
        )));
    }
    let n = dims[1];
    let text = fs::read_to_string(with_suffix(base, ".traj.json"))
        .map_err(|e| format_err(format!("missing trajectory sidecar: {e}")))?;
    let sidecar: TrajSidecar =
        serde_json::from_str(&text).map_err(|e| format_err(format!("bad trajectory sidecar: {e}")))?;
    if sidecar.interleaf_counts.iter().sum::<usize>() != n {
        return Err(format_err("interleaf counts do not sum to the sample count"));
    }

    let mut samples = Vec::with_capacity(n);
    let mut timestamps = Vec::with_capacity(n);
    let mut dcf = Vec::with_capacity(n);
    for j in 0..n {
        samples.push([flat[5 * j], flat[5 * j + 1], flat[5 * j + 2]]);
        timestamps.push(flat[5 * j + 3]);
        dcf.push(flat[5 * j + 4]);
    }
    let mut interleaf_index = Vec::with_capacity(n);
    for (i, &count) in sidecar.interleaf_counts.iter().enumerate() {
        interleaf_index.extend(std::iter::repeat_n(i as u32, count));
    }
    let traj = ConesTrajectory {
        samples,
        timestamps,
        interleaf_index,
        dcf,
        meta: TrajMeta {
            grid_size: sidecar.grid_size,
            fov_cm: sidecar.fov_cm,
            t_read: sidecar.t_read_s,
            id: sidecar.id,
        },
    };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use offres_core::trajectory::generate_cones;

    #[test]
    fn trajectory_round_trip() {
        let dir = std::env::temp_dir().join("offres-traj-tests");
        fs::create_dir_all(&dir).unwrap();
        let base = dir.join("t0");
        let traj = generate_cones(4, 2, 32, 1.2e-3, 3.0, 16).unwrap();
        write_traj(&base, &traj).unwrap();
        let back = read_traj(&base).unwrap();
        assert_eq!(back.len(), traj.len());
        assert_eq!(back.interleaf_index, traj.interleaf_index);
        assert_eq!(back.meta.grid_size, traj.meta.grid_size);
        assert_eq!(back.meta.id, traj.meta.id);
        // float32 storage: same up to f32 rounding
        for (a, b) in back.samples.iter().zip(&traj.samples) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= (b[k] as f32).abs() as f64 * 1e-6 + 1e-7);
            }
        }
        back.validate().unwrap();
    }
}
