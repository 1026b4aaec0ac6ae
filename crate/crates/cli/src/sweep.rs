//! Frequency-sweep evaluation: inject global off-resonance, reconstruct,
//! apply each corrector, and score against the on-resonance reference
//! reconstruction. Rows stream to CSV as they are computed.

use std::io::Write;
use std::path::Path;

use offres_core::autofocus::{autofocus_correct, AutofocusConfig};
use offres_core::forward::add_global_offres;
use offres_core::metrics::{nrmse, psnr, ssim};
use offres_core::network::{apply, NetParams};
use offres_core::recon::{grid_adjoint, GridParams};
use offres_core::trajectory::ConesTrajectory;
use offres_core::KSpaceData;

use crate::{ensure_parent, format_err, Result};

/// A correction method applied to the reconstructed volume.
pub enum Corrector {
    /// Uncorrected reconstruction.
    None,
    Autofocus(AutofocusConfig),
    Net { params: NetParams<f32>, tile: usize, overlap: usize },
}

impl Corrector {
    pub fn name(&self) -> &'static str {
        match self {
            Corrector::None => "none",
            Corrector::Autofocus(_) => "autofocus",
            Corrector::Net { .. } => "net",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub f_hz: f64,
    pub method: String,
    pub nrmse: f64,
    pub ssim: f64,
    pub psnr_db: f64,
}

pub fn format_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("f_hz,method,nrmse,ssim,psnr_db\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.f_hz, r.method, r.nrmse, r.ssim, r.psnr_db));
    }
    out
}

/// Run the sweep. `freqs` are the injected global frequencies; the
/// reference is the reconstruction of the unmodified data.
pub fn sweep_eval(
    ks_ref: &KSpaceData,
    traj: &ConesTrajectory,
    correctors: &[Corrector],
    freqs: &[f64],
    grid: &GridParams,
    out_csv: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if correctors.is_empty() || freqs.is_empty() {
        return Err(format_err("sweep needs at least one corrector and one frequency"));
    }
    let n = traj.meta.grid_size;
    let shape = [n, n, n];
    let reference = grid_adjoint(ks_ref, traj, shape, grid)?;

    let mut writer = match out_csv {
        Some(path) => {
            ensure_parent(path)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "f_hz,method,nrmse,ssim,psnr_db")?;
            Some(f)
        }
        None => None,
    };

    let mut sorted: Vec<f64> = freqs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut rows = Vec::with_capacity(sorted.len() * correctors.len());
    for &f in &sorted {
        let ks_f = add_global_offres(ks_ref, traj, f)?;
        let uncorrected = grid_adjoint(&ks_f, traj, shape, grid)?;
        for corrector in correctors {
            let corrected = match corrector {
                Corrector::None => uncorrected.clone(),
                Corrector::Autofocus(cfg) => autofocus_correct(&ks_f, traj, shape, cfg)?.0,
                Corrector::Net { params, tile, overlap } => {
                    apply(params, &uncorrected, *tile, *overlap)?
                }
            };
            let row = SweepRow {
                f_hz: f,
                method: corrector.name().to_string(),
                nrmse: nrmse(&corrected, &reference)?,
                ssim: ssim(&corrected, &reference)?,
                psnr_db: psnr(&corrected, &reference)?,
            };
            if let Some(w) = writer.as_mut() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    row.f_hz, row.method, row.nrmse, row.ssim, row.psnr_db
                )?;
                w.flush()?;
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Parse a sweep CSV back into rows (used by `plot-data`).
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "f_hz,method,nrmse,ssim,psnr_db" => {}
        other => return Err(format_err(format!("unexpected CSV header {other:?}"))),
    }
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(format_err(format!("CSV row {} has {} fields", i + 2, parts.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| format_err(format!("bad number '{s}' in CSV row {}", i + 2)))
        };
        rows.push(SweepRow {
            f_hz: num(parts[0])?,
            method: parts[1].to_string(),
            nrmse: num(parts[2])?,
            ssim: num(parts[3])?,
            psnr_db: num(parts[4])?,
        });
    }
    Ok(rows)
}
