//! CFL-style array files: a `.cfl` of raw little-endian float32 next to a
//! `.hdr` text header.
//!
//! Header layout:
//!
//! ```text
//! # Dimensions
//! 16 16 16
//! ```
//!
//! Complex arrays store interleaved (real, imag) pairs, column-major with
//! the first dimension fastest; extra `# Key` / value line pairs after the
//! dimensions are preserved for metadata (voxel spacing, trajectory
//! references) and ignored by readers that do not know them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use offres_core::volume::{ComplexVolume, FieldMap};
use offres_core::{Complex64, ConesTrajectory, KSpaceData};

use crate::{ensure_parent, format_err, Result};

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

pub(crate) fn write_header(
    path: &Path,
    dims: &[usize],
    extras: &[(&str, String)],
) -> Result<()> {
    ensure_parent(path)?;
    let mut out = String::from("# Dimensions\n");
    let dim_line: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    out.push_str(&dim_line.join(" "));
    out.push('\n');
    for (key, value) in extras {
        out.push_str(&format!("# {key}\n{value}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub(crate) struct Header {
    pub dims: Vec<usize>,
    pub extras: Vec<(String, String)>,
}

pub(crate) fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path)
        .map_err(|e| format_err(format!("missing header {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == "# Dimensions" => {}
        other => {
            return Err(format_err(format!(
                "garbled header {}: expected '# Dimensions', got {other:?}",
                path.display()
            )))
        }
    }
    let dim_line = lines
        .next()
        .ok_or_else(|| format_err(format!("garbled header {}: no dimension line", path.display())))?;
    let dims: Vec<usize> = dim_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| format_err(format!("garbled header {}: bad dimension '{t}'", path.display())))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() {
        return Err(format_err(format!("garbled header {}: empty dimensions", path.display())));
    }
    let mut extras = Vec::new();
    let mut key: Option<String> = None;
    for line in lines {
        if let Some(k) = line.strip_prefix("# ") {
            key = Some(k.to_string());
        } else if let Some(k) = key.take() {
            extras.push((k, line.to_string()));
        }
    }
    Ok(Header { dims, extras })
}

fn write_f32_le(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    ensure_parent(path)?;
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for v in values {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(format_err(format!(
            "{}: file length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Write a complex array with arbitrary dimensions.
pub fn write_complex(base: &Path, dims: &[usize], data: &[Complex64], extras: &[(&str, String)]) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(format_err("dimension product does not match data length"));
    }
    write_header(&with_ext(base, ".hdr"), dims, extras)?;
    write_f32_le(
        &with_ext(base, ".cfl"),
        data.iter().flat_map(|v| [v.re as f32, v.im as f32]),
    )
}

/// Read a complex array and its header.
pub fn read_complex(base: &Path) -> Result<(Vec<usize>, Vec<Complex64>, Vec<(String, String)>)> {
    let header = read_header(&with_ext(base, ".hdr"))?;
    let floats = read_f32_le(&with_ext(base, ".cfl"))?;
    let n: usize = header.dims.iter().product();
    if floats.len() != 2 * n {
        return Err(format_err(format!(
            "{}: header wants {} complex values but file holds {}",
            base.display(),
            n,
            floats.len() / 2
        )));
    }
    let data = floats
        .chunks_exact(2)
        .map(|c| Complex64::new(c[0] as f64, c[1] as f64))
        .collect();
    Ok((header.dims, data, header.extras))
}

/// Write a raw real float32 array (used by trajectory files).
pub fn write_real(base: &Path, dims: &[usize], data: &[f64], extras: &[(&str, String)]) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(format_err("dimension product does not match data length"));
    }
    write_header(&with_ext(base, ".hdr"), dims, extras)?;
    write_f32_le(&with_ext(base, ".cfl"), data.iter().map(|&v| v as f32))
}

pub fn read_real(base: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let header = read_header(&with_ext(base, ".hdr"))?;
    let floats = read_f32_le(&with_ext(base, ".cfl"))?;
    let n: usize = header.dims.iter().product();
    if floats.len() != n {
        return Err(format_err(format!(
            "{}: header wants {} values but file holds {}",
            base.display(),
            n,
            floats.len()
        )));
    }
    Ok((header.dims, floats.into_iter().map(|v| v as f64).collect()))
}

pub fn write_volume(base: &Path, vol: &ComplexVolume) -> Result<()> {
    let spacing = format!("{} {} {}", vol.spacing_mm[0], vol.spacing_mm[1], vol.spacing_mm[2]);
    write_complex(base, &vol.shape, &vol.data, &[("SpacingMm", spacing)])
}

pub fn read_volume(base: &Path) -> Result<ComplexVolume> {
    let (dims, data, extras) = read_complex(base)?;
    if dims.len() != 3 {
        return Err(format_err(format!("{}: expected 3 dimensions, got {dims:?}", base.display())));
    }
    let mut vol = ComplexVolume::from_data([dims[0], dims[1], dims[2]], data)?;
    for (k, v) in &extras {
        if k == "SpacingMm" {
            let parts: Vec<f64> = v.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            if parts.len() == 3 {
                vol.spacing_mm = [parts[0], parts[1], parts[2]];
            }
        }
    }
    Ok(vol)
}

pub fn write_fieldmap(base: &Path, map: &FieldMap) -> Result<()> {
    write_real(base, &map.shape, &map.data, &[("Units", "Hz".into())])
}

pub fn read_fieldmap(base: &Path) -> Result<FieldMap> {
    let (dims, data) = read_real(base)?;
    if dims.len() != 3 {
        return Err(format_err("field map must have 3 dimensions"));
    }
    Ok(FieldMap::from_data([dims[0], dims[1], dims[2]], data)?)
}

/// K-space data is a `[1, n]` complex array whose header references the
/// trajectory it is aligned with.
pub fn write_kspace(base: &Path, ks: &KSpaceData) -> Result<()> {
    write_complex(base, &[1, ks.values.len()], &ks.values, &[("Trajectory", ks.traj_ref.clone())])
}

pub fn read_kspace(base: &Path) -> Result<KSpaceData> {
    let (dims, data, extras) = read_complex(base)?;
    if dims.len() != 2 || dims[0] != 1 {
        return Err(format_err(format!("{}: k-space data must be [1, n]", base.display())));
    }
    let traj_ref = extras
        .iter()
        .find(|(k, _)| k == "Trajectory")
        .map(|(_, v)| v.clone())
        .unwrap_or_default();
    Ok(KSpaceData { values: data, traj_ref })
}

/// Convenience: aligned-length check before reconstruction.
pub fn check_kspace(ks: &KSpaceData, traj: &ConesTrajectory) -> Result<()> {
    if ks.values.len() != traj.len() {
        return Err(format_err(format!(
            "k-space data has {} samples, trajectory {}",
            ks.values.len(),
            traj.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use offres_core::rng::Rng;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("offres-cfl-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn complex_round_trip_is_bit_exact_at_f32() {
        let mut rng = Rng::new(5);
        let dims = [7usize, 5, 3];
        let data: Vec<Complex64> = (0..105)
            .map(|_| {
                // Values representable in f32 so the round trip is exact.
                Complex64::new(rng.normal() as f32 as f64, rng.normal() as f32 as f64)
            })
            .collect();
        let base = tmp("roundtrip");
        write_complex(&base, &dims, &data, &[]).unwrap();
        let (rdims, rdata, _) = read_complex(&base).unwrap();
        assert_eq!(rdims, dims.to_vec());
        assert_eq!(rdata, data);
    }

    #[test]
    fn header_size_arithmetic() {
        let base = tmp("sized");
        let data = vec![Complex64::new(0.0, 0.0); 512];
        write_complex(&base, &[8, 8, 8], &data, &[]).unwrap();
        let bytes = fs::read(with_ext(&base, ".cfl")).unwrap();
        assert_eq!(bytes.len(), 8 * 8 * 8 * 2 * 4);
    }

    #[test]
    fn truncated_file_is_detected() {
        let base = tmp("truncated");
        let data = vec![Complex64::new(1.0, 2.0); 64];
        write_complex(&base, &[8, 8], &data, &[]).unwrap();
        let cfl = with_ext(&base, ".cfl");
        let bytes = fs::read(&cfl).unwrap();
        fs::write(&cfl, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_complex(&base).is_err());
    }

    #[test]
    fn garbled_header_is_detected() {
        let base = tmp("garbled");
        fs::write(with_ext(&base, ".hdr"), "Dimensions\n8 8\n").unwrap();
        fs::write(with_ext(&base, ".cfl"), [0u8; 8]).unwrap();
        assert!(read_complex(&base).is_err());
    }

    #[test]
    fn volume_round_trip_preserves_spacing() {
        let mut vol = ComplexVolume::zeros([8, 8, 8]).unwrap();
        vol.spacing_mm = [0.75, 0.75, 1.5];
        vol.data[13] = Complex64::new(1.0, -0.5);
        let base = tmp("volume");
        write_volume(&base, &vol).unwrap();
        let back = read_volume(&base).unwrap();
        assert_eq!(back.spacing_mm, vol.spacing_mm);
        assert_eq!(back.data[13], vol.data[13]);
    }
}
