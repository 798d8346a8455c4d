//! Binary PGM (P5) heatmap dumps, viewable anywhere without image crates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Write one [H, W] map as 8-bit P5, min-max scaled. Returns (min, max) so
/// the caller can record the scale.
pub fn write_pgm(map: &Tensor, path: &Path) -> Result<(f64, f64)> {
    let sh = map.shape();
    if sh.len() != 2 {
        return Err(Error::Shape {
            op: "write_pgm",
            detail: format!("expected [H, W], got {:?}", sh),
        });
    }
    let (h, w) = (sh[0], sh[1]);
    let lo = map.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(map.data().iter().map(|&v| (((v - lo) / span) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok((lo, hi))
}

/// Dump every channel of a [K, H, W] stack as `<prefix>_<name>.pgm` plus a
/// sidecar `<prefix>_scale.txt` recording the per-map min/max used.
pub fn dump_stack(stack: &Tensor, names: &[String], dir: &Path, prefix: &str) -> Result<()> {
    let sh = stack.shape().to_vec();
    if sh.len() != 3 || sh[0] != names.len() {
        return Err(Error::Shape {
            op: "dump_stack",
            detail: format!("expected [K={}, H, W], got {:?}", names.len(), sh),
        });
    }
    let (k, h, w) = (sh[0], sh[1], sh[2]);
    fs::create_dir_all(dir)?;
    let mut sidecar = String::from("# map min max (pixel value = (v - min) / (max - min) * 255)\n");
    for c in 0..k {
        let plane = Tensor::new(
            vec![h, w],
            stack.data()[c * h * w..(c + 1) * h * w].to_vec(),
        )?;
        let file = dir.join(format!("{prefix}_{}.pgm", names[c]));
        let (lo, hi) = write_pgm(&plane, &file)?;
        let _ = writeln!(sidecar, "{} {lo:.9e} {hi:.9e}", names[c]);
    }
    fs::write(dir.join(format!("{prefix}_scale.txt")), sidecar)?;
    Ok(())
}
