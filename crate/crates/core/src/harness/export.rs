//! Graymap views of a reconstruction: frames, temporal profiles through the
//! image center and error maps, plus a metrics table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::io::write_pgm16;
use crate::error::{Error, Result};
use crate::mri::{ComplexImageSeries, Metrics};

/// Files written by [`export_views`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedViews {
    pub frames: Vec<PathBuf>,
    pub xt_profile: PathBuf,
    pub yt_profile: PathBuf,
    pub error_maps: Vec<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    /// Magnitude that maps to the brightest gray level.
    pub scale: f64,
}

/// Frame `t` as row-major `ny x nx` magnitudes.
fn frame_rows(x: &ComplexImageSeries, t: usize) -> Vec<f64> {
    let (nx, ny, _) = x.dims();
    let mut out = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for i in 0..nx {
            out.push(x.get(i, y, t).norm());
        }
    }
    out
}

/// `x`-`t` profile at row `y`: `nx` rows, time along the horizontal axis.
pub fn xt_profile(x: &ComplexImageSeries, y: usize) -> Vec<f64> {
    let (nx, _, nt) = x.dims();
    (0..nx).flat_map(|i| (0..nt).map(move |t| x.get(i, y, t).norm())).collect()
}

/// `y`-`t` profile at column `i`: `ny` rows, time along the horizontal axis.
pub fn yt_profile(x: &ComplexImageSeries, i: usize) -> Vec<f64> {
    let (_, ny, nt) = x.dims();
    (0..ny).flat_map(|y| (0..nt).map(move |t| x.get(i, y, t).norm())).collect()
}

fn single_frame(x: &ComplexImageSeries, t: usize) -> Result<ComplexImageSeries> {
    let (nx, ny, _) = x.dims();
    ComplexImageSeries::from_fn(nx, ny, 1, |i, y, _| x.get(i, y, t))
}

/// Per-frame and whole-series metrics as CSV. Frames whose reference is
/// identically zero are skipped.
pub fn metrics_table(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<String> {
    let mut out = String::from("frame,psnr,ssim,rmse\n");
    for t in 0..x.dims().2 {
        let r = single_frame(reference, t)?;
        if r.max_magnitude() == 0.0 {
            continue;
        }
        let m = Metrics::compute(&single_frame(x, t)?, &r)?;
        let _ = writeln!(out, "{t},{:.6},{:.6},{:.6}", m.psnr, m.ssim, m.rmse);
    }
    let m = Metrics::compute(x, reference)?;
    let _ = writeln!(out, "all,{:.6},{:.6},{:.6}", m.psnr, m.ssim, m.rmse);
    Ok(out)
}

/// Writes 16-bit graymaps of `x` into `dir`, normalized so that the
/// reference maximum (or the maximum of `x` without a reference) is white.
pub fn export_views(x: &ComplexImageSeries, reference: Option<&ComplexImageSeries>, dir: &Path) -> Result<ExportedViews> {
    if !x.tensor().is_finite() {
        return Err(Error::invalid("cannot export a non-finite image"));
    }
    if let Some(r) = reference {
        if r.dims() != x.dims() {
            return Err(Error::invalid(format!("reference {:?} vs image {:?}", r.dims(), x.dims())));
        }
    }
    let (nx, ny, nt) = x.dims();
    let peak = reference.map_or_else(|| x.max_magnitude(), |r| r.max_magnitude());
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let norm = |v: Vec<f64>| v.into_iter().map(|m| m / scale).collect::<Vec<_>>();
    fs::create_dir_all(dir)?;

    let mut frames = Vec::with_capacity(nt);
    for t in 0..nt {
        let path = dir.join(format!("frame_{t:03}.pgm"));
        write_pgm16(&path, nx, ny, &norm(frame_rows(x, t)))?;
        frames.push(path);
    }
    let xt_path = dir.join("xt_profile.pgm");
    write_pgm16(&xt_path, nt, nx, &norm(xt_profile(x, ny / 2)))?;
    let yt_path = dir.join("yt_profile.pgm");
    write_pgm16(&yt_path, nt, ny, &norm(yt_profile(x, nx / 2)))?;

    let mut error_maps = Vec::new();
    let mut metrics_csv = None;
    if let Some(r) = reference {
        for t in 0..nt {
            let err: Vec<f64> = (0..ny)
                .flat_map(|y| (0..nx).map(move |i| (x.get(i, y, t) - r.get(i, y, t)).norm()))
                .collect();
            let path = dir.join(format!("error_{t:03}.pgm"));
            write_pgm16(&path, nx, ny, &norm(err))?;
            error_maps.push(path);
        }
        let path = dir.join("metrics.csv");
        fs::write(&path, metrics_table(x, r)?)?;
        metrics_csv = Some(path);
    }
    Ok(ExportedViews {
        frames,
        xt_profile: xt_path,
        yt_profile: yt_path,
        error_maps,
        metrics_csv,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::io::decode_pgm;
    use crate::harness::phantom::{phantom_image, PhantomSpec};
    use num_complex::Complex64;

    fn read(p: &Path) -> (usize, usize, Vec<u16>) {
        let (w, h, _, px) = decode_pgm(&fs::read(p).unwrap()).unwrap();
        (w, h, px)
    }

    #[test]
    fn identical_images_give_zero_error() {
        let x = phantom_image(&PhantomSpec {
            nx: 16,
            ny: 12,
            nt: 3,
            ..PhantomSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let v = export_views(&x, Some(&x), dir.path()).unwrap();
        assert_eq!(v.frames.len(), 3);
        for e in &v.error_maps {
            assert!(read(e).2.iter().all(|&p| p == 0));
        }
        // the brightest magnitude is exactly 1 after normalization
        let brightest = v.frames.iter().flat_map(|f| read(f).2).max().unwrap();
        assert_eq!(brightest, 65535);
        let (w, h, _) = read(&v.frames[0]);
        assert_eq!((w, h), (16, 12));
        let (w, h, _) = read(&v.xt_profile);
        assert_eq!((w, h), (3, 16));
        let csv = fs::read_to_string(v.metrics_csv.unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("all,") && last.ends_with(",0.000000"), "{last}");
    }

    #[test]
    fn static_series_profile_is_constant_in_time() {
        let x = ComplexImageSeries::from_fn(6, 5, 4, |i, y, _| Complex64::new(i as f64 + y as f64, 1.0)).unwrap();
        let p = yt_profile(&x, 3);
        for row in p.chunks(4) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
        let dir = tempfile::tempdir().unwrap();
        let v = export_views(&x, None, dir.path()).unwrap();
        let (w, h, px) = read(&v.yt_profile);
        assert_eq!((w, h), (4, 5));
        for row in px.chunks(4) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
        assert!(v.metrics_csv.is_none() && v.error_maps.is_empty());
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let x = ComplexImageSeries::zeros(2, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        assert!(matches!(export_views(&x, None, &blocker.join("sub")), Err(Error::Io(_))));
    }
}
