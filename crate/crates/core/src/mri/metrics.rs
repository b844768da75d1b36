//! PSNR / SSIM / RMSE on magnitude images normalized by the reference maximum.

use serde::{Deserialize, Serialize};

use super::ComplexImageSeries;
use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 200.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn compute(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<Self> {
        Ok(Self {
            psnr: psnr(x, reference)?,
            ssim: ssim(x, reference)?,
            rmse: rmse(x, reference)?,
        })
    }
}

/// Normalized magnitudes of both series, `x` fastest then `y` then `t`.
fn normalized(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.dims() != reference.dims() {
        return Err(Error::invalid(format!(
            "shape mismatch {:?} vs {:?}",
            x.dims(),
            reference.dims()
        )));
    }
    let peak = reference.max_magnitude();
    if peak == 0.0 {
        return Err(Error::invalid("reference image is identically zero"));
    }
    let a = x.magnitude().into_iter().map(|v| v / peak).collect();
    let b = reference.magnitude().into_iter().map(|v| v / peak).collect();
    Ok((a, b))
}

pub fn rmse(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<f64> {
    let (a, b) = normalized(x, reference)?;
    let mse = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

pub fn psnr(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<f64> {
    let e = rmse(x, reference)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (1.0 / e).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over valid window positions of one frame.
fn ssim_frame(a: &[f64], b: &[f64], nx: usize, ny: usize) -> f64 {
    let mut win = SSIM_WINDOW.min(nx).min(ny);
    if win.is_multiple_of(2) {
        win -= 1;
    }
    let g = gaussian_window(win);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut n = 0usize;
    for y0 in 0..=ny - win {
        for x0 in 0..=nx - win {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (j, gy) in g.iter().enumerate() {
                for (i, gx) in g.iter().enumerate() {
                    let w = gx * gy;
                    let k = (x0 + i) + nx * (y0 + j);
                    let (p, q) = (a[k], b[k]);
                    ma += w * p;
                    mb += w * q;
                    saa += w * p * p;
                    sbb += w * q * q;
                    sab += w * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    total / n as f64
}

/// Gaussian-windowed SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, data range 1),
/// averaged over frames. The window shrinks to the largest odd size that fits
/// images smaller than 11 pixels.
pub fn ssim(x: &ComplexImageSeries, reference: &ComplexImageSeries) -> Result<f64> {
    let (a, b) = normalized(x, reference)?;
    let (nx, ny, nt) = x.dims();
    let plane = nx * ny;
    let sum: f64 = (0..nt)
        .map(|t| ssim_frame(&a[t * plane..(t + 1) * plane], &b[t * plane..(t + 1) * plane], nx, ny))
        .sum();
    Ok(sum / nt as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn phantom(n: usize) -> ComplexImageSeries {
        ComplexImageSeries::from_fn(n, n, 2, |x, y, t| {
            let r = ((x as f64 - 8.0).powi(2) + (y as f64 - 9.0).powi(2)).sqrt();
            Complex64::new(if r < 5.0 + t as f64 { 1.0 } else { 0.2 }, 0.0)
        })
        .unwrap()
    }

    #[test]
    fn identical_inputs() {
        let r = phantom(20);
        let m = Metrics::compute(&r, &r).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.psnr, PSNR_CAP_DB);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_closed_form() {
        let r = ComplexImageSeries::from_fn(12, 12, 2, |_, _, _| Complex64::new(1.0, 0.0)).unwrap();
        let x = ComplexImageSeries::from_fn(12, 12, 2, |_, _, _| Complex64::new(1.1, 0.0)).unwrap();
        assert!((rmse(&x, &r).unwrap() - 0.1).abs() < 1e-12);
        assert!((psnr(&x, &r).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_drops_with_noise() {
        let r = phantom(20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = ComplexImageSeries::from_fn(20, 20, 2, |x, y, t| {
            r.get(x, y, t) + Complex64::new(rng.random_range(-0.2..0.2), 0.0)
        })
        .unwrap();
        assert!(ssim(&noisy, &r).unwrap() < ssim(&r, &r).unwrap());
    }

    #[test]
    fn errors() {
        let r = phantom(20);
        let small = phantom(10);
        assert!(psnr(&small, &r).is_err());
        let z = ComplexImageSeries::zeros(20, 20, 2).unwrap();
        assert!(rmse(&r, &z).is_err());
    }
}
