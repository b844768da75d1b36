//! Encoding operator `A = M F S` and its adjoint.
//!
//! The raw kernels work on channel-split buffers so the autodiff engine can
//! reuse them for its sensitivity and FFT nodes.

use super::fft::fft2c_split;
use super::{CoilSensitivities, ComplexImageSeries, MultiCoilKSpace, SamplingMask};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// `(nx, ny, nt, 2)` image times `(nx, ny, ns, 2)` maps into `(nx, ny, nt, ns, 2)`.
pub(crate) fn sense_expand(
    x: &[f64],
    maps: &[f64],
    nx: usize,
    ny: usize,
    nt: usize,
    ns: usize,
) -> Vec<f64> {
    let plane = nx * ny;
    let xh = plane * nt;
    let sh = plane * ns;
    let oh = plane * nt * ns;
    let mut out = vec![0.0; 2 * oh];
    for c in 0..ns {
        let (sr, si) = (&maps[c * plane..(c + 1) * plane], &maps[sh + c * plane..sh + (c + 1) * plane]);
        for t in 0..nt {
            let (xr, xi) = (&x[t * plane..(t + 1) * plane], &x[xh + t * plane..xh + (t + 1) * plane]);
            let o = (t + nt * c) * plane;
            for p in 0..plane {
                out[o + p] = sr[p] * xr[p] - si[p] * xi[p];
                out[oh + o + p] = sr[p] * xi[p] + si[p] * xr[p];
            }
        }
    }
    out
}

/// Adjoint of [`sense_expand`]: `sum_c conj(s_c) * k_c`.
pub(crate) fn sense_combine(
    k: &[f64],
    maps: &[f64],
    nx: usize,
    ny: usize,
    nt: usize,
    ns: usize,
) -> Vec<f64> {
    let plane = nx * ny;
    let xh = plane * nt;
    let sh = plane * ns;
    let kh = plane * nt * ns;
    let mut out = vec![0.0; 2 * xh];
    // Coil order is fixed so the accumulation is deterministic.
    for c in 0..ns {
        let (sr, si) = (&maps[c * plane..(c + 1) * plane], &maps[sh + c * plane..sh + (c + 1) * plane]);
        for t in 0..nt {
            let o = (t + nt * c) * plane;
            for p in 0..plane {
                let (kr, ki) = (k[o + p], k[kh + o + p]);
                out[t * plane + p] += sr[p] * kr + si[p] * ki;
                out[xh + t * plane + p] += sr[p] * ki - si[p] * kr;
            }
        }
    }
    out
}

/// Multiplies a `(nx, ny, nt, ns, 2)` buffer by an `(nx, ny, nt)` pattern.
pub(crate) fn apply_mask(k: &mut [f64], pattern: &[f64], ns: usize) {
    let n = pattern.len();
    let half = n * ns;
    for ch in 0..2 {
        for c in 0..ns {
            let block = &mut k[ch * half + c * n..ch * half + (c + 1) * n];
            for (v, m) in block.iter_mut().zip(pattern) {
                *v *= m;
            }
        }
    }
}

fn check_dims(
    img: (usize, usize, usize),
    s: &CoilSensitivities,
    m: &SamplingMask,
) -> Result<()> {
    let (nx, ny, nt) = img;
    let (sx, sy, _) = s.dims();
    if (sx, sy) != (nx, ny) || m.dims() != (nx, ny, nt) {
        return Err(Error::invalid(format!(
            "inconsistent shapes: image {img:?}, sensitivities {:?}, mask {:?}",
            s.dims(),
            m.dims()
        )));
    }
    Ok(())
}

/// `A x`: per coil and frame, `mask * fft2c(s_c * x_t)`.
pub fn forward_encode(
    x: &ComplexImageSeries,
    s: &CoilSensitivities,
    m: &SamplingMask,
) -> Result<MultiCoilKSpace> {
    let (nx, ny, nt) = x.dims();
    check_dims((nx, ny, nt), s, m)?;
    let ns = s.coils();
    let mut k = sense_expand(x.tensor().data(), s.tensor().data(), nx, ny, nt, ns);
    fft2c_split(&mut k, nx, ny, nt * ns, false);
    apply_mask(&mut k, m.pattern().data(), ns);
    MultiCoilKSpace::from_tensor(DenseTensor::from_vec(&[nx, ny, nt, ns, 2], k)?)
}

/// `A^H y`: `sum_c conj(s_c) * ifft2c(mask * y_c)`.
pub fn adjoint_encode(
    y: &MultiCoilKSpace,
    s: &CoilSensitivities,
    m: &SamplingMask,
) -> Result<ComplexImageSeries> {
    let (nx, ny, nt, ns) = y.dims();
    check_dims((nx, ny, nt), s, m)?;
    if s.coils() != ns {
        return Err(Error::invalid(format!(
            "k-space has {ns} coils but sensitivities have {}",
            s.coils()
        )));
    }
    let mut k = y.tensor().data().to_vec();
    apply_mask(&mut k, m.pattern().data(), ns);
    fft2c_split(&mut k, nx, ny, nt * ns, true);
    let x = sense_combine(&k, s.tensor().data(), nx, ny, nt, ns);
    ComplexImageSeries::from_tensor(DenseTensor::from_vec(&[nx, ny, nt, 2], x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mri::fft::fft2c;
    use crate::mri::MaskKind;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(nx: usize, ny: usize, nt: usize, rng: &mut ChaCha8Rng) -> ComplexImageSeries {
        ComplexImageSeries::from_fn(nx, ny, nt, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap()
    }

    fn random_maps(nx: usize, ny: usize, ns: usize, rng: &mut ChaCha8Rng) -> CoilSensitivities {
        let t = DenseTensor::from_fn(&[nx, ny, ns, 2], |_| rng.random_range(-1.0..1.0)).unwrap();
        CoilSensitivities::from_tensor(t).unwrap()
    }

    fn random_mask(nx: usize, ny: usize, nt: usize, rng: &mut ChaCha8Rng) -> SamplingMask {
        let t = DenseTensor::from_fn(&[nx, ny, nt], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
            .unwrap();
        SamplingMask::from_pattern(t, 2.5, MaskKind::VariableDensity).unwrap()
    }

    fn random_kspace(nx: usize, ny: usize, nt: usize, ns: usize, rng: &mut ChaCha8Rng) -> MultiCoilKSpace {
        let t = DenseTensor::from_fn(&[nx, ny, nt, ns, 2], |_| rng.random_range(-1.0..1.0)).unwrap();
        MultiCoilKSpace::from_tensor(t).unwrap()
    }

    #[test]
    fn full_mask_unit_coil_is_plain_fft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_series(6, 4, 3, &mut rng);
        let s = CoilSensitivities::unit(6, 4).unwrap();
        let m = SamplingMask::full(6, 4, 3);
        let k = forward_encode(&x, &s, &m).unwrap();
        for t in 0..3 {
            let expect = fft2c(&x.frame(t), 6, 4);
            for (i, e) in expect.iter().enumerate() {
                let idx = [i % 6, i / 6, t, 0];
                let re = k.tensor().get(&[idx[0], idx[1], t, 0, 0]);
                let im = k.tensor().get(&[idx[0], idx[1], t, 0, 1]);
                assert!((re - e.re).abs() < 1e-12 && (im - e.im).abs() < 1e-12);
            }
        }
        let back = adjoint_encode(&k, &s, &m).unwrap();
        assert!(back.tensor().max_abs_diff(x.tensor()) < 1e-10);
    }

    #[test]
    fn zero_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_maps(4, 4, 2, &mut rng);
        let m = random_mask(4, 4, 2, &mut rng);
        let k = forward_encode(&ComplexImageSeries::zeros(4, 4, 2).unwrap(), &s, &m).unwrap();
        assert!(k.tensor().data().iter().all(|&v| v == 0.0));
        let zero_k = MultiCoilKSpace::from_tensor(DenseTensor::zeros(&[4, 4, 2, 2, 2]).unwrap()).unwrap();
        let x = adjoint_encode(&zero_k, &s, &m).unwrap();
        assert!(x.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjointness_and_mask_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (nx, ny, nt, ns) = (6, 5, 3, 3);
            let x = random_series(nx, ny, nt, &mut rng);
            let y = random_kspace(nx, ny, nt, ns, &mut rng);
            let s = random_maps(nx, ny, ns, &mut rng);
            let m = random_mask(nx, ny, nt, &mut rng);
            let ax = forward_encode(&x, &s, &m).unwrap();
            let ahy = adjoint_encode(&y, &s, &m).unwrap();
            let lhs = ax.tensor().dot(y.tensor());
            let rhs = x.tensor().dot(ahy.tensor());
            let scale = x.tensor().norm_sq().sqrt() * y.tensor().norm_sq().sqrt();
            assert!((lhs - rhs).abs() / scale < 1e-10);
            assert_eq!(ax.masked(&m).unwrap(), ax);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_series(4, 4, 2, &mut rng);
        let s = random_maps(4, 5, 1, &mut rng);
        assert!(forward_encode(&x, &s, &SamplingMask::full(4, 4, 2)).is_err());
    }
}
