//! Multi-coil Cartesian MRI forward model, sampling masks and image metrics.

pub mod encode;
pub mod fft;
pub mod mask;
pub mod metrics;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

pub use encode::{adjoint_encode, forward_encode};
pub use mask::{make_mask, make_pseudo_radial_mask, make_pseudo_spiral_mask, make_vds_mask, MaskKind, SamplingMask};
pub use metrics::{psnr, rmse, ssim, Metrics};

fn expect_shape(t: &DenseTensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank || t.shape()[rank - 1] != 2 {
        return Err(Error::invalid(format!(
            "{what} must have {rank} modes with a trailing real/imag mode, got {:?}",
            t.shape()
        )));
    }
    if !t.is_finite() {
        return Err(Error::invalid(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Complex image series `(nx, ny, nt)` stored as a real `(nx, ny, nt, 2)` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImageSeries {
    data: DenseTensor,
}

impl ComplexImageSeries {
    pub fn zeros(nx: usize, ny: usize, nt: usize) -> Result<Self> {
        Ok(Self {
            data: DenseTensor::zeros(&[nx, ny, nt, 2])?,
        })
    }

    pub fn from_tensor(data: DenseTensor) -> Result<Self> {
        expect_shape(&data, 4, "image series")?;
        Ok(Self { data })
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        nt: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Result<Self> {
        let mut out = Self::zeros(nx, ny, nt)?;
        for t in 0..nt {
            for y in 0..ny {
                for x in 0..nx {
                    out.set(x, y, t, f(x, y, t));
                }
            }
        }
        if !out.data.is_finite() {
            return Err(Error::invalid("image series contains non-finite values"));
        }
        Ok(out)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    fn half(&self) -> usize {
        self.data.len() / 2
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> Complex64 {
        let (nx, ny, _) = self.dims();
        let i = x + nx * (y + ny * t);
        Complex64::new(self.data.data()[i], self.data.data()[i + self.half()])
    }

    pub fn set(&mut self, x: usize, y: usize, t: usize, v: Complex64) {
        let (nx, ny, _) = self.dims();
        let i = x + nx * (y + ny * t);
        let h = self.half();
        let d = self.data.data_mut();
        d[i] = v.re;
        d[i + h] = v.im;
    }

    pub fn frame(&self, t: usize) -> Vec<Complex64> {
        let (nx, ny, _) = self.dims();
        (0..nx * ny)
            .map(|i| self.get(i % nx, i / nx, t))
            .collect()
    }

    pub fn set_frame(&mut self, t: usize, frame: &[Complex64]) {
        let (nx, _, _) = self.dims();
        for (i, v) in frame.iter().enumerate() {
            self.set(i % nx, i / nx, t, *v);
        }
    }

    /// Magnitudes in storage order `(x, y, t)`.
    pub fn magnitude(&self) -> Vec<f64> {
        let h = self.half();
        let d = self.data.data();
        (0..h).map(|i| d[i].hypot(d[i + h])).collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().into_iter().fold(0.0, f64::max)
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.data
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.data
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self.data.scaled(alpha),
        }
    }
}

/// Multi-coil k-space `(nx, ny, nt, ns)` stored as `(nx, ny, nt, ns, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    data: DenseTensor,
}

impl MultiCoilKSpace {
    pub fn from_tensor(data: DenseTensor) -> Result<Self> {
        expect_shape(&data, 5, "k-space")?;
        Ok(Self { data })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.data
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.data
    }

    /// Zeroes every entry outside the mask.
    pub fn masked(&self, mask: &SamplingMask) -> Result<Self> {
        let (nx, ny, nt, ns) = self.dims();
        if mask.dims() != (nx, ny, nt) {
            return Err(Error::invalid(format!(
                "mask {:?} does not match k-space {:?}",
                mask.dims(),
                self.dims()
            )));
        }
        let mut data = self.data.clone();
        encode::apply_mask(data.data_mut(), mask.pattern().data(), ns);
        Ok(Self { data })
    }
}

/// Time-invariant coil maps `(nx, ny, ns)` stored as `(nx, ny, ns, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    maps: DenseTensor,
}

impl CoilSensitivities {
    pub fn from_tensor(maps: DenseTensor) -> Result<Self> {
        expect_shape(&maps, 4, "coil sensitivities")?;
        Ok(Self { maps })
    }

    /// A single coil with unit sensitivity everywhere.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        let mut maps = DenseTensor::zeros(&[nx, ny, 1, 2])?;
        maps.data_mut()[..nx * ny].fill(1.0);
        Ok(Self { maps })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.maps.shape();
        (s[0], s[1], s[2])
    }

    pub fn coils(&self) -> usize {
        self.dims().2
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> Complex64 {
        let (nx, ny, _) = self.dims();
        let i = x + nx * (y + ny * c);
        let h = self.maps.len() / 2;
        Complex64::new(self.maps.data()[i], self.maps.data()[i + h])
    }

    /// `sum_c |s_c|^2` per pixel, `x` fastest.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let (nx, ny, ns) = self.dims();
        (0..nx * ny)
            .map(|i| (0..ns).map(|c| self.get(i % nx, i / nx, c).norm_sqr()).sum())
            .collect()
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.maps
    }

    pub fn into_tensor(self) -> DenseTensor {
        self.maps
    }
}

/// Casorati matrix: column `t` is frame `t` flattened with `x` fastest.
pub fn casorati(x: &ComplexImageSeries) -> DMatrix<Complex64> {
    let (nx, ny, nt) = x.dims();
    DMatrix::from_fn(nx * ny, nt, |i, t| x.get(i % nx, i / nx, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn casorati_static_series_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frame: Vec<Complex64> = (0..30)
            .map(|_| Complex64::new(rng.random(), rng.random()))
            .collect();
        let x = ComplexImageSeries::from_fn(5, 6, 4, |i, j, _| frame[i + 5 * j]).unwrap();
        let sv = casorati(&x).singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(s[1] / s[0] < 1e-12);
    }

    #[test]
    fn casorati_single_frame_is_single_column() {
        let x = ComplexImageSeries::from_fn(3, 2, 1, |i, j, _| Complex64::new(i as f64, j as f64))
            .unwrap();
        let c = casorati(&x);
        assert_eq!(c.shape(), (6, 1));
        assert_eq!(c[(4, 0)], Complex64::new(1.0, 1.0));
    }

    #[test]
    fn casorati_columns_are_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = ComplexImageSeries::from_fn(4, 3, 5, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap();
        let c = casorati(&x);
        for t in 0..5 {
            let f = x.frame(t);
            for (i, v) in f.iter().enumerate() {
                assert_eq!(c[(i, t)], *v);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ComplexImageSeries::from_tensor(DenseTensor::zeros(&[2, 2, 2, 3]).unwrap()).is_err());
        assert!(MultiCoilKSpace::from_tensor(DenseTensor::zeros(&[2, 2, 2, 2]).unwrap()).is_err());
        let bad = DenseTensor::from_vec(&[1, 1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(ComplexImageSeries::from_tensor(bad).is_err());
    }
}
