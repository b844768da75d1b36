//! Synthetic dynamic phantom: moving ellipses with a smooth phase, Gaussian
//! coil profiles and complex Gaussian measurement noise.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::{forward_encode, CoilSensitivities, ComplexImageSeries, MultiCoilKSpace, SamplingMask};
use crate::tensor::DenseTensor;

/// Ellipse in normalized coordinates (`[-1, 1]` across each axis).
///
/// Over the cycle `t / nt`, the semi-axes scale by `1 + motion sin(2 pi t / nt + phase)`
/// and the center drifts by `drift` times the same sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
    pub angle: f64,
    /// Added to the image where the ellipse covers a pixel (may be negative).
    pub intensity: f64,
    pub motion: f64,
    pub drift: [f64; 2],
    pub phase: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64, t: usize, nt: usize) -> bool {
        let w = (2.0 * PI * t as f64 / nt as f64 + self.phase).sin();
        let s = 1.0 + self.motion * w;
        let (cx, cy) = (self.cx + self.drift[0] * w, self.cy + self.drift[1] * w);
        let (du, dv) = (u - cx, v - cy);
        let (c, sn) = (self.angle.cos(), self.angle.sin());
        let (p, q) = (c * du + sn * dv, -sn * du + c * dv);
        (p / (self.ax * s)).powi(2) + (q / (self.ay * s)).powi(2) <= 1.0
    }
}

/// A torso with a contracting ventricle, myocardium and static structures.
pub fn cardiac_ellipses() -> Vec<Ellipse> {
    let e = |cx, cy, ax, ay, angle, intensity, motion, drift, phase| Ellipse {
        cx,
        cy,
        ax,
        ay,
        angle,
        intensity,
        motion,
        drift,
        phase,
    };
    vec![
        e(0.0, 0.0, 0.85, 0.68, 0.0, 0.35, 0.0, [0.0, 0.0], 0.0),
        e(-0.42, 0.05, 0.22, 0.38, 0.1, -0.2, 0.0, [0.0, 0.0], 0.0),
        e(0.12, -0.05, 0.34, 0.3, 0.4, 0.3, 0.12, [0.0, 0.02], 0.0),
        e(0.12, -0.05, 0.2, 0.17, 0.4, 0.45, 0.3, [0.0, 0.02], 0.0),
        e(0.45, 0.3, 0.1, 0.1, 0.0, 0.5, 0.0, [0.0, 0.0], 0.0),
        e(-0.2, -0.45, 0.16, 0.07, -0.3, 0.25, 0.15, [0.03, 0.0], PI / 3.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub coils: usize,
    /// Per-component standard deviation of the k-space noise.
    pub noise_std: f64,
    /// Seeds the noise only; the geometry is fixed by `ellipses`.
    pub seed: u64,
    /// Peak phase excursion (radians) of the smooth phase map.
    pub phase_amplitude: f64,
    /// Width of each Gaussian coil profile in normalized units.
    pub coil_width: f64,
    pub ellipses: Vec<Ellipse>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            nt: 8,
            coils: 4,
            noise_std: 0.01,
            seed: 7,
            phase_amplitude: 0.6,
            coil_width: 0.9,
            ellipses: cardiac_ellipses(),
        }
    }
}

impl PhantomSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nt == 0 || self.coils == 0 {
            return Err(Error::Config("phantom extents and coil count must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.coil_width > 0.0) || !self.phase_amplitude.is_finite() {
            return Err(Error::Config("noise_std >= 0, coil_width > 0 and a finite phase are required".into()));
        }
        if self.ellipses.iter().any(|e| !(e.ax > 0.0 && e.ay > 0.0) || e.motion.abs() >= 1.0) {
            return Err(Error::Config("ellipse axes must be > 0 and |motion| < 1".into()));
        }
        Ok(())
    }
}

/// Output of [`generate_phantom`]: truth, coil maps and fully sampled k-space.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub truth: ComplexImageSeries,
    pub sensitivities: CoilSensitivities,
    pub kspace: MultiCoilKSpace,
}

fn normalized(i: usize, n: usize) -> f64 {
    (i as f64 - n as f64 / 2.0) / (n as f64 / 2.0)
}

/// Coil centers on a ring around the field of view, each with a linear phase.
fn coil_maps(nx: usize, ny: usize, ns: usize, width: f64) -> Result<CoilSensitivities> {
    let mut raw = vec![Complex64::new(0.0, 0.0); nx * ny * ns];
    for c in 0..ns {
        let a = 2.0 * PI * c as f64 / ns as f64 + PI / 4.0;
        let (ccx, ccy) = (1.2 * a.cos(), 1.2 * a.sin());
        for y in 0..ny {
            for x in 0..nx {
                let (u, v) = (normalized(x, nx), normalized(y, ny));
                let d2 = (u - ccx).powi(2) + (v - ccy).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = 0.5 * (u * a.sin() - v * a.cos()) + c as f64 * 0.3;
                raw[x + nx * (y + ny * c)] = Complex64::from_polar(mag, phase);
            }
        }
    }
    let plane = nx * ny;
    let maps = DenseTensor::from_fn(&[nx, ny, ns, 2], |i| {
        let p = i[0] + nx * i[1];
        let norm = (0..ns).map(|c| raw[p + plane * c].norm_sqr()).sum::<f64>().sqrt();
        let z = raw[p + plane * i[2]] / norm;
        if i[3] == 0 {
            z.re
        } else {
            z.im
        }
    })?;
    CoilSensitivities::from_tensor(maps)
}

/// Ground-truth series normalized to a peak magnitude of 1.
pub fn phantom_image(spec: &PhantomSpec) -> Result<ComplexImageSeries> {
    let (nx, ny, nt) = (spec.nx, spec.ny, spec.nt);
    let raw = ComplexImageSeries::from_fn(nx, ny, nt, |x, y, t| {
        let (u, v) = (normalized(x, nx), normalized(y, ny));
        let mag: f64 = spec
            .ellipses
            .iter()
            .filter(|e| e.contains(u, v, t, nt))
            .map(|e| e.intensity)
            .sum::<f64>()
            .max(0.0);
        let phase = spec.phase_amplitude * (0.6 * u + 0.4 * v + 0.5 * u * v);
        Complex64::from_polar(mag, phase)
    })?;
    let peak = raw.max_magnitude();
    if peak == 0.0 {
        return Err(Error::Config("phantom has no signal inside the field of view".into()));
    }
    Ok(raw.scaled(1.0 / peak))
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let truth = phantom_image(spec)?;
    let sensitivities = coil_maps(spec.nx, spec.ny, spec.coils, spec.coil_width)?;
    let full = SamplingMask::full(spec.nx, spec.ny, spec.nt);
    let clean = forward_encode(&truth, &sensitivities, &full)?;
    let mut data = clean.into_tensor();
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in data.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Phantom {
        truth,
        sensitivities,
        kspace: MultiCoilKSpace::from_tensor(data)?,
    })
}
