//! Training objective: data consistency, spatiotemporal total variation and
//! the nuclear norm of the Casorati matrix, plus the post-training k-space
//! replacement step.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::mri::encode::{apply_mask, sense_expand};
use crate::mri::fft::fft2c_split;
use crate::mri::{CoilSensitivities, ComplexImageSeries, MultiCoilKSpace, SamplingMask};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    Full,
    /// No low-rank term.
    TvOnly,
    /// No total-variation term.
    LrOnly,
    DcOnly,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Full, Self::TvOnly, Self::LrOnly, Self::DcOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::TvOnly => "tv-only",
            Self::LrOnly => "lr-only",
            Self::DcOnly => "dc-only",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_l: f64,
    pub variant: LossVariant,
    /// Apply TV to the magnitude instead of the real/imag channels.
    pub magnitude_tv: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s: 1e-3,
            lambda_l: 5e-6,
            variant: LossVariant::Full,
            magnitude_tv: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s >= 0.0 && self.lambda_l >= 0.0) || !self.lambda_s.is_finite() || !self.lambda_l.is_finite() {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0, got lambda_s {} lambda_l {}",
                self.lambda_s, self.lambda_l
            )));
        }
        Ok(())
    }

    /// `(lambda_s, lambda_l)` after the variant has zeroed its terms.
    pub fn effective(&self) -> (f64, f64) {
        match self.variant {
            LossVariant::Full => (self.lambda_s, self.lambda_l),
            LossVariant::TvOnly => (self.lambda_s, 0.0),
            LossVariant::LrOnly => (0.0, self.lambda_l),
            LossVariant::DcOnly => (0.0, 0.0),
        }
    }
}

/// Constant data for `||Y - A X||_F^2`: maps, coil-expanded mask and `-Y`.
#[derive(Debug, Clone)]
pub struct DcTerm {
    maps: Arc<DenseTensor>,
    mask: DenseTensor,
    neg_y: DenseTensor,
}

impl DcTerm {
    pub fn new(y: &MultiCoilKSpace, s: &CoilSensitivities, m: &SamplingMask) -> Result<Self> {
        let (nx, ny, nt, ns) = y.dims();
        if s.dims() != (nx, ny, ns) || m.dims() != (nx, ny, nt) {
            return Err(Error::invalid(format!(
                "k-space {:?}, sensitivities {:?}, mask {:?} are inconsistent",
                y.dims(),
                s.dims(),
                m.dims()
            )));
        }
        let mut mask = DenseTensor::filled(&[nx, ny, nt, ns, 2], 1.0)?;
        apply_mask(mask.data_mut(), m.pattern().data(), ns);
        let mut neg_y = y.tensor().scaled(-1.0);
        apply_mask(neg_y.data_mut(), m.pattern().data(), ns);
        Ok(Self {
            maps: Arc::new(s.tensor().clone()),
            mask,
            neg_y,
        })
    }

    pub fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let coil = g.sense_expand(x, self.maps.clone())?;
        let k = g.fft2c(coil)?;
        let m = g.constant(self.mask.clone());
        let k = g.mul(k, m)?;
        let y = g.constant(self.neg_y.clone());
        let r = g.add(k, y)?;
        g.frobenius_sq(r)
    }
}

pub fn dc_loss(g: &mut Graph, x: NodeId, term: &DcTerm) -> Result<NodeId> {
    term.build(g, x)
}

/// Anisotropic l1 TV over x, y and t of the real/imag channels (or of the
/// magnitude when `magnitude` is set).
pub fn tv_loss(g: &mut Graph, x: NodeId, magnitude: bool) -> Result<NodeId> {
    let src = if magnitude { g.magnitude(x)? } else { x };
    let dx = g.abs_diff_sum(src, 0)?;
    let dy = g.abs_diff_sum(src, 1)?;
    let dt = g.abs_diff_sum(src, 2)?;
    let s = g.add(dx, dy)?;
    g.add(s, dt)
}

/// Nuclear norm of the complex Casorati matrix `(nx ny, nt)`.
pub fn lr_loss(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let (nx, ny, nt) = match *g.value(x).shape() {
        [nx, ny, nt, 2] => (nx, ny, nt),
        ref s => return Err(Error::invalid(format!("lr_loss needs (nx, ny, nt, 2), got {s:?}"))),
    };
    let c = g.reshape(x, &[nx * ny, nt, 2])?;
    g.complex_nuclear_norm(c)
}

/// Nodes of one objective evaluation. Terms with zero weight are not built.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub dc: NodeId,
    pub tv: Option<NodeId>,
    pub lr: Option<NodeId>,
}

/// Scalar values of the three terms (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub dc: f64,
    pub tv: f64,
    pub lr: f64,
}

impl LossNodes {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            total: g.scalar(self.total),
            dc: g.scalar(self.dc),
            tv: self.tv.map_or(0.0, |n| g.scalar(n)),
            lr: self.lr.map_or(0.0, |n| g.scalar(n)),
        }
    }
}

/// `dc + lambda_s tv + lambda_l lr`, with the variant's weight pattern.
pub fn total_loss(g: &mut Graph, x: NodeId, dc: &DcTerm, w: &LossWeights) -> Result<LossNodes> {
    w.validate()?;
    let (ls, ll) = w.effective();
    let dc_node = dc.build(g, x)?;
    let mut total = dc_node;
    let mut tv = None;
    let mut lr = None;
    if ls > 0.0 {
        let t = tv_loss(g, x, w.magnitude_tv)?;
        let weighted = g.scale(t, ls)?;
        total = g.add(total, weighted)?;
        tv = Some(t);
    }
    if ll > 0.0 {
        let l = lr_loss(g, x)?;
        let weighted = g.scale(l, ll)?;
        total = g.add(total, weighted)?;
        lr = Some(l);
    }
    Ok(LossNodes {
        total,
        dc: dc_node,
        tv,
        lr,
    })
}

/// Value of `||Y - A X||_F^2` outside of any graph.
pub fn dc_value(x: &ComplexImageSeries, term: &DcTerm) -> Result<f64> {
    let mut g = Graph::new();
    let xn = g.constant(x.tensor().clone());
    let d = term.build(&mut g, xn)?;
    Ok(g.scalar(d))
}

/// Replaces predicted k-space with acquired samples at sampled locations, then
/// recombines coils as `sum_c conj(s_c) ifft2c(k_c) / sum_c |s_c|^2`. Pixels
/// with zero total sensitivity keep their input value.
pub fn kspace_replacement(
    x: &ComplexImageSeries,
    y: &MultiCoilKSpace,
    s: &CoilSensitivities,
    m: &SamplingMask,
) -> Result<ComplexImageSeries> {
    let (nx, ny, nt) = x.dims();
    let ns = s.coils();
    if y.dims() != (nx, ny, nt, ns) || s.dims() != (nx, ny, ns) || m.dims() != (nx, ny, nt) {
        return Err(Error::invalid(format!(
            "image {:?}, k-space {:?}, sensitivities {:?}, mask {:?} are inconsistent",
            x.dims(),
            y.dims(),
            s.dims(),
            m.dims()
        )));
    }
    let mut k = sense_expand(x.tensor().data(), s.tensor().data(), nx, ny, nt, ns);
    fft2c_split(&mut k, nx, ny, nt * ns, false);
    let pattern = m.pattern().data();
    let n = pattern.len();
    let half = n * ns;
    let yd = y.tensor().data();
    for ch in 0..2 {
        for c in 0..ns {
            let o = ch * half + c * n;
            for (i, &p) in pattern.iter().enumerate() {
                if p != 0.0 {
                    k[o + i] = yd[o + i];
                }
            }
        }
    }
    fft2c_split(&mut k, nx, ny, nt * ns, true);

    let plane = nx * ny;
    let sos = s.sum_of_squares();
    let mut out = x.clone();
    for t in 0..nt {
        for (p, &w) in sos.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mut acc = num_complex::Complex64::new(0.0, 0.0);
            for c in 0..ns {
                let i = (t + nt * c) * plane + p;
                let kc = num_complex::Complex64::new(k[i], k[half + i]);
                acc += s.get(p % nx, p / nx, c).conj() * kc;
            }
            out.set(p % nx, p / nx, t, acc / sos[p]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, ParamGroup, ParamStore};
    use crate::mri::{casorati, forward_encode, make_vds_mask};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(nx: usize, ny: usize, nt: usize, seed: u64) -> ComplexImageSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImageSeries::from_fn(nx, ny, nt, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap()
    }

    /// Random coil maps normalized to `sum_c |s_c|^2 = 1`.
    fn coils(nx: usize, ny: usize, ns: usize, seed: u64) -> CoilSensitivities {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Complex64> = (0..nx * ny * ns)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let plane = nx * ny;
        let t = DenseTensor::from_fn(&[nx, ny, ns, 2], |i| {
            let p = i[0] + nx * i[1];
            let norm: f64 = (0..ns).map(|c| raw[p + plane * c].norm_sqr()).sum::<f64>().sqrt();
            let z = raw[p + plane * i[2]] / norm;
            if i[3] == 0 {
                z.re
            } else {
                z.im
            }
        })
        .unwrap();
        CoilSensitivities::from_tensor(t).unwrap()
    }

    struct Toy {
        s: CoilSensitivities,
        m: SamplingMask,
        y: MultiCoilKSpace,
        term: DcTerm,
    }

    fn toy(nx: usize, ny: usize, nt: usize, ns: usize, seed: u64) -> Toy {
        let s = coils(nx, ny, ns, seed);
        let m = make_vds_mask(nx, ny, nt, 2.0, 2, seed).unwrap();
        let truth = random_series(nx, ny, nt, seed + 1);
        let y = forward_encode(&truth, &s, &m).unwrap();
        let term = DcTerm::new(&y, &s, &m).unwrap();
        Toy { s, m, y, term }
    }

    fn eval(x: &ComplexImageSeries, f: impl Fn(&mut Graph, NodeId) -> Result<NodeId>) -> f64 {
        let mut g = Graph::new();
        let n = g.constant(x.tensor().clone());
        let out = f(&mut g, n).unwrap();
        g.scalar(out)
    }

    #[test]
    fn variant_weight_patterns() {
        let w = LossWeights::default();
        let with = |variant| LossWeights { variant, ..w }.effective();
        assert_eq!(with(LossVariant::Full), (1e-3, 5e-6));
        assert_eq!(with(LossVariant::TvOnly), (1e-3, 0.0));
        assert_eq!(with(LossVariant::LrOnly), (0.0, 5e-6));
        assert_eq!(with(LossVariant::DcOnly), (0.0, 0.0));
        for v in LossVariant::ALL {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
        }
        assert!("both".parse::<LossVariant>().is_err());
        assert!(LossWeights { lambda_s: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn dc_cases() {
        let t = toy(6, 6, 3, 2, 1);
        let truth = random_series(6, 6, 3, 2);
        assert!(eval(&truth, |g, x| dc_loss(g, x, &t.term)) < 1e-24);

        // y = 0 -> ||A x||^2
        let zero = MultiCoilKSpace::from_tensor(DenseTensor::zeros(&[6, 6, 3, 2, 2]).unwrap()).unwrap();
        let z = DcTerm::new(&zero, &t.s, &t.m).unwrap();
        let x = random_series(6, 6, 3, 3);
        let ax = forward_encode(&x, &t.s, &t.m).unwrap();
        assert!((eval(&x, |g, n| dc_loss(g, n, &z)) - ax.tensor().norm_sq()).abs() < 1e-10);

        // brute-force residual sum
        let brute: f64 = ax.tensor().data().iter().zip(t.y.tensor().data()).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((eval(&x, |g, n| dc_loss(g, n, &t.term)) - brute).abs() < 1e-10 * brute);
    }

    #[test]
    fn tv_cases() {
        let c = ComplexImageSeries::from_fn(4, 3, 2, |_, _, _| Complex64::new(0.7, -0.1)).unwrap();
        assert_eq!(eval(&c, |g, x| tv_loss(g, x, false)), 0.0);
        let ramp = ComplexImageSeries::from_fn(4, 1, 1, |x, _, _| Complex64::new(x as f64, 0.0)).unwrap();
        assert_eq!(eval(&ramp, |g, x| tv_loss(g, x, false)), 3.0);

        let x = random_series(4, 5, 3, 4);
        let mut brute = 0.0;
        for t in 0..3 {
            for j in 0..5 {
                for i in 0..4 {
                    let v = x.get(i, j, t);
                    let mut add = |w: Complex64| brute += (w.re - v.re).abs() + (w.im - v.im).abs();
                    if i + 1 < 4 {
                        add(x.get(i + 1, j, t));
                    }
                    if j + 1 < 5 {
                        add(x.get(i, j + 1, t));
                    }
                    if t + 1 < 3 {
                        add(x.get(i, j, t + 1));
                    }
                }
            }
        }
        assert!((eval(&x, |g, n| tv_loss(g, n, false)) - brute).abs() < 1e-12);
        assert!(eval(&x, |g, n| tv_loss(g, n, true)) > 0.0);
    }

    #[test]
    fn lr_cases() {
        let f = random_series(5, 4, 1, 5);
        let stat = ComplexImageSeries::from_fn(5, 4, 6, |x, y, _| f.get(x, y, 0)).unwrap();
        let expect = 6f64.sqrt() * f.tensor().norm_sq().sqrt();
        assert!((eval(&stat, lr_loss) - expect).abs() < 1e-10 * expect);
        assert_eq!(eval(&ComplexImageSeries::zeros(3, 3, 2).unwrap(), lr_loss), 0.0);

        let x = random_series(4, 3, 3, 6);
        let oracle: f64 = casorati(&x).svd(false, false).singular_values.iter().sum();
        assert!((eval(&x, lr_loss) - oracle).abs() < 1e-10);
    }

    #[test]
    fn total_recomposition() {
        let t = toy(6, 6, 3, 2, 7);
        let x = random_series(6, 6, 3, 50);
        let w = LossWeights::default();
        let total = |w: LossWeights| eval(&x, |g, n| Ok(total_loss(g, n, &t.term, &w)?.total));
        let dc = eval(&x, |g, n| dc_loss(g, n, &t.term));
        let tv = eval(&x, |g, n| tv_loss(g, n, false));
        let lr = eval(&x, lr_loss);
        assert!((total(w) - (dc + 1e-3 * tv + 5e-6 * lr)).abs() < 1e-12 * dc);
        assert_eq!(total(LossWeights { variant: LossVariant::DcOnly, ..w }), dc);
        assert_eq!(total(LossWeights { lambda_s: 0.0, lambda_l: 0.0, ..w }), dc);
        // monotone in each weight
        assert!(total(LossWeights { lambda_s: 1.0, ..w }) >= total(w));
        assert!(total(LossWeights { lambda_l: 1.0, ..w }) >= total(w));
    }

    #[test]
    fn total_gradient_all_variants() {
        let t = toy(8, 8, 3, 2, 9);
        let mut p = ParamStore::new();
        p.push("x", ParamGroup::Core, random_series(8, 8, 3, 10).into_tensor());
        for variant in LossVariant::ALL {
            let w = LossWeights {
                lambda_s: 0.1,
                lambda_l: 0.1,
                variant,
                magnitude_tv: false,
            };
            let r = check_gradients(&p, |g, l| Ok(total_loss(g, l[0], &t.term, &w)?.total), 1e-6, 60, 1e-6, 3).unwrap();
            assert!(r.max_rel_error < 1e-4, "{variant}: {r:?}");
        }
    }

    #[test]
    fn replacement_properties() {
        let t = toy(8, 8, 3, 3, 11);
        let x = random_series(8, 8, 3, 40);
        let after = kspace_replacement(&x, &t.y, &t.s, &t.m).unwrap();
        let (before, now) = (dc_value(&x, &t.term).unwrap(), dc_value(&after, &t.term).unwrap());
        assert!(now <= before, "{now} > {before}");

        // empty mask leaves x unchanged (up to the round trip)
        let empty = SamplingMask::from_pattern(DenseTensor::zeros(&[8, 8, 3]).unwrap(), 1.0, t.m.kind()).unwrap();
        let same = kspace_replacement(&x, &t.y, &t.s, &empty).unwrap();
        assert!(same.tensor().max_abs_diff(x.tensor()) < 1e-12);

        // full mask: coil projection reproduces y exactly
        let full = SamplingMask::full(8, 8, 3);
        let truth = random_series(8, 8, 3, 13);
        let y = forward_encode(&truth, &t.s, &full).unwrap();
        let rec = kspace_replacement(&x, &y, &t.s, &full).unwrap();
        let again = forward_encode(&rec, &t.s, &full).unwrap();
        assert!(again.tensor().max_abs_diff(y.tensor()) < 1e-12);

        // zero-sensitivity pixels pass through
        let mut maps = t.s.tensor().clone();
        for c in 0..3 {
            for ch in 0..2 {
                maps.set(&[0, 0, c, ch], 0.0);
            }
        }
        let s0 = CoilSensitivities::from_tensor(maps).unwrap();
        let out = kspace_replacement(&x, &t.y, &s0, &t.m).unwrap();
        assert_eq!(out.get(0, 0, 1), x.get(0, 0, 1));
    }
}
