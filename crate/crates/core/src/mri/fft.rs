//! Centered, orthonormal 2-D FFT over channel-split complex data.
//!
//! Complex arrays are stored as two real blocks (all real parts, then all
//! imaginary parts), matching a trailing real/imag mode in mode-0-fastest
//! storage. Each "slab" is one `nx x ny` image with `x` fastest.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Transforms `slabs` complex `nx x ny` images in place. `data` holds the real
/// block followed by the imaginary block, each `nx * ny * slabs` long.
pub fn fft2c_split(data: &mut [f64], nx: usize, ny: usize, slabs: usize, inverse: bool) {
    let plane = nx * ny;
    let half = plane * slabs;
    debug_assert_eq!(data.len(), 2 * half);
    let fx = plan(nx, inverse);
    let fy = plan(ny, inverse);
    let scale = 1.0 / (plane as f64).sqrt();
    let (hx, hy) = (nx / 2, ny / 2);
    let zero = Complex64::new(0.0, 0.0);
    // rows along x, then the transpose with rows along y
    let mut a = vec![zero; plane];
    let mut b = vec![zero; plane];
    let mut scratch = vec![zero; fx.get_inplace_scratch_len().max(fy.get_inplace_scratch_len())];
    let (re_all, im_all) = data.split_at_mut(half);
    for s in 0..slabs {
        let re = &mut re_all[s * plane..(s + 1) * plane];
        let im = &mut im_all[s * plane..(s + 1) * plane];
        for k in 0..ny {
            let row = nx * ((k + hy) % ny);
            for i in 0..nx {
                let p = (i + hx) % nx + row;
                a[i + nx * k] = Complex64::new(re[p], im[p]);
            }
        }
        fx.process_with_scratch(&mut a, &mut scratch[..fx.get_inplace_scratch_len()]);
        for k in 0..ny {
            for i in 0..nx {
                b[k + ny * i] = a[i + nx * k];
            }
        }
        fy.process_with_scratch(&mut b, &mut scratch[..fy.get_inplace_scratch_len()]);
        for m in 0..ny {
            let row = nx * ((m + hy) % ny);
            for j in 0..nx {
                let z = b[m + ny * j];
                let p = (j + hx) % nx + row;
                re[p] = z.re * scale;
                im[p] = z.im * scale;
            }
        }
    }
}

/// Centered orthonormal 2-D DFT of a single complex image given as
/// `Complex64` values (`x` fastest).
pub fn fft2c(img: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    transform_complex(img, nx, ny, false)
}

pub fn ifft2c(img: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    transform_complex(img, nx, ny, true)
}

fn transform_complex(img: &[Complex64], nx: usize, ny: usize, inverse: bool) -> Vec<Complex64> {
    let mut split: Vec<f64> = img.iter().map(|z| z.re).chain(img.iter().map(|z| z.im)).collect();
    fft2c_split(&mut split, nx, ny, 1, inverse);
    let (re, im) = split.split_at(nx * ny);
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}
