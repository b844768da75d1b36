//! Unfolding, folding, mode products and Tucker reconstruction on a small
//! random tensor, each compared against a direct loop.

use dynrecon::tensor::{fold, mode_product, tucker_reconstruct, unfold, DenseTensor, ModeMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).expect("valid shape")
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ModeMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModeMatrix::new(rows, cols, data).expect("valid shape")
}

fn main() -> dynrecon::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [4, 3, 5];
    let x = random(&shape, &mut rng);

    for mode in 0..3 {
        let m = unfold(&x, mode)?;
        let back = fold(&m, mode, &shape)?;
        println!(
            "mode {mode}: unfolding is {}x{}, fold(unfold) error {:.1e}",
            m.rows(),
            m.cols(),
            back.max_abs_diff(&x)
        );
    }

    // mode-1 product against the defining sum
    let a = random_matrix(6, 3, &mut rng);
    let y = mode_product(&x, &a, 1)?;
    let direct = DenseTensor::from_fn(&[4, 6, 5], |i| (0..3).map(|j| a.get(i[1], j) * x.get(&[i[0], j, i[2]])).sum())?;
    println!("mode product {:?} -> {:?}, error {:.1e}", shape, y.shape(), y.max_abs_diff(&direct));

    let core = random(&[2, 2, 2], &mut rng);
    let factors: Vec<ModeMatrix> = shape.iter().map(|&n| random_matrix(n, 2, &mut rng)).collect();
    let t = tucker_reconstruct(&core, &factors)?;
    let direct = DenseTensor::from_fn(&shape, |i| {
        let mut s = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    s += core.get(&[a, b, c]) * factors[0].get(i[0], a) * factors[1].get(i[1], b) * factors[2].get(i[2], c);
                }
            }
        }
        s
    })?;
    println!("tucker reconstruction {:?}, error {:.1e}", t.shape(), t.max_abs_diff(&direct));
    Ok(())
}
