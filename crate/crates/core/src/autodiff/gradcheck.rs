//! Central finite-difference checks of [`Graph::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over every sampled coordinate.
    pub max_rel_error: f64,
    /// `(parameter name, max relative error, coordinates checked)`.
    pub per_param: Vec<(String, f64, usize)>,
}

/// Compares analytic gradients against central differences on a random
/// subsample of at most `samples_per_param` coordinates of every parameter.
///
/// `build` receives a fresh graph plus one leaf per parameter (in store
/// order) and returns the scalar loss node. The relative error of a
/// coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F>(
    params: &ParamStore,
    build: F,
    step: f64,
    samples_per_param: usize,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let leaves = store.leaves(&mut g);
        let loss = build(&mut g, &leaves)?;
        Ok(g.scalar(loss))
    };

    let mut g = Graph::new();
    let leaves = params.leaves(&mut g);
    let loss = build(&mut g, &leaves)?;
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::with_capacity(params.len()),
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let n = params.value(i).len();
        let analytic = grads
            .get(*leaf)
            .ok_or_else(|| Error::Internal(format!("no gradient for parameter {i}")))?;
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param).map(|_| rng.random_range(0..n)).collect()
        };
        let mut worst = 0.0_f64;
        for &k in &coords {
            let orig = params.value(i).data()[k];
            work.value_mut(i).data_mut()[k] = orig + step;
            let fp = eval(&work)?;
            work.value_mut(i).data_mut()[k] = orig - step;
            let fm = eval(&work)?;
            work.value_mut(i).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report
            .per_param
            .push((params.get(i).name.clone(), worst, coords.len()));
    }
    Ok(report)
}
