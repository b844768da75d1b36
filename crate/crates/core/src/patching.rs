//! Key-patch tiling, block matching, and the patch selection operator `P`
//! with its adjoint.
//!
//! Key patches tile the (replication padded) image on a stride-`p` grid;
//! group `l` has key origin `(i p, j p)` with `l = i + gx * j`. Each group
//! holds `K` origins, slot 0 being the key patch itself. A group tensor has
//! shape `(p, p, nt, 2, K)`; a batch stacks all `L` groups along a sixth mode.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::mri::ComplexImageSeries;
use crate::tensor::DenseTensor;

/// Original extents and the rows/columns appended on the high side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadRecord {
    pub nx: usize,
    pub ny: usize,
    pub pad_x: usize,
    pub pad_y: usize,
}

impl PadRecord {
    pub fn padded(&self) -> (usize, usize) {
        (self.nx + self.pad_x, self.ny + self.pad_y)
    }
}

/// Extends the spatial extents up to multiples of `p` by edge replication.
pub fn pad_replicate(x: &ComplexImageSeries, p: usize) -> Result<(ComplexImageSeries, PadRecord)> {
    if p == 0 {
        return Err(Error::invalid("patch size must be >= 1"));
    }
    let (nx, ny, nt) = x.dims();
    let rec = PadRecord {
        nx,
        ny,
        pad_x: nx.div_ceil(p) * p - nx,
        pad_y: ny.div_ceil(p) * p - ny,
    };
    let (px, py) = rec.padded();
    let out = ComplexImageSeries::from_fn(px, py, nt, |i, j, t| x.get(i.min(nx - 1), j.min(ny - 1), t))?;
    Ok((out, rec))
}

/// Drops the padding added by [`pad_replicate`].
pub fn crop(x: &ComplexImageSeries, pad: &PadRecord) -> Result<ComplexImageSeries> {
    let (_, _, nt) = x.dims();
    if (x.dims().0, x.dims().1) != pad.padded() {
        return Err(Error::invalid(format!(
            "image {:?} does not match padded extents {:?}",
            x.dims(),
            pad.padded()
        )));
    }
    ComplexImageSeries::from_fn(pad.nx, pad.ny, nt, |i, j, t| x.get(i, j, t))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchIndexMap {
    pub p: usize,
    pub k: usize,
    pub nt: usize,
    pub pad: PadRecord,
    /// Per group, `K` origins `(x0, y0)` into the padded image.
    pub groups: Vec<Vec<(usize, usize)>>,
}

impl PatchIndexMap {
    pub fn l_count(&self) -> usize {
        self.groups.len()
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        self.pad.padded()
    }

    /// Shape of the stacked batch: `(p, p, nt, 2, K, L)`.
    pub fn batch_shape(&self) -> [usize; 6] {
        [self.p, self.p, self.nt, 2, self.k, self.l_count()]
    }

    pub fn validate(&self) -> Result<()> {
        let (px, py) = self.padded_dims();
        if px % self.p != 0 || py % self.p != 0 {
            return Err(Error::invalid("padded extents not divisible by p"));
        }
        let (gx, gy) = (px / self.p, py / self.p);
        if self.groups.len() != gx * gy {
            return Err(Error::invalid(format!(
                "{} groups, expected {}",
                self.groups.len(),
                gx * gy
            )));
        }
        for (l, g) in self.groups.iter().enumerate() {
            if g.len() != self.k {
                return Err(Error::invalid(format!("group {l} has {} entries, expected {}", g.len(), self.k)));
            }
            if g[0] != ((l % gx) * self.p, (l / gx) * self.p) {
                return Err(Error::invalid(format!("group {l} does not start with its key patch")));
            }
            if let Some(&(x0, y0)) = g.iter().find(|&&(x0, y0)| x0 + self.p > px || y0 + self.p > py) {
                return Err(Error::invalid(format!("origin ({x0}, {y0}) out of bounds in group {l}")));
            }
        }
        Ok(())
    }

    /// Flat indices into the padded `(px, py, nt, 2)` image, in batch storage order.
    pub fn flat_indices(&self) -> Vec<usize> {
        let (px, py) = self.padded_dims();
        let p = self.p;
        let mut out = Vec::with_capacity(self.batch_shape().iter().product());
        for group in &self.groups {
            for &(x0, y0) in group {
                for c in 0..2 {
                    for t in 0..self.nt {
                        for b in 0..p {
                            for a in 0..p {
                                out.push((x0 + a) + px * ((y0 + b) + py * (t + self.nt * c)));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Number of patches covering each padded pixel, `(px, py)` with `x` fastest.
    pub fn contribution_count(&self) -> Vec<usize> {
        let (px, py) = self.padded_dims();
        let mut count = vec![0usize; px * py];
        for group in &self.groups {
            for &(x0, y0) in group {
                for b in 0..self.p {
                    for a in 0..self.p {
                        count[(x0 + a) + px * (y0 + b)] += 1;
                    }
                }
            }
        }
        count
    }
}

fn patch_distance(img: &[f64], px: usize, py: usize, nt: usize, p: usize, a: (usize, usize), b: (usize, usize)) -> f64 {
    let mut d = 0.0;
    for c in 0..2 {
        for t in 0..nt {
            let base = py * (t + nt * c);
            for j in 0..p {
                let ra = a.0 + px * (a.1 + j + base);
                let rb = b.0 + px * (b.1 + j + base);
                for i in 0..p {
                    let diff = img[ra + i] - img[rb + i];
                    d += diff * diff;
                }
            }
        }
    }
    d
}

/// Candidate origins for a key patch, in `(x0, y0)` lexicographic order.
fn candidates(key: (usize, usize), window: usize, px: usize, py: usize, p: usize) -> Vec<(usize, usize)> {
    let xs = key.0.saturating_sub(window)..=(key.0 + window).min(px - p);
    let ys = key.1.saturating_sub(window)..=(key.1 + window).min(py - p);
    xs.flat_map(|x| ys.clone().map(move |y| (x, y))).collect()
}

/// Smallest candidate count over all key patches of a `(px, py)` image.
pub fn min_candidate_count(px: usize, py: usize, p: usize, window: usize) -> usize {
    let axis = |n: usize| {
        (0..n / p)
            .map(|i| candidates((i * p, 0), window, n, p, p).len())
            .min()
            .unwrap_or(0)
    };
    axis(px) * axis(py)
}

/// Selects, for every key patch, itself plus the `k - 1` nearest patches by
/// squared Euclidean distance over all frames and both channels. Candidates
/// lie within `window` pixels (stride 1); ties go to the lexicographically
/// smaller `(x0, y0)`.
pub fn block_match(
    x_init: &ComplexImageSeries,
    pad: &PadRecord,
    p: usize,
    k: usize,
    window: usize,
) -> Result<PatchIndexMap> {
    if k == 0 || p == 0 {
        return Err(Error::invalid("k and p must be >= 1"));
    }
    let (px, py, nt) = x_init.dims();
    if (px, py) != pad.padded() || px % p != 0 || py % p != 0 {
        return Err(Error::invalid(format!(
            "block matching needs the padded image: got {:?}, pad record {:?}, p {p}",
            x_init.dims(),
            pad
        )));
    }
    let img = x_init.tensor().data();
    let (gx, gy) = (px / p, py / p);
    let mut groups = Vec::with_capacity(gx * gy);
    for j in 0..gy {
        for i in 0..gx {
            let key = (i * p, j * p);
            let cands = candidates(key, window, px, py, p);
            if cands.len() < k {
                return Err(Error::invalid(format!(
                    "k = {k} exceeds the {} candidates around key patch {key:?}",
                    cands.len()
                )));
            }
            let mut scored: Vec<(f64, (usize, usize))> = cands
                .into_iter()
                .filter(|&c| c != key)
                .map(|c| (patch_distance(img, px, py, nt, p, key, c), c))
                .collect();
            // stable: equal distances keep lexicographic order
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut group = Vec::with_capacity(k);
            group.push(key);
            group.extend(scored.into_iter().take(k - 1).map(|(_, c)| c));
            groups.push(group);
        }
    }
    Ok(PatchIndexMap {
        p,
        k,
        nt,
        pad: *pad,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalTensorBatch {
    data: DenseTensor,
    map: PatchIndexMap,
}

impl NonlocalTensorBatch {
    pub fn new(data: DenseTensor, map: PatchIndexMap) -> Result<Self> {
        if data.shape() != map.batch_shape() {
            return Err(Error::invalid(format!(
                "batch shape {:?} does not match map {:?}",
                data.shape(),
                map.batch_shape()
            )));
        }
        Ok(Self { data, map })
    }

    pub fn data(&self) -> &DenseTensor {
        &self.data
    }

    pub fn map(&self) -> &PatchIndexMap {
        &self.map
    }

    /// Group `l` as a `(p, p, nt, 2, K)` tensor.
    pub fn group(&self, l: usize) -> DenseTensor {
        let s = self.map.batch_shape();
        let n: usize = s[..5].iter().product();
        DenseTensor::from_vec(&s[..5], self.data.data()[l * n..(l + 1) * n].to_vec())
            .expect("group slice matches shape")
    }
}

/// Operator `P`: extracts every group from the padded image.
pub fn gather_groups(x: &ComplexImageSeries, map: &PatchIndexMap) -> Result<NonlocalTensorBatch> {
    map.validate()?;
    let (px, py, nt) = x.dims();
    if (px, py) != map.padded_dims() || nt != map.nt {
        return Err(Error::invalid(format!(
            "image {:?} does not match the index map",
            x.dims()
        )));
    }
    let img = x.tensor().data();
    let data = map.flat_indices().into_iter().map(|i| img[i]).collect();
    NonlocalTensorBatch::new(DenseTensor::from_vec(&map.batch_shape(), data)?, map.clone())
}

/// Operator `P^T`: sums every patch back into its origin.
pub fn scatter_adjoint(b: &NonlocalTensorBatch) -> Result<ComplexImageSeries> {
    let (px, py) = b.map.padded_dims();
    let mut out = DenseTensor::zeros(&[px, py, b.map.nt, 2])?;
    let o = out.data_mut();
    for (i, v) in b.map.flat_indices().into_iter().zip(b.data.data()) {
        o[i] += v;
    }
    ComplexImageSeries::from_tensor(out)
}

/// Reciprocal contribution counts broadcast over `(px, py, nt, 2)`.
fn inverse_count(map: &PatchIndexMap) -> Result<DenseTensor> {
    let (px, py) = map.padded_dims();
    let count = map.contribution_count();
    if let Some(i) = count.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("pixel {i} is not covered by any patch")));
    }
    let plane: Vec<f64> = count.iter().map(|&c| 1.0 / c as f64).collect();
    DenseTensor::from_fn(&[px, py, map.nt, 2], |ix| plane[ix[0] + px * ix[1]])
}

/// [`scatter_adjoint`] normalized by the per-pixel contribution count.
pub fn assemble_average(b: &NonlocalTensorBatch) -> Result<ComplexImageSeries> {
    let summed = scatter_adjoint(b)?;
    let inv = inverse_count(&b.map)?;
    let data = summed
        .tensor()
        .data()
        .iter()
        .zip(inv.data())
        .map(|(s, w)| s * w)
        .collect();
    ComplexImageSeries::from_tensor(DenseTensor::from_vec(inv.shape(), data)?)
}

/// Precomputed index maps for assembling an image from a batch inside an
/// autodiff graph: scatter-add, count normalization, then crop.
#[derive(Debug, Clone)]
pub struct PatchOperator {
    map: PatchIndexMap,
    batch_indices: Arc<Vec<usize>>,
    group_major_indices: Arc<Vec<usize>>,
    crop_indices: Arc<Vec<usize>>,
    inv_count: DenseTensor,
}

/// Gather indices that transpose a column-major `(inner, outer)` matrix into
/// `(outer, inner)`.
pub fn transpose_indices(inner: usize, outer: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(inner * outer);
    for i in 0..inner {
        for o in 0..outer {
            out.push(i + inner * o);
        }
    }
    out
}

impl PatchOperator {
    pub fn new(map: &PatchIndexMap) -> Result<Self> {
        map.validate()?;
        let (px, py) = map.padded_dims();
        let (nx, ny, nt) = (map.pad.nx, map.pad.ny, map.nt);
        let mut crop_indices = Vec::with_capacity(nx * ny * nt * 2);
        for c in 0..2 {
            for t in 0..nt {
                for y in 0..ny {
                    for x in 0..nx {
                        crop_indices.push(x + px * (y + py * (t + nt * c)));
                    }
                }
            }
        }
        let flat = map.flat_indices();
        let per_group = flat.len() / map.l_count();
        let group_major = transpose_indices(per_group, map.l_count()).into_iter().map(|i| flat[i]).collect();
        Ok(Self {
            map: map.clone(),
            batch_indices: Arc::new(flat),
            group_major_indices: Arc::new(group_major),
            crop_indices: Arc::new(crop_indices),
            inv_count: inverse_count(map)?,
        })
    }

    pub fn map(&self) -> &PatchIndexMap {
        &self.map
    }

    /// Image node `(nx, ny, nt, 2)` from a batch node `(p, p, nt, 2, K, L)`.
    pub fn assemble(&self, g: &mut Graph, batch: NodeId) -> Result<NodeId> {
        self.assemble_with(g, batch, &self.map.batch_shape(), self.batch_indices.clone())
    }

    /// Same as [`assemble`](Self::assemble) for a group-major batch
    /// `(L, p, p, nt, 2, K)`.
    pub fn assemble_group_major(&self, g: &mut Graph, batch: NodeId) -> Result<NodeId> {
        let mut shape = self.map.batch_shape();
        shape.rotate_right(1);
        self.assemble_with(g, batch, &shape, self.group_major_indices.clone())
    }

    fn assemble_with(&self, g: &mut Graph, batch: NodeId, shape: &[usize], idx: Arc<Vec<usize>>) -> Result<NodeId> {
        if g.value(batch).shape() != shape {
            return Err(Error::invalid(format!(
                "batch shape {:?}, expected {shape:?}",
                g.value(batch).shape()
            )));
        }
        let (px, py) = self.map.padded_dims();
        let nt = self.map.nt;
        let summed = g.scatter_add(batch, idx, &[px, py, nt, 2])?;
        let w = g.constant(self.inv_count.clone());
        let avg = g.mul(summed, w)?;
        g.gather(avg, self.crop_indices.clone(), &[self.map.pad.nx, self.map.pad.ny, nt, 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(nx: usize, ny: usize, nt: usize, seed: u64) -> ComplexImageSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImageSeries::from_fn(nx, ny, nt, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap()
    }

    #[test]
    fn padding() {
        let x = random_series(4, 6, 2, 1);
        let (same, rec) = pad_replicate(&x, 2).unwrap();
        assert_eq!(same, x);
        assert_eq!((rec.pad_x, rec.pad_y), (0, 0));

        let x = random_series(5, 5, 1, 2);
        let (p, rec) = pad_replicate(&x, 2).unwrap();
        assert_eq!(p.dims(), (6, 6, 1));
        for j in 0..6 {
            for i in 0..6 {
                assert_eq!(p.get(i, j, 0), x.get(i.min(4), j.min(4), 0));
            }
        }
        assert_eq!(crop(&p, &rec).unwrap(), x);
    }

    #[test]
    fn constant_image_tie_break() {
        let x = ComplexImageSeries::from_fn(8, 8, 2, |_, _, _| Complex64::new(0.5, -0.2)).unwrap();
        let (x, rec) = pad_replicate(&x, 2).unwrap();
        let map = block_match(&x, &rec, 2, 4, 1).unwrap();
        // key (2, 2): candidates x0 in 1..=3, y0 in 1..=3, lexicographic
        let l = 1 + 4;
        assert_eq!(map.groups[l], vec![(2, 2), (1, 1), (1, 2), (1, 3)]);
        assert_eq!(map.groups[0], vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        map.validate().unwrap();
    }

    #[test]
    fn planted_duplicate_ranks_second() {
        let mut x = random_series(12, 12, 3, 3);
        let key = (4, 4);
        let dup = (7, 2);
        for t in 0..3 {
            for b in 0..2 {
                for a in 0..2 {
                    let v = x.get(key.0 + a, key.1 + b, t);
                    x.set(dup.0 + a, dup.1 + b, t, v);
                }
            }
        }
        let (x, rec) = pad_replicate(&x, 2).unwrap();
        let map = block_match(&x, &rec, 2, 3, 4).unwrap();
        let l = 2 + 6 * 2;
        assert_eq!(map.groups[l][0], key);
        assert_eq!(map.groups[l][1], dup);
    }

    #[test]
    fn window_zero_single_patch() {
        let x = random_series(6, 4, 2, 4);
        let (x, rec) = pad_replicate(&x, 2).unwrap();
        let map = block_match(&x, &rec, 2, 1, 0).unwrap();
        assert!(map.groups.iter().all(|g| g.len() == 1));
        assert!(block_match(&x, &rec, 2, 2, 0).is_err());
        assert_eq!(min_candidate_count(6, 4, 2, 0), 1);
        assert_eq!(min_candidate_count(64, 64, 2, 10), 11 * 11);
        assert_eq!(min_candidate_count(6, 4, 2, 10), 5 * 3);
        let b = gather_groups(&x, &map).unwrap();
        assert_eq!(scatter_adjoint(&b).unwrap(), x);
        assert_eq!(assemble_average(&b).unwrap(), x);
        for l in 0..map.l_count() {
            let g = b.group(l);
            let (x0, y0) = map.groups[l][0];
            assert_eq!(g.get(&[1, 0, 1, 1, 0]), x.get(x0 + 1, y0, 1).im);
        }
    }

    #[test]
    fn ones_scatter_counts_and_average() {
        let x = random_series(8, 8, 2, 5);
        let (x, rec) = pad_replicate(&x, 2).unwrap();
        let map = block_match(&x, &rec, 2, 3, 2).unwrap();
        let ones = NonlocalTensorBatch::new(DenseTensor::filled(&map.batch_shape(), 1.0).unwrap(), map.clone()).unwrap();
        let s = scatter_adjoint(&ones).unwrap();
        let count = map.contribution_count();
        for j in 0..8 {
            for i in 0..8 {
                assert_eq!(s.get(i, j, 1).re, count[i + 8 * j] as f64);
                assert!(count[i + 8 * j] >= 1);
            }
        }
        // identical values per pixel average back to themselves
        let b = gather_groups(&x, &map).unwrap();
        let avg = assemble_average(&b).unwrap();
        assert!(avg.tensor().max_abs_diff(x.tensor()) < 1e-12);
    }

    #[test]
    fn out_of_bounds_map_rejected() {
        let x = random_series(4, 4, 1, 6);
        let (x, rec) = pad_replicate(&x, 2).unwrap();
        let mut map = block_match(&x, &rec, 2, 2, 2).unwrap();
        map.groups[0][1] = (3, 3);
        assert!(gather_groups(&x, &map).is_err());
    }

    #[test]
    fn graph_assembly_matches_direct() {
        let x = random_series(7, 5, 2, 7);
        let (xp, rec) = pad_replicate(&x, 2).unwrap();
        let map = block_match(&xp, &rec, 2, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = DenseTensor::from_fn(&map.batch_shape(), |_| rng.random_range(-1.0..1.0)).unwrap();
        let direct = crop(&assemble_average(&NonlocalTensorBatch::new(batch.clone(), map.clone()).unwrap()).unwrap(), &rec).unwrap();
        let op = PatchOperator::new(&map).unwrap();
        let mut g = Graph::new();
        let b = g.constant(batch.clone());
        let img = op.assemble(&mut g, b).unwrap();
        assert_eq!(g.value(img), direct.tensor());

        let per_group = batch.len() / map.l_count();
        let perm = transpose_indices(per_group, map.l_count());
        let mut shape = map.batch_shape();
        shape.rotate_right(1);
        let gm = DenseTensor::from_vec(&shape, perm.iter().map(|&i| batch.data()[i]).collect()).unwrap();
        let b = g.constant(gm);
        let img2 = op.assemble_group_major(&mut g, b).unwrap();
        assert!(g.value(img2).max_abs_diff(direct.tensor()) < 1e-14);
        assert!(op.assemble_group_major(&mut g, b).is_ok());
        assert!(op.assemble(&mut g, b).is_err());
    }

    proptest! {
        #[test]
        fn gather_scatter_adjoint(seed in any::<u64>(), k in 1usize..5, window in 0usize..4) {
            let x = random_series(6, 7, 2, seed);
            let (xp, rec) = pad_replicate(&x, 2).unwrap();
            let k = k.min((2 * window.min(2) + 1).pow(2)).max(1);
            let window = if k > 1 { window.max(1) } else { window };
            let map = match block_match(&xp, &rec, 2, k, window) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let px = gather_groups(&xp, &map).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let b = NonlocalTensorBatch::new(
                DenseTensor::from_fn(&map.batch_shape(), |_| rng.random_range(-1.0..1.0)).unwrap(),
                map.clone(),
            ).unwrap();
            let ptb = scatter_adjoint(&b).unwrap();
            let lhs = px.data().dot(b.data());
            let rhs = xp.tensor().dot(ptb.tensor());
            let scale = xp.tensor().norm_sq().sqrt() * b.data().norm_sq().sqrt();
            prop_assert!((lhs - rhs).abs() / scale < 1e-10);

            let avg = assemble_average(&b).unwrap();
            let count = map.contribution_count();
            let (ppx, ppy) = map.padded_dims();
            for t in 0..2 {
                for j in 0..ppy {
                    for i in 0..ppx {
                        let c = count[i + ppx * j] as f64;
                        prop_assert!((avg.get(i, j, t) - ptb.get(i, j, t) / c).norm() < 1e-12);
                    }
                }
            }
        }
    }
}
