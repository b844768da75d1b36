//! Tensor-function models: Tucker cores whose factor matrices are produced by
//! small sine-activated coordinate networks.
//!
//! [`TenfModel`] keeps one core per non-local group, stacked along a trailing
//! group mode, and five factor networks shared by every group. [`GlobalModel`]
//! fits a single four-mode core over the whole `(nx, ny, nt, 2)` image.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::mri::ComplexImageSeries;
use crate::patching::{assemble_average, crop, transpose_indices, NonlocalTensorBatch, PatchIndexMap, PatchOperator};
use crate::tensor::{tucker_reconstruct, DenseTensor, ModeMatrix};

/// Bumped whenever the coordinate convention or parameter layout changes.
pub const CHECKPOINT_VERSION: &str = "tenf-linspace-v1";

/// `n` positions linearly spaced over `[-1, 1]`; a single position sits at 0.
pub fn linspace(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|j| -1.0 + 2.0 * j as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenfConfig {
    pub ranks: [usize; 5],
    pub hidden: usize,
    pub omega: f64,
    pub core_std: f64,
    /// Drop the `1/omega` factor from the output-layer init bound.
    pub strict_paper_init: bool,
}

impl Default for TenfConfig {
    fn default() -> Self {
        Self {
            ranks: [2, 2, 16, 2, 5],
            hidden: 126,
            omega: 30.0,
            core_std: 0.1,
            strict_paper_init: false,
        }
    }
}

/// Read-only copy of one factor network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorNetwork {
    pub w1: DenseTensor,
    pub b1: DenseTensor,
    pub w2: DenseTensor,
    pub b2: DenseTensor,
    pub omega: f64,
}

impl FactorNetwork {
    pub fn out_dim(&self) -> usize {
        self.b2.len()
    }

    /// `w2 sin(omega (w1 v + b1)) + b2` for a scalar coordinate.
    pub fn eval(&self, v: f64) -> Vec<f64> {
        let hidden: Vec<f64> = self
            .w1
            .data()
            .iter()
            .zip(self.b1.data())
            .map(|(w, b)| (self.omega * (b + v * w)).sin())
            .collect();
        let out = self.out_dim();
        let w2 = self.w2.data();
        (0..out)
            .map(|o| {
                hidden
                    .iter()
                    .enumerate()
                    .fold(self.b2.data()[o], |acc, (j, h)| acc + h * w2[o + out * j])
            })
            .collect()
    }

    /// Factor matrix `(n, r)` with row `j` evaluated at `linspace(n)[j]`.
    pub fn factor(&self, n: usize) -> ModeMatrix {
        let rows: Vec<Vec<f64>> = linspace(n).into_iter().map(|v| self.eval(v)).collect();
        ModeMatrix::from_fn(n, self.out_dim(), |i, j| rows[i][j]).expect("factor shape")
    }
}

const NET_PARAMS: usize = 4;

fn push_network(store: &mut ParamStore, idx: usize, rank: usize, cfg: &TenfConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let h = cfg.hidden;
    let mut uniform = |shape: &[usize], bound: f64| DenseTensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
    // first layer: fan-in 1
    let w1 = uniform(&[h, 1], 1.0)?;
    let b1 = uniform(&[h], 1.0)?;
    let mut bound = 6f64.sqrt() / h as f64;
    if !cfg.strict_paper_init {
        bound /= cfg.omega;
    }
    let w2 = uniform(&[rank, h], bound)?;
    let b2 = uniform(&[rank], 1.0 / (h as f64).sqrt())?;
    for (suffix, v) in [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)] {
        store.push(format!("net{idx}.{suffix}"), ParamGroup::Network, v);
    }
    Ok(())
}

fn network_from(store: &ParamStore, first: usize, omega: f64) -> FactorNetwork {
    FactorNetwork {
        w1: store.value(first).clone(),
        b1: store.value(first + 1).clone(),
        w2: store.value(first + 2).clone(),
        b2: store.value(first + 3).clone(),
        omega,
    }
}

/// Factor node `(n, r)` from the four leaves of one network.
fn build_factor(g: &mut Graph, leaves: &[NodeId], n: usize, omega: f64) -> Result<NodeId> {
    let coords = g.constant(DenseTensor::from_vec(&[n, 1], linspace(n))?);
    let h = g.linear(coords, leaves[0], leaves[1])?;
    let h = g.sine(h, omega)?;
    g.linear(h, leaves[2], leaves[3])
}

fn check_ranks(ranks: &[usize], extents: &[usize]) -> Result<()> {
    for (i, (&r, &n)) in ranks.iter().zip(extents).enumerate() {
        if r == 0 || r > n {
            return Err(Error::invalid(format!(
                "rank r{} = {r} must lie in 1..={n} (mode extent)",
                i + 1
            )));
        }
    }
    Ok(())
}

fn gaussian_core(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<DenseTensor> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(format!("core std {std}: {e}")))?;
    DenseTensor::from_fn(shape, |_| normal.sample(rng))
}

/// Anything that renders a complex image series from a parameter store.
pub trait ImageModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Adds the image node `(nx, ny, nt, 2)` to `g`, given one leaf per parameter.
    fn build_image(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId>;
    /// Evaluates the image outside of any graph.
    fn reconstruct(&self) -> Result<ComplexImageSeries>;
}

/// Patch-grouped model. Parameter 0 is the stacked core `(r1..r5, L)`;
/// parameters `1 + 4i .. 5 + 4i` are `w1, b1, w2, b2` of network `i`.
#[derive(Debug, Clone)]
pub struct TenfModel {
    cfg: TenfConfig,
    group_shape: [usize; 5],
    params: ParamStore,
    op: PatchOperator,
    /// Gathers the stacked cores into `(L, r1..r5)`.
    core_perm: Arc<Vec<usize>>,
}

impl TenfModel {
    pub fn init(map: &PatchIndexMap, cfg: &TenfConfig, seed: u64) -> Result<Self> {
        let group_shape = [map.p, map.p, map.nt, 2, map.k];
        check_ranks(&cfg.ranks, &group_shape)?;
        if cfg.hidden == 0 || !(cfg.omega > 0.0) || !(cfg.core_std >= 0.0) {
            return Err(Error::invalid("hidden width, omega and core std must be positive"));
        }
        let op = PatchOperator::new(map)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut core_shape = cfg.ranks.to_vec();
        core_shape.push(map.l_count());
        params.push("cores", ParamGroup::Core, gaussian_core(&core_shape, cfg.core_std, &mut rng)?);
        for (i, &r) in cfg.ranks.iter().enumerate() {
            push_network(&mut params, i, r, cfg, &mut rng)?;
        }
        let core_perm = Arc::new(transpose_indices(cfg.ranks.iter().product(), map.l_count()));
        Ok(Self {
            cfg: cfg.clone(),
            group_shape,
            params,
            op,
            core_perm,
        })
    }

    pub fn config(&self) -> &TenfConfig {
        &self.cfg
    }

    pub fn map(&self) -> &PatchIndexMap {
        self.op.map()
    }

    pub fn group_shape(&self) -> [usize; 5] {
        self.group_shape
    }

    pub fn l_count(&self) -> usize {
        self.op.map().l_count()
    }

    pub fn network(&self, i: usize) -> FactorNetwork {
        network_from(&self.params, 1 + NET_PARAMS * i, self.cfg.omega)
    }

    fn core_len(&self) -> usize {
        self.cfg.ranks.iter().product()
    }

    pub fn core(&self, l: usize) -> DenseTensor {
        let n = self.core_len();
        DenseTensor::from_vec(&self.cfg.ranks, self.params.value(0).data()[l * n..(l + 1) * n].to_vec())
            .expect("core slice")
    }

    pub fn set_core(&mut self, l: usize, core: &DenseTensor) -> Result<()> {
        if core.shape() != self.cfg.ranks || l >= self.l_count() {
            return Err(Error::invalid(format!("core {l} with shape {:?}", core.shape())));
        }
        let n = self.core_len();
        self.params.value_mut(0).data_mut()[l * n..(l + 1) * n].copy_from_slice(core.data());
        Ok(())
    }

    /// Five factor matrices `U(i)` of shape `(n_i, r_i)`, row by row.
    pub fn evaluate_factors(&self) -> Vec<ModeMatrix> {
        (0..5).map(|i| self.network(i).factor(self.group_shape[i])).collect()
    }

    /// Group `l` as `(p, p, nt, 2, K)`.
    pub fn evaluate_group(&self, l: usize, factors: &[ModeMatrix]) -> Result<DenseTensor> {
        tucker_reconstruct(&self.core(l), factors)
    }

    pub fn evaluate_batch(&self) -> Result<NonlocalTensorBatch> {
        let factors = self.evaluate_factors();
        let mut data = Vec::with_capacity(self.group_shape.iter().product::<usize>() * self.l_count());
        for l in 0..self.l_count() {
            data.extend_from_slice(self.evaluate_group(l, &factors)?.data());
        }
        NonlocalTensorBatch::new(DenseTensor::from_vec(&self.map().batch_shape(), data)?, self.map().clone())
    }

    /// Adds the factor nodes for the five networks.
    pub fn build_factors(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<[NodeId; 5]> {
        let mut out = [leaves[0]; 5];
        for (i, slot) in out.iter_mut().enumerate() {
            let first = 1 + NET_PARAMS * i;
            *slot = build_factor(g, &leaves[first..first + NET_PARAMS], self.group_shape[i], self.cfg.omega)?;
        }
        Ok(out)
    }

    /// Batch node `(p, p, nt, 2, K, L)`.
    pub fn build_batch(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
        let gm = self.build_group_major_batch(g, leaves)?;
        let per_group: usize = self.group_shape.iter().product();
        let perm = transpose_indices(self.l_count(), per_group);
        g.gather(gm, Arc::new(perm), &self.map().batch_shape())
    }

    /// Batch node `(L, p, p, nt, 2, K)`. The group index leads so that every
    /// mode product runs over long contiguous fibers.
    pub fn build_group_major_batch(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
        let factors = self.build_factors(g, leaves)?;
        let l = self.l_count();
        let mut shape = vec![l];
        shape.extend_from_slice(&self.cfg.ranks);
        let cores = g.gather(leaves[0], self.core_perm.clone(), &shape)?;
        factors
            .iter()
            .enumerate()
            .try_fold(cores, |t, (mode, &u)| g.mode_product(t, u, mode + 1))
    }
}

impl ImageModel for TenfModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn build_image(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
        let batch = self.build_group_major_batch(g, leaves)?;
        self.op.assemble_group_major(g, batch)
    }

    fn reconstruct(&self) -> Result<ComplexImageSeries> {
        crop(&assemble_average(&self.evaluate_batch()?)?, &self.map().pad)
    }
}

/// Ranks for the global variant: `round(160 n / 256)` spatially, at most 15
/// temporally, 2 on the channel mode, each clipped to its extent.
pub fn global_default_ranks(nx: usize, ny: usize, nt: usize) -> [usize; 4] {
    let scale = |n: usize| ((160.0 * n as f64 / 256.0).round() as usize).clamp(1, n);
    [scale(nx), scale(ny), 15.min(nt), 2]
}

/// Single-core variant over the full image, without patching.
/// Parameter 0 is the core `(r1..r4)`; networks follow as in [`TenfModel`].
#[derive(Debug, Clone)]
pub struct GlobalModel {
    ranks: [usize; 4],
    extents: [usize; 4],
    omega: f64,
    params: ParamStore,
}

impl GlobalModel {
    pub fn init(dims: (usize, usize, usize), ranks: [usize; 4], cfg: &TenfConfig, seed: u64) -> Result<Self> {
        let extents = [dims.0, dims.1, dims.2, 2];
        check_ranks(&ranks, &extents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.push("core", ParamGroup::Core, gaussian_core(&ranks, cfg.core_std, &mut rng)?);
        for (i, &r) in ranks.iter().enumerate() {
            push_network(&mut params, i, r, cfg, &mut rng)?;
        }
        Ok(Self {
            ranks,
            extents,
            omega: cfg.omega,
            params,
        })
    }

    pub fn ranks(&self) -> [usize; 4] {
        self.ranks
    }

    pub fn network(&self, i: usize) -> FactorNetwork {
        network_from(&self.params, 1 + NET_PARAMS * i, self.omega)
    }

    pub fn evaluate_factors(&self) -> Vec<ModeMatrix> {
        (0..4).map(|i| self.network(i).factor(self.extents[i])).collect()
    }
}

impl ImageModel for GlobalModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn build_image(&self, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
        let mut t = leaves[0];
        for mode in 0..4 {
            let first = 1 + NET_PARAMS * mode;
            let u = build_factor(g, &leaves[first..first + NET_PARAMS], self.extents[mode], self.omega)?;
            t = g.mode_product(t, u, mode)?;
        }
        Ok(t)
    }

    fn reconstruct(&self) -> Result<ComplexImageSeries> {
        ComplexImageSeries::from_tensor(tucker_reconstruct(self.params.value(0), &self.evaluate_factors())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    version: String,
    omega: f64,
    entries: Vec<CheckpointEntry>,
}

/// Writes `<stem>.json` (names, shapes, version tag) and `<stem>.bin`
/// (little-endian f64 values in parameter order).
pub fn save_checkpoint(params: &ParamStore, omega: f64, dir: &Path, stem: &str) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION.to_string(),
        omega,
        entries: params
            .iter()
            .map(|p| CheckpointEntry {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    let mut bytes = Vec::with_capacity(params.scalar_count() * 8);
    for p in params.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&bytes)?;
    Ok(())
}

/// Inverse of [`save_checkpoint`]; returns the parameters and `omega`.
pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(ParamStore, f64)> {
    let json = fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let header: CheckpointHeader =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let mut bytes = Vec::new();
    fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut store = ParamStore::new();
    for e in header.entries {
        let n: usize = e.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        if data.len() != n {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("checkpoint truncated in `{}`", e.name),
            )));
        }
        store.push(e.name, e.group, DenseTensor::from_vec(&e.shape, data)?);
    }
    if values.next().is_some() || bytes.len() % 8 != 0 {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok((store, header.omega))
}

impl TenfModel {
    /// Replaces every parameter with a loaded store of identical layout.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        replace_params(&mut self.params, store)
    }
}

impl GlobalModel {
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        replace_params(&mut self.params, store)
    }
}

fn replace_params(current: &mut ParamStore, store: ParamStore) -> Result<()> {
    let same = current.len() == store.len()
        && current
            .iter()
            .zip(store.iter())
            .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    if !same {
        return Err(Error::Format("checkpoint layout does not match the model".into()));
    }
    *current = store;
    Ok(())
}
