//! Forward evaluation for dense one-hidden-layer, convolutional and deep
//! power networks, and the patch-set machinery behind the convolutional one.

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Default cap on the total number of index entries a generated patch set
/// may hold.
pub const PATCH_ENTRY_CAP: usize = 1 << 24;

/// `x ↦ uᵀ σ(Wx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub u: Vec<f64>,
    pub w: Matrix,
    pub sigma: Activation,
}

impl DenseNet {
    pub fn new(u: Vec<f64>, w: Matrix, sigma: Activation) -> Result<Self> {
        if u.len() != w.rows() {
            return Err(Error::Dimension {
                context: "dense net output layer",
                expected: w.rows(),
                found: u.len(),
            });
        }
        Ok(DenseNet { u, w, sigma })
    }

    pub fn width(&self) -> usize {
        self.w.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let pre = self.w.mul_vec(x)?;
        Ok(self.u.iter().zip(&pre).map(|(u, z)| u * self.sigma.eval(*z)).sum())
    }
}

/// Index-list description of convolutional patches. Indices are 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSet {
    d: usize,
    width: usize,
    patches: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn new(d: usize, patches: Vec<Vec<usize>>) -> Result<Self> {
        let width = patches.first().map_or(0, Vec::len);
        for p in &patches {
            if p.len() != width {
                return Err(Error::Dimension {
                    context: "patch width",
                    expected: width,
                    found: p.len(),
                });
            }
            if let Some(&bad) = p.iter().find(|&&i| i >= d) {
                return Err(Error::InvalidParameter(format!(
                    "patch index {bad} out of range for input dimension {d}"
                )));
            }
        }
        Ok(PatchSet { d, width, patches })
    }

    /// Contiguous 1-D patches of `size` coordinates every `stride` steps.
    pub fn strided_1d(d: usize, size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 || size > d {
            return Err(Error::InvalidParameter(format!(
                "need 0 < size <= d and stride > 0 (d={d}, size={size}, stride={stride})"
            )));
        }
        let patches = (0..=(d - size) / stride)
            .map(|j| (j * stride..j * stride + size).collect())
            .collect();
        PatchSet::new(d, patches)
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of patches.
    pub fn n(&self) -> usize {
        self.patches.len()
    }

    /// Patch width, i.e. filter length.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patches(&self) -> &[Vec<usize>] {
        &self.patches
    }

    /// `wᵀφ_j(x)` for every patch `j`.
    pub fn responses(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.patches
            .iter()
            .map(|p| p.iter().zip(w).map(|(&i, wi)| wi * x[i]).sum())
            .collect()
    }
}

/// Pooling `ρ` applied to the vector of patch activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "u", rename_all = "snake_case")]
pub enum Pooling {
    Max,
    Average,
    Linear(Vec<f64>),
}

impl Pooling {
    pub fn apply(&self, values: &[f64]) -> f64 {
        match self {
            Pooling::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Pooling::Average => values.iter().sum::<f64>() / values.len() as f64,
            Pooling::Linear(u) => dot(u, values),
        }
    }
}

/// `x ↦ ρ(σ(wᵀφ_1(x)), …, σ(wᵀφ_n(x)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub w: Vec<f64>,
    pub phi: PatchSet,
    pub sigma: Activation,
    pub rho: Pooling,
}

impl ConvNet {
    pub fn new(w: Vec<f64>, phi: PatchSet, sigma: Activation, rho: Pooling) -> Result<Self> {
        if w.len() != phi.width() {
            return Err(Error::Dimension {
                context: "conv filter",
                expected: phi.width(),
                found: w.len(),
            });
        }
        if let Pooling::Linear(u) = &rho {
            if u.len() != phi.n() {
                return Err(Error::Dimension {
                    context: "linear pooling weights",
                    expected: phi.n(),
                    found: u.len(),
                });
            }
        }
        if phi.n() == 0 {
            return Err(Error::InvalidParameter("patch set is empty".into()));
        }
        Ok(ConvNet { w, phi, sigma, rho })
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.phi.d() {
            return Err(Error::Dimension {
                context: "conv net input",
                expected: self.phi.d(),
                found: x.len(),
            });
        }
        let act: Vec<f64> = self
            .phi
            .responses(&self.w, x)
            .into_iter()
            .map(|z| self.sigma.eval(z))
            .collect();
        Ok(self.rho.apply(&act))
    }
}

/// `f_0 = x`, `f_j = (W^j f_{j−1})^{∘k}`, output `uᵀ f_L`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepPowerNet {
    pub weights: Vec<Matrix>,
    pub u: Vec<f64>,
    pub k: u32,
}

impl DeepPowerNet {
    pub fn new(weights: Vec<Matrix>, u: Vec<f64>, k: u32) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("deep power net needs at least one layer".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("power exponent must be >= 1".into()));
        }
        for pair in weights.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::Dimension {
                    context: "deep power layer chaining",
                    expected: pair[0].rows(),
                    found: pair[1].cols(),
                });
            }
        }
        let last = weights.last().expect("nonempty").rows();
        if u.len() != last {
            return Err(Error::Dimension {
                context: "deep power readout",
                expected: last,
                found: u.len(),
            });
        }
        Ok(DeepPowerNet { weights, u, k })
    }

    /// Hidden representations `f_1, …, f_L`.
    pub fn layers(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.weights.len());
        let mut f = x.to_vec();
        for w in &self.weights {
            f = w.mul_vec(&f)?.into_iter().map(|z| z.powi(self.k as i32)).collect();
            out.push(f.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let layers = self.layers(x)?;
        Ok(dot(&self.u, layers.last().expect("nonempty")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Network {
    Dense(DenseNet),
    Conv(ConvNet),
    DeepPower(DeepPowerNet),
}

impl Network {
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        match self {
            Network::Dense(n) => n.forward(x),
            Network::Conv(n) => n.forward(x),
            Network::DeepPower(n) => n.forward(x),
        }
    }
}

/// The `n×d` matrix whose row `j` places `w` on patch `j`'s coordinates, so
/// that `(Wx)_j = wᵀφ_j(x)`. Repeated indices inside a patch accumulate.
pub fn conform_matrix(phi: &PatchSet, w: &[f64]) -> Result<Matrix> {
    if w.len() != phi.width() {
        return Err(Error::Dimension {
            context: "conform_matrix filter",
            expected: phi.width(),
            found: w.len(),
        });
    }
    let mut m = Matrix::zeros(phi.n(), phi.d());
    for (j, p) in phi.patches().iter().enumerate() {
        for (&i, &wi) in p.iter().zip(w) {
            m.add_at(j, i, wi);
        }
    }
    Ok(m)
}

/// Largest number of patches any single input coordinate belongs to.
pub fn patch_overlap(phi: &PatchSet) -> usize {
    let mut count = vec![0usize; phi.d()];
    for p in phi.patches() {
        let mut seen = p.clone();
        seen.sort_unstable();
        seen.dedup();
        for i in seen {
            count[i] += 1;
        }
    }
    count.into_iter().max().unwrap_or(0)
}

/// A stride-1 grid of patches over a tensor with `channels` trailing slices.
///
/// The tensor has spatial shape `dims` and `channels` channels. Coordinates
/// are flattened row-major with the channel axis slowest:
/// `ℓ·Π dims + Σ_t j_t·Π_{s>t} dims_s` (0-based). A patch starts at every
/// base index `b` with `b_t + patch_dims_t ≤ dims_t`, covers the box
/// `b + Δ`, `Δ_t < patch_dims_t`, across all channels, and lists its
/// coordinates in the same channel-slowest row-major order. Base indices are
/// enumerated row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPatchGrid {
    pub dims: Vec<usize>,
    pub patch_dims: Vec<usize>,
    pub channels: usize,
}

impl TensorPatchGrid {
    /// The `3×…×3×L` grid with `2×…×2×L` patches.
    pub fn cube(order: usize, channels: usize) -> Self {
        TensorPatchGrid {
            dims: vec![3; order],
            patch_dims: vec![2; order],
            channels,
        }
    }

    /// Flattened length of one channel slice.
    pub fn slice_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn input_dim(&self) -> usize {
        self.slice_len() * self.channels
    }

    /// Flattened coordinate of spatial index `idx` in channel `channel`.
    pub fn flat_index(&self, idx: &[usize], channel: usize) -> usize {
        channel * self.slice_len() + row_major(idx, &self.dims)
    }
}

fn row_major(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Every multi-index below `dims`, in row-major order.
fn multi_indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut flat| {
            let mut idx = vec![0; dims.len()];
            for t in (0..dims.len()).rev() {
                idx[t] = flat % dims[t];
                flat /= dims[t];
            }
            idx
        })
        .collect()
}

pub fn tensor_patch_set(grid: &TensorPatchGrid, entry_cap: usize) -> Result<PatchSet> {
    if grid.dims.len() != grid.patch_dims.len() {
        return Err(Error::Dimension {
            context: "tensor patch grid order",
            expected: grid.dims.len(),
            found: grid.patch_dims.len(),
        });
    }
    if grid.channels == 0
        || grid.dims.is_empty()
        || grid.patch_dims.iter().zip(&grid.dims).any(|(&p, &n)| p == 0 || p > n)
    {
        return Err(Error::InvalidParameter(format!("invalid tensor patch grid {grid:?}")));
    }
    let bases: Vec<usize> = grid.dims.iter().zip(&grid.patch_dims).map(|(n, p)| n - p + 1).collect();
    let n_patches = bases.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    let width = grid
        .patch_dims
        .iter()
        .try_fold(grid.channels, |a, &b| a.checked_mul(b));
    let d = grid.dims.iter().try_fold(grid.channels, |a, &b| a.checked_mul(b));
    let entries = match (n_patches, width, d) {
        (Some(n), Some(w), Some(_)) => n.checked_mul(w),
        _ => None,
    };
    match entries {
        Some(e) if e <= entry_cap => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "tensor patch set exceeds the cap of {entry_cap} index entries"
            )))
        }
    }
    let offsets = multi_indices(&grid.patch_dims);
    let patches = multi_indices(&bases)
        .into_iter()
        .map(|base| {
            let mut patch = Vec::with_capacity(width.unwrap_or(0));
            for ch in 0..grid.channels {
                for off in &offsets {
                    let idx: Vec<usize> = base.iter().zip(off).map(|(b, o)| b + o).collect();
                    patch.push(grid.flat_index(&idx, ch));
                }
            }
            patch
        })
        .collect();
    PatchSet::new(grid.input_dim(), patches)
}
