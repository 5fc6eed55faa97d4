//! Spatial blur, decimation and spectral response operators, and the
//! Wald-protocol simulator that derives the two observations from a reference
//! cube.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};
use crate::kernels::{self, BlurGrid};

/// A shift-invariant point spread function: an odd `size×size` grid of
/// weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::arg(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::dim(format!(
                "{size}×{size} kernel needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::arg(format!("kernel weight {w} is outside [0, 1]")));
        }
        Ok(Self { size, weights })
    }

    /// Single unit tap.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[size * size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half_width(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Copy rescaled to unit sum; an all-zero kernel is returned unchanged.
    pub fn normalized(&self) -> Self {
        let s = self.sum();
        if s <= 0.0 {
            return self.clone();
        }
        Self {
            size: self.size,
            weights: self.weights.iter().map(|w| w / s).collect(),
        }
    }
}

/// A spectral response matrix (`rows = msi bands`, `cols = hsi bands`) with
/// nonnegative entries and unit row sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrfMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

/// Row-sum tolerance accepted by [`SrfMatrix::new`].
pub const SRF_ROW_SUM_TOL: f64 = 1e-9;

impl SrfMatrix {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}×{cols} response matrix needs {} weights, got {}",
                rows * cols,
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::arg(format!("response weight {w} is negative or not finite")));
        }
        for (m, row) in weights.chunks_exact(cols).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SRF_ROW_SUM_TOL {
                return Err(Error::arg(format!("response row {m} sums to {s}, not 1")));
            }
        }
        Ok(Self {
            rows,
            cols,
            weights,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            weights: w,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.cols..(m + 1) * self.cols]
    }

    /// Projects arbitrary weights onto the feasible set: negatives become 0,
    /// rows are rescaled to unit sum, and all-zero rows become uniform.
    pub fn project(rows: usize, cols: usize, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::dim("response weights do not match the matrix size"));
        }
        project_rows(&mut weights, cols);
        Self::new(rows, cols, weights)
    }
}

/// In-place nonnegativity plus unit-row-sum projection.
pub(crate) fn project_rows(weights: &mut [f64], cols: usize) {
    for row in weights.chunks_exact_mut(cols) {
        row.iter_mut().for_each(|w| *w = w.max(0.0));
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            row.iter_mut().for_each(|w| *w /= s);
        } else {
            row.iter_mut().for_each(|w| *w = 1.0 / cols as f64);
        }
    }
}

/// Parameters of the Wald-protocol simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ratio: usize,
    pub kernel_size: usize,
    pub sigma: f64,
    /// dB; `f64::INFINITY` disables noise.
    pub snr_hsi: f64,
    pub snr_msi: f64,
    pub offset: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ratio: 8,
            kernel_size: 15,
            sigma: 3.4,
            snr_hsi: 30.0,
            snr_msi: 40.0,
            offset: 4,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Defaults with the decimation phase centred in each block.
    pub fn with_ratio(ratio: usize) -> Self {
        Self {
            ratio,
            offset: ratio / 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio == 0 {
            return Err(Error::arg("ratio must be at least 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::arg(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::arg(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.offset >= self.ratio {
            return Err(Error::arg(format!(
                "offset {} must be below the ratio {}",
                self.offset, self.ratio
            )));
        }
        for snr in [self.snr_hsi, self.snr_msi] {
            if !(snr > 0.0) {
                return Err(Error::arg(format!("SNR must be positive or inf, got {snr}")));
            }
        }
        Ok(())
    }
}

/// Isotropic Gaussian sampled at integer offsets from the centre and
/// normalized to unit sum.
pub fn make_gaussian_kernel(size: usize, sigma: f64) -> Result<BlurKernel> {
    if size % 2 == 0 {
        return Err(Error::arg(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    let half = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            w.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    BlurKernel::new(size, w)
}

fn blur_grid(x: &HyperCube, kernel: &BlurKernel, ratio: usize, offset: usize) -> Result<BlurGrid> {
    if kernel.size() > x.height().min(x.width()) {
        return Err(Error::dim(format!(
            "kernel size {} exceeds image size {}×{}",
            kernel.size(),
            x.height(),
            x.width()
        )));
    }
    crate::autodiff::check_decimation(x.height(), x.width(), ratio, offset)?;
    Ok(BlurGrid {
        height: x.height(),
        width: x.width(),
        ksize: kernel.size(),
        stride: ratio,
        offset,
    })
}

/// Blurs every band with `kernel` (mirror padding with edge repetition).
pub fn apply_psf(x: &HyperCube, kernel: &BlurKernel) -> Result<HyperCube> {
    blur_and_downsample(x, kernel, 1, 0)
}

/// `downsample(apply_psf(x, kernel), ratio, offset)` computing only the kept
/// samples.
pub fn blur_and_downsample(
    x: &HyperCube,
    kernel: &BlurKernel,
    ratio: usize,
    offset: usize,
) -> Result<HyperCube> {
    let grid = blur_grid(x, kernel, ratio, offset)?;
    let (oh, ow) = (grid.out_height(), grid.out_width());
    let mut out = vec![0.0; x.bands() * oh * ow];
    kernels::blur_sample(x.data(), kernel.weights(), grid, &mut out);
    HyperCube::new(x.bands(), oh, ow, out)
}

/// Keeps pixel `(ratio·i + offset, ratio·j + offset)` of every block.
pub fn downsample(x: &HyperCube, ratio: usize, offset: usize) -> Result<HyperCube> {
    crate::autodiff::check_decimation(x.height(), x.width(), ratio, offset)?;
    let (oh, ow) = (x.height() / ratio, x.width() / ratio);
    Ok(HyperCube::from_fn(x.bands(), oh, ow, |b, i, j| {
        x.get(b, ratio * i + offset, ratio * j + offset)
    }))
}

/// Mixes bands per pixel: output band `m` is `Σ_k R[m,k]·x[k]`.
pub fn apply_srf(x: &HyperCube, srf: &SrfMatrix) -> Result<HyperCube> {
    if srf.cols() != x.bands() {
        return Err(Error::dim(format!(
            "response matrix expects {} bands, cube has {}",
            srf.cols(),
            x.bands()
        )));
    }
    let n = x.pixels();
    let mut out = vec![0.0; srf.rows() * n];
    kernels::matmul_acc(srf.weights(), x.data(), &mut out, srf.rows(), srf.cols(), n);
    HyperCube::new(srf.rows(), x.height(), x.width(), out)
}

/// Averages `n_in` bands over `n_out` contiguous groups; the first
/// `n_in mod n_out` groups get one extra band.
pub fn make_box_srf(n_in: usize, n_out: usize) -> Result<SrfMatrix> {
    if n_out == 0 || n_out > n_in {
        return Err(Error::arg(format!(
            "cannot group {n_in} bands into {n_out} boxes"
        )));
    }
    let base = n_in / n_out;
    let extra = n_in % n_out;
    let mut w = vec![0.0; n_out * n_in];
    let mut start = 0;
    for m in 0..n_out {
        let len = base + usize::from(m < extra);
        for k in start..start + len {
            w[m * n_in + k] = 1.0 / len as f64;
        }
        start += len;
    }
    SrfMatrix::new(n_out, n_in, w)
}

/// Adds zero-mean Gaussian noise whose variance is the cube's mean square
/// divided by `10^(snr_db/10)`, then clamps to `[0, 1]`.
pub fn add_noise_snr(x: &HyperCube, snr_db: f64, seed: u64) -> Result<HyperCube> {
    if !(snr_db > 0.0) {
        return Err(Error::arg(format!("SNR must be positive or inf, got {snr_db}")));
    }
    if snr_db.is_infinite() {
        return Ok(x.clone());
    }
    let sigma = noise_sigma(x, snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.clone();
    for v in out.data_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = (*v + sigma * n).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Noise standard deviation for a target SNR.
pub fn noise_sigma(x: &HyperCube, snr_db: f64) -> f64 {
    let power = x.data().iter().map(|v| v * v).sum::<f64>() / x.data().len() as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Wald-protocol observations of a reference cube.
#[derive(Debug, Clone)]
pub struct Observations {
    pub lr_hsi: HyperCube,
    pub hr_msi: HyperCube,
    pub kernel: BlurKernel,
}

/// Blurs, decimates and adds noise for the LR-HSI; applies the SRF and adds
/// noise for the HR-MSI.
pub fn simulate_wald(reference: &HyperCube, cfg: &SimConfig, srf: &SrfMatrix) -> Result<Observations> {
    cfg.validate()?;
    let kernel = make_gaussian_kernel(cfg.kernel_size, cfg.sigma)?;
    let lr = blur_and_downsample(reference, &kernel, cfg.ratio, cfg.offset)?;
    let msi = apply_srf(reference, srf)?;
    let lr_hsi = add_noise_snr(&lr, cfg.snr_hsi, cfg.seed)?;
    let hr_msi = add_noise_snr(&msi, cfg.snr_msi, cfg.seed ^ 0x5DEE_CE66_D1CE_B00B)?;
    Ok(Observations {
        lr_hsi,
        hr_msi,
        kernel,
    })
}
