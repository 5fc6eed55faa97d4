//! Reconstruction loss on HR patches and the training loop.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_schedule, MiaeConfig};
use super::network::{decode, encode};
use super::params::{init_params, BoundParams, MiaeParams};
use super::patches::make_patch_plan;
use crate::array::DenseArray;
use crate::autodiff::{adam_step, AdamState, Tape, Var};
use crate::cube::HyperCube;
use crate::degradation::{BlurKernel, SrfMatrix};
use crate::error::{Error, Result};

/// Observations and degradation operators for one fusion problem.
#[derive(Debug, Clone, Copy)]
pub struct FusionInputs<'a> {
    pub lr_hsi: &'a HyperCube,
    pub hr_msi: &'a HyperCube,
    pub kernel: &'a BlurKernel,
    pub srf: &'a SrfMatrix,
    pub ratio: usize,
    pub offset: usize,
}

impl FusionInputs<'_> {
    pub fn validate(&self) -> Result<()> {
        let (nb_big, h, w) = self.lr_hsi.dims();
        let (nb, hh, ww) = self.hr_msi.dims();
        if self.ratio == 0 || self.offset >= self.ratio {
            return Err(Error::arg(format!(
                "offset {} must be below the ratio {}",
                self.offset, self.ratio
            )));
        }
        if hh != h * self.ratio || ww != w * self.ratio {
            return Err(Error::dim(format!(
                "MSI is {hh}×{ww} but LR-HSI {h}×{w} times ratio {} is {}×{}",
                self.ratio,
                h * self.ratio,
                w * self.ratio
            )));
        }
        if self.srf.rows() != nb || self.srf.cols() != nb_big {
            return Err(Error::dim(format!(
                "response matrix is {}×{} but the observations have {nb} and {nb_big} bands",
                self.srf.rows(),
                self.srf.cols()
            )));
        }
        Ok(())
    }
}

/// LR pixels dropped at the top/left and bottom/right of every patch because
/// the blur footprint reaches past the patch border. At least one per side.
pub fn boundary_ring(patch: usize, kernel_size: usize, ratio: usize, offset: usize) -> Result<(usize, usize)> {
    let half = kernel_size / 2;
    let m = patch / ratio;
    let lead = if half > offset {
        (half - offset).div_ceil(ratio)
    } else {
        0
    };
    // first LR index whose footprint crosses the far edge
    let clean_end = (patch.saturating_sub(offset + half)).div_ceil(ratio).min(m);
    let trail = m - clean_end;
    let (lo, hi) = (lead.max(1), trail.max(1));
    if lo + hi >= m {
        return Err(Error::arg(format!(
            "a {patch}-pixel patch keeps no LR pixels after discarding {lo}+{hi} boundary rows"
        )));
    }
    Ok((lo, hi))
}

/// A batch of co-located patches laid out for the loss.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub count: usize,
    pub patch: usize,
    /// `[msi bands, count·patch²]`
    pub msi: DenseArray,
    /// `[hsi bands, count·patch²]`
    pub hsi_up: DenseArray,
    /// `[hsi bands·count, kept, kept]` LR targets with the ring removed.
    pub hsi_lr: DenseArray,
    pub ring: (usize, usize),
}

fn gather(cube: &HyperCube, origins: &[(usize, usize)], size: usize) -> Vec<f64> {
    let (bands, _, w) = cube.dims();
    let mut out = Vec::with_capacity(bands * origins.len() * size * size);
    for b in 0..bands {
        let band = cube.band(b);
        for &(r, c) in origins {
            for i in r..r + size {
                out.extend_from_slice(&band[i * w + c..i * w + c + size]);
            }
        }
    }
    out
}

/// Cuts the patches at `origins` (HR coordinates) out of the full observations.
pub fn gather_batch(
    msi: &HyperCube,
    hsi_up: &HyperCube,
    lr_hsi: &HyperCube,
    origins: &[(usize, usize)],
    patch: usize,
    ratio: usize,
    ring: (usize, usize),
) -> Result<PatchBatch> {
    if origins.is_empty() {
        return Err(Error::arg("empty patch batch"));
    }
    let m = patch / ratio;
    let kept = m - ring.0 - ring.1;
    let lr_origins: Vec<(usize, usize)> = origins
        .iter()
        .map(|&(r, c)| (r / ratio + ring.0, c / ratio + ring.0))
        .collect();
    let n = origins.len();
    let count_pixels = n * patch * patch;
    Ok(PatchBatch {
        count: n,
        patch,
        msi: DenseArray::new(vec![msi.bands(), count_pixels], gather(msi, origins, patch))?,
        hsi_up: DenseArray::new(vec![hsi_up.bands(), count_pixels], gather(hsi_up, origins, patch))?,
        hsi_lr: DenseArray::new(
            vec![lr_hsi.bands() * n, kept, kept],
            gather(lr_hsi, &lr_origins, kept),
        )?,
        ring,
    })
}

/// Degradation operators recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapedDegradation {
    /// `[k, k]` blur kernel.
    pub kernel: Var,
    /// `[msi bands, hsi bands]` spectral response.
    pub srf: Var,
    pub ratio: usize,
    pub offset: usize,
}

impl TapedDegradation {
    /// Records `kernel` and `srf` as constants.
    pub fn constant(tape: &mut Tape, kernel: &BlurKernel, srf: &SrfMatrix, ratio: usize, offset: usize) -> Self {
        Self {
            kernel: tape.constant(kernel_array(kernel)),
            srf: tape.constant(srf_array(srf)),
            ratio,
            offset,
        }
    }
}

/// `‖Z − clamp01(R·X̂)‖₁ + ‖Y − clamp01(D(B ⊛ X̂))‖₁` over a batch, where `x_hat`
/// is `[hsi bands, count·patch²]` and the LR term skips the boundary ring.
pub fn reconstruction_loss(
    tape: &mut Tape,
    x_hat: Var,
    batch: &PatchBatch,
    deg: &TapedDegradation,
) -> Result<Var> {
    let TapedDegradation {
        kernel,
        srf,
        ratio,
        offset,
    } = *deg;
    let bands = tape.value(x_hat).shape()[0];
    let mixed = tape.matmul(srf, x_hat)?;
    let z_hat = tape.clamp01(mixed);
    let z = tape.constant(batch.msi.clone());
    let z_term = tape.l1_loss(z_hat, z)?;

    let planes = tape.reshape(x_hat, &[bands * batch.count, batch.patch, batch.patch])?;
    let lr = tape.blur_decimate(planes, kernel, ratio, offset)?;
    let m = batch.patch / ratio;
    let lr = tape.crop2d(lr, (batch.ring.0, m - batch.ring.1), (batch.ring.0, m - batch.ring.1))?;
    let y_hat = tape.clamp01(lr);
    let y = tape.constant(batch.hsi_lr.clone());
    let y_term = tape.l1_loss(y_hat, y)?;
    tape.add(z_term, y_term)
}

/// Encodes and decodes every pixel of the batch, then applies
/// [`reconstruction_loss`]. The result is summed over the batch.
pub fn patch_loss(
    tape: &mut Tape,
    batch: &PatchBatch,
    params: &BoundParams,
    deg: &TapedDegradation,
    slope: f64,
) -> Result<Var> {
    let z = tape.constant(batch.msi.clone());
    let y = tape.constant(batch.hsi_up.clone());
    let s = encode(tape, z, y, params, slope)?;
    let x_hat = decode(tape, s, params.decoder)?;
    reconstruction_loss(tape, x_hat, batch, deg)
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub fused: HyperCube,
    pub params: MiaeParams,
    pub history: Vec<LossRecord>,
}

pub(crate) fn kernel_array(kernel: &BlurKernel) -> DenseArray {
    DenseArray::new(vec![kernel.size(), kernel.size()], kernel.weights().to_vec())
        .expect("kernel is square")
}

pub(crate) fn srf_array(srf: &SrfMatrix) -> DenseArray {
    DenseArray::new(vec![srf.rows(), srf.cols()], srf.weights().to_vec()).expect("srf is sized")
}

/// Trains the autoencoder on the two observations and returns the fused cube.
pub fn train(inputs: FusionInputs<'_>, cfg: &MiaeConfig) -> Result<TrainOutput> {
    train_with_observer(inputs, cfg, |_| {})
}

/// [`train`] with a callback after every iteration.
pub fn train_with_observer(
    inputs: FusionInputs<'_>,
    cfg: &MiaeConfig,
    mut observer: impl FnMut(&LossRecord),
) -> Result<TrainOutput> {
    inputs.validate()?;
    let (hsi_bands, height, width) = (
        inputs.lr_hsi.bands(),
        inputs.hr_msi.height(),
        inputs.hr_msi.width(),
    );
    cfg.validate(hsi_bands, height, width, inputs.ratio)?;
    if inputs.kernel.size() > cfg.patch {
        return Err(Error::arg(format!(
            "kernel size {} exceeds the patch size {}",
            inputs.kernel.size(),
            cfg.patch
        )));
    }
    let ring = boundary_ring(cfg.patch, inputs.kernel.size(), inputs.ratio, inputs.offset)?;
    let plan = make_patch_plan(height, width, cfg.patch, cfg.stride, inputs.ratio)?;
    let msi = inputs.hr_msi.clone().clamp01();
    let lr_hsi = inputs.lr_hsi.clone().clamp01();
    let hsi_up = cfg.interpolation.upsample(&lr_hsi, inputs.ratio)?;

    let mut params = init_params(cfg.rank, cfg.stages, hsi_bands, msi.bands(), cfg.seed)?;
    info!(
        "training rank {} with {} stages: {} parameters, {} patches, ring {:?}",
        cfg.rank,
        cfg.stages,
        params.parameter_count(),
        plan.origins.len(),
        ring
    );
    let kernel = kernel_array(inputs.kernel);
    let srf = srf_array(inputs.srf);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut origins = Vec::with_capacity(cfg.batch);
    for iteration in 1..=cfg.iterations {
        origins.clear();
        origins.extend(
            (0..cfg.batch).map(|_| plan.origins[rng.random_range(0..plan.origins.len())]),
        );
        let batch = gather_batch(&msi, &hsi_up, &lr_hsi, &origins, cfg.patch, inputs.ratio, ring)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let deg = TapedDegradation {
            kernel: tape.constant(kernel.clone()),
            srf: tape.constant(srf.clone()),
            ratio: inputs.ratio,
            offset: inputs.offset,
        };
        let total = patch_loss(&mut tape, &batch, &bound, &deg, cfg.leaky_slope)?;
        let loss = tape.scale(total, 1.0 / cfg.batch as f64);
        let grads = tape.backward(loss)?;
        params.accumulate(&grads, &bound);
        let lr = lr_schedule(iteration, cfg.learning_rate, cfg.decay_start, cfg.decay_length);
        adam_step(&mut params.params_mut(), &mut adam, lr)?;
        let record = LossRecord {
            iteration,
            learning_rate: lr,
            loss: tape.value(loss).item(),
        };
        if iteration % 500 == 0 {
            debug!("iteration {iteration}: loss {:.6} lr {lr:.3e}", record.loss);
        }
        observer(&record);
        history.push(record);
    }
    let fused = infer(&params, &msi, &hsi_up, cfg.leaky_slope)?;
    Ok(TrainOutput {
        fused,
        params,
        history,
    })
}

const INFER_CHUNK: usize = 4096;

fn run_pixels(
    params: &MiaeParams,
    msi: &HyperCube,
    hsi_up: &HyperCube,
    slope: f64,
    decode_output: bool,
) -> Result<HyperCube> {
    if (msi.height(), msi.width()) != (hsi_up.height(), hsi_up.width()) {
        return Err(Error::dim(format!(
            "MSI is {}×{} but the upsampled HSI is {}×{}",
            msi.height(),
            msi.width(),
            hsi_up.height(),
            hsi_up.width()
        )));
    }
    if msi.bands() != params.msi_bands() || hsi_up.bands() != params.hsi_bands() {
        return Err(Error::dim(format!(
            "network expects {} and {} bands, got {} and {}",
            params.msi_bands(),
            params.hsi_bands(),
            msi.bands(),
            hsi_up.bands()
        )));
    }
    let n = msi.pixels();
    let out_bands = if decode_output {
        params.hsi_bands()
    } else {
        params.rank()
    };
    let mut out = vec![0.0; out_bands * n];
    let columns = |cube: &HyperCube, start: usize, len: usize| -> DenseArray {
        let mut d = Vec::with_capacity(cube.bands() * len);
        for b in 0..cube.bands() {
            d.extend_from_slice(&cube.band(b)[start..start + len]);
        }
        DenseArray::new(vec![cube.bands(), len], d).expect("sized")
    };
    for start in (0..n).step_by(INFER_CHUNK) {
        let len = INFER_CHUNK.min(n - start);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let z = tape.constant(columns(msi, start, len));
        let y = tape.constant(columns(hsi_up, start, len));
        let mut v = encode(&mut tape, z, y, &bound, slope)?;
        if decode_output {
            v = decode(&mut tape, v, bound.decoder)?;
        }
        for (b, row) in tape.value(v).data().chunks_exact(len).enumerate() {
            out[b * n + start..b * n + start + len].copy_from_slice(row);
        }
    }
    HyperCube::new(out_bands, msi.height(), msi.width(), out)
}

/// Latent codes `[rank, H, W]` of every pixel.
pub fn infer_latent(params: &MiaeParams, msi: &HyperCube, hsi_up: &HyperCube, slope: f64) -> Result<HyperCube> {
    run_pixels(params, msi, hsi_up, slope, false)
}

/// Fused HR-HSI from the HR-MSI and the upsampled LR-HSI, pixel by pixel.
pub fn infer(params: &MiaeParams, msi: &HyperCube, hsi_up: &HyperCube, slope: f64) -> Result<HyperCube> {
    run_pixels(params, msi, hsi_up, slope, true)
}
