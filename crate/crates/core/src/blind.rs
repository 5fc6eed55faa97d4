//! Blind estimation of the blur kernel and spectral response from the two
//! observations.
//!
//! Both observations are degraded versions of the same scene, so blurring and
//! decimating the MSI should match spectrally mixing the LR-HSI. The kernel
//! and response are fitted by Adam on the L1 mismatch
//! `‖clamp01(D(B ⊛ Z)) − clamp01(R·Y)‖₁`, projecting after every step onto
//! `0 ≤ B ≤ 1`, `R ≥ 0`, `R·1 = 1`.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{adam_step, AdamState, Param, Tape};
use crate::cube::HyperCube;
use crate::degradation::{make_box_srf, make_gaussian_kernel, project_rows, BlurKernel, SrfMatrix};
use crate::error::{Error, Result};
use crate::miae::LossRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindConfig {
    pub kernel_size: usize,
    pub ratio: usize,
    pub offset: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Recorded for provenance; the estimator itself is deterministic.
    pub seed: u64,
}

impl Default for BlindConfig {
    fn default() -> Self {
        Self {
            kernel_size: 15,
            ratio: 8,
            offset: 4,
            iterations: 5000,
            learning_rate: 5e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlindOutput {
    /// Best feasible kernel (not renormalized).
    pub kernel: BlurKernel,
    pub srf: SrfMatrix,
    /// Loss of every iterate before its update, then of the final iterate.
    pub history: Vec<LossRecord>,
    /// Index into `history` of the returned iterate.
    pub best: usize,
}

impl BlindOutput {
    pub fn best_loss(&self) -> f64 {
        self.history[self.best].loss
    }
}

/// One feasible iterate handed to an observer.
#[derive(Debug)]
pub struct BlindIterate<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub kernel: &'a [f64],
    pub srf: &'a [f64],
}

/// Starting point: a broad Gaussian (σ = k/4) and the box response.
pub fn init_blind(kernel_size: usize, msi_bands: usize, hsi_bands: usize) -> Result<(BlurKernel, SrfMatrix)> {
    let kernel = make_gaussian_kernel(kernel_size, kernel_size as f64 / 4.0)?;
    let srf = make_box_srf(hsi_bands, msi_bands)?;
    Ok((kernel, srf))
}

fn check_inputs(msi: &HyperCube, hsi: &HyperCube, cfg: &BlindConfig) -> Result<()> {
    if cfg.ratio == 0 || cfg.offset >= cfg.ratio {
        return Err(Error::arg(format!(
            "offset {} must be below the ratio {}",
            cfg.offset, cfg.ratio
        )));
    }
    if msi.height() != hsi.height() * cfg.ratio || msi.width() != hsi.width() * cfg.ratio {
        return Err(Error::dim(format!(
            "MSI {}×{} is not {} times the HSI {}×{}",
            msi.height(),
            msi.width(),
            cfg.ratio,
            hsi.height(),
            hsi.width()
        )));
    }
    if msi.bands() > hsi.bands() {
        return Err(Error::dim(format!(
            "MSI has {} bands, more than the HSI's {}",
            msi.bands(),
            hsi.bands()
        )));
    }
    if cfg.kernel_size % 2 == 0 {
        return Err(Error::arg(format!("kernel size must be odd, got {}", cfg.kernel_size)));
    }
    Ok(())
}

/// The blind loss for a given kernel and response.
pub fn blind_loss(msi: &HyperCube, hsi: &HyperCube, kernel: &BlurKernel, srf: &SrfMatrix, ratio: usize, offset: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let k = tape.constant(crate::miae::kernel_array(kernel));
    let r = tape.constant(crate::miae::srf_array(srf));
    let loss = taped_loss(&mut tape, msi, hsi, k, r, ratio, offset)?;
    Ok(tape.value(loss).item())
}

fn taped_loss(
    tape: &mut Tape,
    msi: &HyperCube,
    hsi: &HyperCube,
    kernel: crate::autodiff::Var,
    srf: crate::autodiff::Var,
    ratio: usize,
    offset: usize,
) -> Result<crate::autodiff::Var> {
    let z = tape.constant(msi.to_array());
    let y = tape.constant(hsi.to_matrix());
    let zb = tape.blur_decimate(z, kernel, ratio, offset)?;
    let z_bar = tape.clamp01(zb);
    let ry = tape.matmul(srf, y)?;
    let ry = tape.reshape(ry, &[msi.bands(), hsi.height(), hsi.width()])?;
    let y_bar = tape.clamp01(ry);
    tape.l1_loss(z_bar, y_bar)
}

pub fn estimate_degradation(msi: &HyperCube, hsi: &HyperCube, cfg: &BlindConfig) -> Result<BlindOutput> {
    estimate_with_observer(msi, hsi, cfg, |_| {})
}

/// [`estimate_degradation`] reporting every feasible iterate (including the
/// initial and final ones) to `observer`.
pub fn estimate_with_observer(
    msi: &HyperCube,
    hsi: &HyperCube,
    cfg: &BlindConfig,
    mut observer: impl FnMut(&BlindIterate<'_>),
) -> Result<BlindOutput> {
    check_inputs(msi, hsi, cfg)?;
    let (k0, r0) = init_blind(cfg.kernel_size, msi.bands(), hsi.bands())?;
    let ks = cfg.kernel_size;
    let mut kernel = Param::new(DenseArray::new(vec![ks, ks], k0.weights().to_vec())?);
    let mut srf = Param::new(DenseArray::new(vec![r0.rows(), r0.cols()], r0.weights().to_vec())?);
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut best = (f64::INFINITY, 0, kernel.value.clone(), srf.value.clone());

    for iteration in 0..=cfg.iterations {
        let mut tape = Tape::new();
        let kv = tape.leaf(kernel.value.clone());
        let rv = tape.leaf(srf.value.clone());
        let loss_var = taped_loss(&mut tape, msi, hsi, kv, rv, cfg.ratio, cfg.offset)?;
        let loss = tape.value(loss_var).item();
        observer(&BlindIterate {
            iteration,
            loss,
            kernel: kernel.value.data(),
            srf: srf.value.data(),
        });
        history.push(LossRecord {
            iteration,
            learning_rate: if iteration < cfg.iterations { cfg.learning_rate } else { 0.0 },
            loss,
        });
        if loss < best.0 {
            best = (loss, iteration, kernel.value.clone(), srf.value.clone());
        }
        if iteration == cfg.iterations {
            break;
        }
        let grads = tape.backward(loss_var)?;
        if let Some(g) = grads.get(kv) {
            kernel.grad.add_assign(g);
        }
        if let Some(g) = grads.get(rv) {
            srf.grad.add_assign(g);
        }
        adam_step(&mut [&mut kernel, &mut srf], &mut adam, cfg.learning_rate)?;
        kernel.value.data_mut().iter_mut().for_each(|w| *w = w.clamp(0.0, 1.0));
        project_rows(srf.value.data_mut(), hsi.bands());
        if iteration % 500 == 0 {
            debug!("blind iteration {iteration}: loss {loss:.6}");
        }
    }
    let (_, best_iter, kw, rw) = best;
    Ok(BlindOutput {
        kernel: BlurKernel::new(ks, kw.into_data())?,
        srf: SrfMatrix::new(msi.bands(), hsi.bands(), rw.into_data())?,
        history,
        best: best_iter,
    })
}
