use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use miae_core::autodiff::OpKind;
use miae_core::blind::{estimate_degradation, BlindConfig};
use miae_core::degradation::{make_box_srf, simulate_wald, BlurKernel, SimConfig, SrfMatrix};
use miae_core::io;
use miae_core::metrics;
use miae_core::miae::{train, FusionInputs, MiaeConfig};
use miae_core::selfcheck::{run_gradcheck_suite, GRADCHECK_TOLERANCE};
use miae_core::synthetic::{mixture_scene, smooth_random_cube};
use miae_core::{HyperCube, Interpolation};

use crate::args::*;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::CliError;

/// Seed offset of the MSI noise relative to the HSI noise.
const MSI_NOISE_SEED_XOR: u64 = 0x5DEE_CE66_D1CE_B00B;

pub fn run(command: Command) -> Result<(), CliError> {
    if let Command::Replay(args) = command {
        return replay(&args);
    }
    let manifest = execute(&command)?;
    manifest.write(&out_dir(&command))?;
    Ok(())
}

fn out_dir(command: &Command) -> PathBuf {
    let mut c = command.clone();
    c.out_dir_mut().clone()
}

/// Runs one command and returns its manifest (not yet written).
fn execute(command: &Command) -> Result<RunManifest, CliError> {
    let dir = out_dir(command);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut manifest = RunManifest::new(command.clone());
    match command {
        Command::Simulate(a) => simulate(a, &mut manifest)?,
        Command::Estimate(a) => estimate(a, &mut manifest)?,
        Command::Fuse(a) => fuse(a, &mut manifest)?,
        Command::Evaluate(a) => evaluate(a, &mut manifest)?,
        Command::Gradcheck(a) => gradcheck(a, &mut manifest)?,
        Command::Synth(a) => synth(a, &mut manifest)?,
        Command::Replay(_) => unreachable!("replay is not recorded"),
    }
    Ok(manifest)
}

fn offset_for(ratio: usize, offset: Option<usize>) -> usize {
    offset.unwrap_or(ratio / 2)
}

fn simulate(a: &SimulateArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let reference = io::read_hsc(&a.input)?;
    m.input("input", &a.input)?;
    if reference.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        warn!("reference values outside [0, 1] will be clamped by the noise model");
    }
    let (h, w) = (reference.height(), reference.width());
    if a.ratio == 0 || h % a.ratio != 0 || w % a.ratio != 0 {
        return Err(CliError::Usage(format!(
            "reference is {h}×{w}, not divisible by the ratio {}",
            a.ratio
        )));
    }
    let srf = match (&a.srf, a.srf_boxes) {
        (Some(p), _) => {
            m.input("srf", p)?;
            io::read_srf(p)?
        }
        (None, Some(n)) => make_box_srf(reference.bands(), n)?,
        (None, None) => unreachable!("clap requires one of --srf and --srf-boxes"),
    };
    let cfg = SimConfig {
        ratio: a.ratio,
        kernel_size: a.kernel_size,
        sigma: a.sigma,
        snr_hsi: a.snr_hsi,
        snr_msi: a.snr_msi,
        offset: offset_for(a.ratio, a.offset),
        seed: a.seed,
    };
    let obs = simulate_wald(&reference, &cfg, &srf)?;
    m.seeds.insert("hsi_noise".into(), a.seed);
    m.seeds.insert("msi_noise".into(), a.seed ^ MSI_NOISE_SEED_XOR);

    let files = [
        ("lr_hsi", a.out_dir.join("lr_hsi.hsc")),
        ("hr_msi", a.out_dir.join("hr_msi.hsc")),
        ("kernel", a.out_dir.join("kernel.krn")),
        ("srf", a.out_dir.join("srf.csv")),
    ];
    io::write_hsc(&files[0].1, &obs.lr_hsi)?;
    io::write_hsc(&files[1].1, &obs.hr_msi)?;
    io::write_kernel(&files[2].1, &obs.kernel)?;
    io::write_srf(&files[3].1, &srf)?;
    for (name, path) in &files {
        m.output(name, path)?;
    }
    println!(
        "LR-HSI {}×{}×{}, HR-MSI {}×{}×{} written to {}",
        obs.lr_hsi.bands(),
        obs.lr_hsi.height(),
        obs.lr_hsi.width(),
        obs.hr_msi.bands(),
        obs.hr_msi.height(),
        obs.hr_msi.width(),
        a.out_dir.display()
    );
    Ok(())
}

fn check_pair(lr: &HyperCube, msi: &HyperCube, ratio: Option<usize>) -> Result<usize, CliError> {
    let inferred = if lr.height() > 0 && msi.height() % lr.height() == 0 {
        msi.height() / lr.height()
    } else {
        0
    };
    let r = ratio.unwrap_or(inferred);
    if r == 0 || msi.height() != lr.height() * r || msi.width() != lr.width() * r {
        return Err(CliError::Usage(format!(
            "MSI {}×{} and LR-HSI {}×{} are not related by ratio {r}",
            msi.height(),
            msi.width(),
            lr.height(),
            lr.width()
        )));
    }
    if msi.bands() > lr.bands() {
        return Err(CliError::Usage(format!(
            "MSI has {} bands but the LR-HSI only {}",
            msi.bands(),
            lr.bands()
        )));
    }
    Ok(r)
}

fn run_blind(
    lr: &HyperCube,
    msi: &HyperCube,
    cfg: &BlindConfig,
    out_dir: &Path,
    loss_name: &str,
    m: &mut RunManifest,
) -> Result<(BlurKernel, SrfMatrix), CliError> {
    let out = estimate_degradation(msi, lr, cfg)?;
    info!(
        "blind estimate: best loss {:.6} at iteration {} (initial {:.6})",
        out.best_loss(),
        out.best,
        out.history[0].loss
    );
    let files = [
        ("kernel", out_dir.join("kernel.krn")),
        ("srf", out_dir.join("srf.csv")),
        (loss_name, out_dir.join(format!("{loss_name}.csv"))),
    ];
    io::write_kernel(&files[0].1, &out.kernel)?;
    io::write_srf(&files[1].1, &out.srf)?;
    io::write_loss_csv(&files[2].1, &out.history)?;
    for (name, path) in &files {
        m.output(name, path)?;
    }
    Ok((out.kernel, out.srf))
}

fn estimate(a: &EstimateArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let lr = io::read_hsc(&a.lr_hsi)?;
    let msi = io::read_hsc(&a.msi)?;
    m.input("lr_hsi", &a.lr_hsi)?;
    m.input("msi", &a.msi)?;
    let ratio = check_pair(&lr, &msi, Some(a.ratio))?;
    let cfg = BlindConfig {
        kernel_size: a.kernel_size,
        ratio,
        offset: offset_for(ratio, a.offset),
        iterations: a.iters,
        learning_rate: a.rate,
        seed: a.seed,
    };
    m.seeds.insert("blind".into(), a.seed);
    let (kernel, srf) = run_blind(&lr, &msi, &cfg, &a.out_dir, "loss", m)?;
    println!(
        "estimated {}×{} kernel (sum {:.6}) and {}×{} response in {}",
        kernel.size(),
        kernel.size(),
        kernel.sum(),
        srf.rows(),
        srf.cols(),
        a.out_dir.display()
    );
    Ok(())
}

fn fuse(a: &FuseArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let lr = io::read_hsc(&a.lr_hsi)?;
    let msi = io::read_hsc(&a.msi)?;
    m.input("lr_hsi", &a.lr_hsi)?;
    m.input("msi", &a.msi)?;
    let ratio = check_pair(&lr, &msi, a.ratio)?;
    let offset = offset_for(ratio, a.offset);
    let (kernel, srf) = match (&a.kernel, &a.srf, a.blind) {
        (Some(k), Some(r), false) => {
            m.input("kernel", k)?;
            m.input("srf", r)?;
            (io::read_kernel(k)?, io::read_srf(r)?)
        }
        (None, None, true) => {
            let cfg = BlindConfig {
                kernel_size: a.blind_kernel_size,
                ratio,
                offset,
                iterations: a.blind_iters,
                learning_rate: a.blind_rate,
                seed: a.seed,
            };
            m.seeds.insert("blind".into(), a.seed);
            run_blind(&lr, &msi, &cfg, &a.out_dir, "blind_loss", m)?
        }
        _ => {
            return Err(CliError::Usage(
                "fuse needs --kernel and --srf, or --blind".into(),
            ))
        }
    };
    let cfg = MiaeConfig {
        rank: a.rank,
        stages: a.stages,
        leaky_slope: a.leaky_slope,
        iterations: a.iters,
        batch: a.batch,
        patch: a.patch,
        stride: a.stride,
        learning_rate: a.rate,
        decay_start: a.decay_start,
        decay_length: a.decay_length,
        interpolation: match a.interp {
            InterpArg::Bilinear => Interpolation::Bilinear,
            InterpArg::Nearest => Interpolation::Nearest,
        },
        seed: a.seed,
    };
    m.seeds.insert("init_and_sampling".into(), a.seed);
    let out = train(
        FusionInputs {
            lr_hsi: &lr,
            hr_msi: &msi,
            kernel: &kernel,
            srf: &srf,
            ratio,
            offset,
        },
        &cfg,
    )?;
    let fused_path = a.out_dir.join("fused.hsc");
    let loss_path = a.out_dir.join("loss.csv");
    io::write_hsc(&fused_path, &out.fused)?;
    io::write_loss_csv(&loss_path, &out.history)?;
    m.output("fused", &fused_path)?;
    m.output("loss", &loss_path)?;
    let last = out.history.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "fused {}×{}×{} cube written to {} (final loss {last:.6})",
        out.fused.bands(),
        out.fused.height(),
        out.fused.width(),
        fused_path.display()
    );
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

fn evaluate(a: &EvaluateArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let reference = io::read_hsc(&a.reference)?;
    let test = io::read_hsc(&a.test)?;
    m.input("ref", &a.reference)?;
    m.input("test", &a.test)?;
    let report = metrics::evaluate(&reference, &test, a.ratio)?;
    println!("{:<10} {:>14}", "metric", "value");
    for (name, v) in [
        ("RMSE", report.rmse),
        ("PSNR", report.psnr_db),
        ("SAM", report.sam_deg),
        ("ERGAS", report.ergas),
        ("UIQI", report.uiqi),
    ] {
        println!("{name:<10} {:>14}", format_value(v));
    }
    let json_path = a.out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&json_path, text + "\n").map_err(|e| CliError::io(&json_path, e))?;
    m.output("metrics", &json_path)?;
    if let Some(p) = &a.per_band_csv {
        io::write_psnr_csv(p, &report.per_band_psnr)?;
        m.output("per_band_csv", p)?;
    }
    if let Some(p) = &a.per_pixel_sam_csv {
        io::write_sam_csv(p, &report.sorted_per_pixel_sam)?;
        m.output("per_pixel_sam_csv", p)?;
    }
    Ok(())
}

fn fault_kind(f: FaultOp) -> OpKind {
    match f {
        FaultOp::FullyConnected => OpKind::FullyConnected,
        FaultOp::LeakyRelu => OpKind::LeakyRelu,
        FaultOp::Clamp01 => OpKind::Clamp01,
        FaultOp::Concat => OpKind::Concat,
        FaultOp::Blur => OpKind::Blur,
        FaultOp::Subsample => OpKind::Subsample,
        FaultOp::Crop => OpKind::Crop,
        FaultOp::Reshape => OpKind::Reshape,
        FaultOp::L1 => OpKind::L1,
        FaultOp::Add => OpKind::Add,
        FaultOp::Scale => OpKind::Scale,
    }
}

fn gradcheck(a: &GradcheckArgs, m: &mut RunManifest) -> Result<(), CliError> {
    m.seeds.insert("gradcheck".into(), a.seed);
    let report = run_gradcheck_suite(a.seed, a.inject_fault.map(fault_kind))?;
    for c in &report.cases {
        println!(
            "{:<16} max rel err {:.3e}  ({} checked, {} skipped)  {}",
            c.name,
            c.max_rel_err,
            c.checked,
            c.skipped,
            if c.passed() { "ok" } else { "FAIL" }
        );
    }
    let path = a.out_dir.join("gradcheck.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    m.output("report", &path)?;
    if report.passed() {
        Ok(())
    } else {
        m.write(&a.out_dir)?;
        Err(CliError::Check(format!(
            "gradient check failed (tolerance {GRADCHECK_TOLERANCE:e})"
        )))
    }
}

fn synth(a: &SynthArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let cube = match a.kind {
        SceneKind::Smooth => smooth_random_cube(a.bands, a.height, a.width, a.seed)?,
        SceneKind::Mixture => mixture_scene(a.bands, a.height, a.width, a.endmembers, a.seed)?.cube,
    };
    m.seeds.insert("scene".into(), a.seed);
    let path = a.out_dir.join("reference.hsc");
    io::write_hsc(&path, &cube)?;
    m.output("reference", &path)?;
    println!(
        "{}×{}×{} scene written to {}",
        cube.bands(),
        cube.height(),
        cube.width(),
        path.display()
    );
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.version != env!("CARGO_PKG_VERSION") {
        warn!(
            "manifest was written by version {}, this is {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    for (name, d) in &recorded.inputs {
        let now = crate::manifest::sha256_file(&d.path)?;
        if now != d.sha256 {
            return Err(CliError::Check(format!(
                "input {name} ({}) changed since the manifest was written",
                d.path.display()
            )));
        }
    }
    let mut command = recorded.command.clone();
    let recorded_dir = std::mem::replace(command.out_dir_mut(), a.out_dir.clone());
    // Outputs named explicitly (not under the output directory) move along with it.
    if let Command::Evaluate(e) = &mut command {
        for p in [&mut e.per_band_csv, &mut e.per_pixel_sam_csv].into_iter().flatten() {
            if let Ok(rest) = p.strip_prefix(&recorded_dir) {
                *p = a.out_dir.join(rest);
            } else if let Some(name) = p.file_name() {
                *p = a.out_dir.join(name);
            }
        }
    }
    let result = execute(&command);
    let manifest = match result {
        Ok(m) => m,
        Err(e) => return Err(e),
    };
    manifest.write(&a.out_dir)?;
    if a.verify {
        let mut mismatched = Vec::new();
        for (name, d) in &recorded.outputs {
            match manifest.outputs.get(name) {
                Some(n) if n.sha256 == d.sha256 => {}
                _ => mismatched.push(name.clone()),
            }
        }
        if !mismatched.is_empty() {
            return Err(CliError::Check(format!(
                "replay outputs differ from {}: {}",
                a.manifest.display(),
                mismatched.join(", ")
            )));
        }
        println!(
            "replay of {} reproduced {} outputs bitwise; manifest in {}",
            recorded.command.name(),
            recorded.outputs.len(),
            a.out_dir.join(MANIFEST_FILE).display()
        );
    }
    Ok(())
}
