//! Gradient-check suite over every differentiable op and the full fusion loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{grad_check, GradCheckOptions, OpKind, Tape, Var};
use crate::degradation::{apply_srf, blur_and_downsample, make_box_srf, make_gaussian_kernel};
use crate::error::Result;
use crate::interp::upsample_bilinear;
use crate::miae::{boundary_ring, gather_batch, init_params, patch_loss, BoundParams, TapedDegradation};
use crate::synthetic::mixture_scene;

/// Pass threshold on the maximum relative error of every case.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub seed: u64,
    pub cases: Vec<CaseResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseResult::passed)
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("sized")
}

/// Reduces `out` to a scalar with random weights so every output entry gets a
/// distinct upstream gradient. The offset keeps the final absolute value away
/// from its kink.
fn readout(tape: &mut Tape, out: Var, weights: &DenseArray) -> Result<Var> {
    let n = tape.value(out).len();
    let flat = tape.reshape(out, &[n])?;
    let c = tape.constant(weights.clone());
    let y = tape.matmul(c, flat)?;
    let floor = tape.constant(DenseArray::from_vec(vec![-100.0]));
    tape.l1_loss(y, floor)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    inputs: Vec<DenseArray>,
    build: Build,
}

fn op_case(
    name: &'static str,
    inputs: Vec<DenseArray>,
    out_len: usize,
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let weights = random(&[1, out_len], -1.0, 1.0, rng);
    Case {
        name,
        inputs,
        build: Box::new(move |tape, v| {
            let out = op(tape, v)?;
            readout(tape, out, &weights)
        }),
    }
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut cases = Vec::new();
    let x = random(&[4, 6], -1.0, 1.0, rng);
    let w = random(&[3, 4], -1.0, 1.0, rng);
    let b = random(&[3], -1.0, 1.0, rng);
    cases.push(op_case("fully_connected", vec![x, w, b], 18, rng, |t, v| {
        t.fully_connected(v[0], v[1], v[2])
    }));
    let w = random(&[3, 5], -1.0, 1.0, rng);
    let x = random(&[5, 7], -1.0, 1.0, rng);
    cases.push(op_case("matmul", vec![w, x], 21, rng, |t, v| t.matmul(v[0], v[1])));
    let x = random(&[5, 6], -1.0, 1.0, rng);
    cases.push(op_case("leaky_relu", vec![x], 30, rng, |t, v| Ok(t.leaky_relu(v[0], 0.01))));
    let x = random(&[5, 6], -0.5, 1.5, rng);
    cases.push(op_case("clamp01", vec![x], 30, rng, |t, v| Ok(t.clamp01(v[0]))));
    let a = random(&[2, 5], -1.0, 1.0, rng);
    let b = random(&[3, 5], -1.0, 1.0, rng);
    cases.push(op_case("concat", vec![a, b], 25, rng, |t, v| t.concat(&[v[0], v[1]])));
    let x = random(&[2, 9, 9], 0.0, 1.0, rng);
    let k = random(&[3, 3], 0.0, 1.0, rng);
    cases.push(op_case("conv2d_perband", vec![x, k], 162, rng, |t, v| {
        t.conv2d_perband(v[0], v[1])
    }));
    let x = random(&[2, 12, 12], 0.0, 1.0, rng);
    let k = random(&[5, 5], 0.0, 1.0, rng);
    cases.push(op_case("blur_decimate", vec![x, k], 32, rng, |t, v| {
        t.blur_decimate(v[0], v[1], 3, 1)
    }));
    let x = random(&[2, 8, 8], -1.0, 1.0, rng);
    cases.push(op_case("subsample", vec![x], 32, rng, |t, v| t.subsample(v[0], 2, 1)));
    let x = random(&[2, 6, 7], -1.0, 1.0, rng);
    cases.push(op_case("crop2d", vec![x], 24, rng, |t, v| t.crop2d(v[0], (1, 4), (2, 6))));
    let x = random(&[3, 8], -1.0, 1.0, rng);
    cases.push(op_case("reshape", vec![x], 24, rng, |t, v| t.reshape(v[0], &[2, 3, 4])));
    let a = random(&[12], -1.0, 1.0, rng);
    let b = random(&[12], -1.0, 1.0, rng);
    cases.push(Case {
        name: "l1_loss",
        inputs: vec![a, b],
        build: Box::new(|t, v| t.l1_loss(v[0], v[1])),
    });
    let a = random(&[4, 3], -1.0, 1.0, rng);
    let b = random(&[4, 3], -1.0, 1.0, rng);
    cases.push(op_case("add", vec![a, b], 12, rng, |t, v| t.add(v[0], v[1])));
    let x = random(&[4, 3], -1.0, 1.0, rng);
    cases.push(op_case("scale", vec![x], 12, rng, |t, v| Ok(t.scale(v[0], -1.7))));
    cases
}

/// The complete training loss on an 8-band 16×16 toy scene at ratio 2, with
/// every network parameter as a checked input.
fn fusion_case(seed: u64) -> Result<Case> {
    let (bands, size, ratio, offset, stages) = (8, 16, 2, 1, 3);
    let scene = mixture_scene(bands, size, size, 3, seed)?;
    let kernel = make_gaussian_kernel(3, 0.8)?;
    let srf = make_box_srf(bands, 3)?;
    let lr = blur_and_downsample(&scene.cube, &kernel, ratio, offset)?;
    let msi = apply_srf(&scene.cube, &srf)?;
    let up = upsample_bilinear(&lr, ratio)?;
    let ring = boundary_ring(size, kernel.size(), ratio, offset)?;
    let batch = gather_batch(&msi, &up, &lr, &[(0, 0)], size, ratio, ring)?;
    let params = init_params(4, stages, bands, 3, seed)?;
    Ok(Case {
        name: "fusion_loss",
        inputs: params.values(),
        build: Box::new(move |tape, v| {
            let bound = BoundParams::from_vars(stages, v)?;
            let deg = TapedDegradation::constant(tape, &kernel, &srf, ratio, offset);
            patch_loss(tape, &batch, &bound, &deg, 0.01)
        }),
    })
}

/// Runs every case. `fault` corrupts one backward rule, which must make the
/// suite fail.
pub fn run_gradcheck_suite(seed: u64, fault: Option<OpKind>) -> Result<SelfCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases(&mut rng);
    cases.push(fusion_case(seed)?);
    // Between kinks every case is affine in any single coordinate, so central
    // differences carry no truncation error and a wide step only lowers the
    // rounding noise. Steps that cross a kink are detected and skipped.
    let opts = GradCheckOptions {
        eps: 1e-3,
        seed,
        fault,
        ..GradCheckOptions::default()
    };
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        let report = grad_check(&case.inputs, &case.build, &opts)?;
        results.push(CaseResult {
            name: case.name.to_string(),
            max_rel_err: report.max_rel_err,
            checked: report.checked,
            skipped: report.skipped,
        });
    }
    Ok(SelfCheckReport { seed, cases: results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_lists_every_op() {
        let report = run_gradcheck_suite(0, None).unwrap();
        for c in &report.cases {
            assert!(c.passed(), "{c:?}");
            assert!(c.skipped * 4 < c.checked, "{c:?}");
        }
        assert_eq!(report.cases.len(), 14);
    }

    #[test]
    fn corrupted_rule_is_caught() {
        for kind in [OpKind::Blur, OpKind::Concat, OpKind::Clamp01] {
            assert!(!run_gradcheck_suite(0, Some(kind)).unwrap().passed(), "{kind:?}");
        }
    }
}
