//! Central finite-difference checks of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{OpKind, Tape, Var};
use crate::array::DenseArray;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Perturbation size.
    pub eps: f64,
    /// Check at most this many coordinates, chosen at random.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Denominator floor of the relative error; below it the error is absolute.
    pub floor: f64,
    /// Corrupts one backward rule of the analytic pass.
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
            floor: 1e-6,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±eps evaluations crossed a non-smooth point.
    pub skipped: usize,
}

/// Compares the gradients of the scalar built by `build` against central
/// differences. `build` receives one leaf per entry of `params`.
pub fn grad_check<F>(params: &[DenseArray], build: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[DenseArray]| -> Result<(f64, Vec<u8>)> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        Ok((tape.value(loss).item(), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    tape.inject_fault(opts.fault);
    let leaves: Vec<Var> = params.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;
    let analytic: Vec<DenseArray> = leaves
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| DenseArray::zeros(p.shape())))
        .collect();

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    if let Some(n) = opts.max_coords.filter(|&n| n < coords.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), n).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|k| coords[k]).collect();
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work = params.to_vec();
    for (i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + opts.eps;
        let (fp, sp) = eval(&work)?;
        work[i].data_mut()[j] = orig - opts.eps;
        let (fm, sm) = eval(&work)?;
        work[i].data_mut()[j] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.eps);
        let a = analytic[i].data()[j];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let err = (a - numeric).abs() / denom;
        report.max_rel_err = report.max_rel_err.max(err);
        report.checked += 1;
    }
    Ok(report)
}
