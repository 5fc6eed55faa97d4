//! Encoder `f` (unrolled gradient stages) and decoder `g` (clamped NMF).
//!
//! Both act on `[features, pixels]` matrices, so every pixel is processed
//! independently with shared weights.

use super::params::{BoundLayer, BoundParams};
use crate::autodiff::{Tape, Var};
use crate::error::Result;

fn layer(tape: &mut Tape, x: Var, l: BoundLayer, slope: f64) -> Result<Var> {
    let h = tape.fully_connected(x, l.weight, l.bias)?;
    Ok(tape.leaky_relu(h, slope))
}

/// Maps MSI spectra `z` (`[msi bands, P]`) and upsampled HSI spectra `y_up`
/// (`[hsi bands, P]`) to latent codes `[rank, P]` in [0, 1].
///
/// The observation branches are evaluated once and feed every stage:
/// stage 1 combines `(u_z, u_y)`, stage k ≥ 2 combines
/// `(f_s^k(s^{k-1}), u_z, u_y)`.
pub fn encode(tape: &mut Tape, z: Var, y_up: Var, p: &BoundParams, slope: f64) -> Result<Var> {
    let u_z = layer(tape, z, p.msi_branch, slope)?;
    let h = layer(tape, y_up, p.hsi_branch[0], slope)?;
    let u_y = layer(tape, h, p.hsi_branch[1], slope)?;
    let first = tape.concat(&[u_z, u_y])?;
    let mut s = layer(tape, first, p.combiners[0], slope)?;
    for (f_s, comb) in p.state_branch.iter().zip(&p.combiners[1..]) {
        let prev = layer(tape, s, *f_s, slope)?;
        let joined = tape.concat(&[prev, u_z, u_y])?;
        s = layer(tape, joined, *comb, slope)?;
    }
    Ok(tape.clamp01(s))
}

/// `x̂ = clamp01(clamp01(A) · clamp01(s))`.
pub fn decode(tape: &mut Tape, s: Var, decoder: Var) -> Result<Var> {
    let a = tape.clamp01(decoder);
    let s = tape.clamp01(s);
    let x = tape.matmul(a, s)?;
    Ok(tape.clamp01(x))
}
