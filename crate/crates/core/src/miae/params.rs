use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::autodiff::{Gradients, Param, Tape, Var};
use crate::error::{Error, Result};

/// Weights `[out, in]` and bias `[out]` of one fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
}

impl DenseLayer {
    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Param::new(DenseArray::new(vec![n_out, n_in], w).expect("sized")),
            bias: Param::new(DenseArray::zeros(&[n_out])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn bind(&self, tape: &mut Tape) -> BoundLayer {
        BoundLayer {
            weight: tape.leaf(self.weight.value.clone()),
            bias: tape.leaf(self.bias.value.clone()),
        }
    }
}

/// Tape handles of a [`DenseLayer`].
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub weight: Var,
    pub bias: Var,
}

/// Every trainable tensor of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MiaeParams {
    /// Spectral matrix `A`, `[hsi bands, rank]`, used through a clamp to [0, 1].
    pub decoder: Param,
    /// `f_z`: msi bands → rank.
    pub msi_branch: DenseLayer,
    /// `f_y`: hsi bands → rank → rank.
    pub hsi_branch: [DenseLayer; 2],
    /// `f_s^k` for stages 2..=K: rank → rank.
    pub state_branch: Vec<DenseLayer>,
    /// `f^k` for stages 1..=K: 2·rank (stage 1) or 3·rank → rank.
    pub combiners: Vec<DenseLayer>,
}

/// Tape handles of [`MiaeParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub decoder: Var,
    pub msi_branch: BoundLayer,
    pub hsi_branch: [BoundLayer; 2],
    pub state_branch: Vec<BoundLayer>,
    pub combiners: Vec<BoundLayer>,
}

/// Name and size of one layer, for inventories and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub parameters: usize,
}

/// Initial parameters: layer weights uniform on ±1/√fan_in, zero biases and
/// `A` uniform on [0, 1).
pub fn init_params(
    rank: usize,
    stages: usize,
    hsi_bands: usize,
    msi_bands: usize,
    seed: u64,
) -> Result<MiaeParams> {
    if rank == 0 || stages == 0 || hsi_bands == 0 || msi_bands == 0 {
        return Err(Error::arg("rank, stages and band counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..hsi_bands * rank).map(|_| rng.random::<f64>()).collect();
    let decoder = Param::new(DenseArray::new(vec![hsi_bands, rank], a)?);
    let msi_branch = DenseLayer::init(msi_bands, rank, &mut rng);
    let hsi_branch = [
        DenseLayer::init(hsi_bands, rank, &mut rng),
        DenseLayer::init(rank, rank, &mut rng),
    ];
    let state_branch = (1..stages)
        .map(|_| DenseLayer::init(rank, rank, &mut rng))
        .collect();
    let combiners = (0..stages)
        .map(|k| DenseLayer::init(if k == 0 { 2 * rank } else { 3 * rank }, rank, &mut rng))
        .collect();
    Ok(MiaeParams {
        decoder,
        msi_branch,
        hsi_branch,
        state_branch,
        combiners,
    })
}

impl MiaeParams {
    pub fn rank(&self) -> usize {
        self.decoder.value.shape()[1]
    }

    pub fn stages(&self) -> usize {
        self.combiners.len()
    }

    pub fn hsi_bands(&self) -> usize {
        self.decoder.value.shape()[0]
    }

    pub fn msi_bands(&self) -> usize {
        self.msi_branch.inputs()
    }

    fn layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out = vec![
            ("f_z".to_string(), &self.msi_branch),
            ("f_y.1".to_string(), &self.hsi_branch[0]),
            ("f_y.2".to_string(), &self.hsi_branch[1]),
        ];
        for (i, l) in self.state_branch.iter().enumerate() {
            out.push((format!("f_s.{}", i + 2), l));
        }
        for (i, l) in self.combiners.iter().enumerate() {
            out.push((format!("f.{}", i + 1), l));
        }
        out
    }

    /// Decoder followed by every layer in forward order.
    pub fn inventory(&self) -> Vec<LayerInfo> {
        let mut out = vec![LayerInfo {
            name: "A".into(),
            inputs: self.rank(),
            outputs: self.hsi_bands(),
            parameters: self.decoder.value.len(),
        }];
        out.extend(self.layers().into_iter().map(|(name, l)| LayerInfo {
            name,
            inputs: l.inputs(),
            outputs: l.outputs(),
            parameters: l.weight.value.len() + l.bias.value.len(),
        }));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.inventory().iter().map(|l| l.parameters).sum()
    }

    /// Every parameter in a fixed order (the optimizer relies on it).
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.decoder];
        let layers = std::iter::once(&mut self.msi_branch)
            .chain(self.hsi_branch.iter_mut())
            .chain(self.state_branch.iter_mut())
            .chain(self.combiners.iter_mut());
        for l in layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Copies of every parameter value, in the order of [`Self::params_mut`].
    pub fn values(&self) -> Vec<DenseArray> {
        let mut out = vec![self.decoder.value.clone()];
        let layers = std::iter::once(&self.msi_branch)
            .chain(self.hsi_branch.iter())
            .chain(self.state_branch.iter())
            .chain(self.combiners.iter());
        for l in layers {
            out.push(l.weight.value.clone());
            out.push(l.bias.value.clone());
        }
        out
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            decoder: tape.leaf(self.decoder.value.clone()),
            msi_branch: self.msi_branch.bind(tape),
            hsi_branch: [self.hsi_branch[0].bind(tape), self.hsi_branch[1].bind(tape)],
            state_branch: self.state_branch.iter().map(|l| l.bind(tape)).collect(),
            combiners: self.combiners.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Adds the gradients of `bound` into the parameters' `grad` buffers.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &BoundParams) {
        let vars = bound.vars();
        for (p, v) in self.params_mut().into_iter().zip(vars) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g);
            }
        }
    }
}

impl BoundParams {
    /// Regroups handles listed in the order of [`MiaeParams::params_mut`].
    pub fn from_vars(stages: usize, vars: &[Var]) -> Result<Self> {
        if stages == 0 || vars.len() != 4 * stages + 5 {
            return Err(Error::arg(format!(
                "{} handles do not describe a {stages}-stage network",
                vars.len()
            )));
        }
        let layer = |i: usize| BoundLayer {
            weight: vars[1 + 2 * i],
            bias: vars[2 + 2 * i],
        };
        Ok(Self {
            decoder: vars[0],
            msi_branch: layer(0),
            hsi_branch: [layer(1), layer(2)],
            state_branch: (0..stages - 1).map(|k| layer(3 + k)).collect(),
            combiners: (0..stages).map(|k| layer(3 + stages - 1 + k)).collect(),
        })
    }

    /// Handles in the order of [`MiaeParams::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.decoder];
        let layers = std::iter::once(&self.msi_branch)
            .chain(self.hsi_branch.iter())
            .chain(self.state_branch.iter())
            .chain(self.combiners.iter());
        for l in layers {
            out.push(l.weight);
            out.push(l.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = init_params(6, 3, 10, 3, 7).unwrap();
        let b = init_params(6, 3, 10, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(6, 3, 10, 3, 8).unwrap());
        assert!(a.decoder.value.data().iter().all(|v| (0.0..1.0).contains(v)));
        let bound = 1.0 / (10f64).sqrt();
        assert!(a.hsi_branch[0]
            .weight
            .value
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
        assert!(a.combiners.iter().all(|l| l.bias.value.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // J = 80, K = 3, N_B = 103, N_b = 4
        let p = init_params(80, 3, 103, 4, 0).unwrap();
        let a = 103 * 80;
        let f_z = 4 * 80 + 80;
        let f_y = (103 * 80 + 80) + (80 * 80 + 80);
        let f_s = 2 * (80 * 80 + 80);
        let comb = (160 * 80 + 80) + 2 * (240 * 80 + 80);
        assert_eq!(p.parameter_count(), a + f_z + f_y + f_s + comb);
        assert_eq!(p.parameter_count(), 87_840);
    }

    #[test]
    fn single_stage_has_no_state_branch() {
        let p = init_params(4, 1, 8, 2, 0).unwrap();
        assert!(p.state_branch.is_empty());
        assert_eq!(p.combiners.len(), 1);
        assert_eq!(p.combiners[0].inputs(), 8);
    }
}
