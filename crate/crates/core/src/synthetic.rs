//! Small synthetic scenes with known structure, used by tests, benchmarks and
//! the `synth` command.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// Sum of `terms` random plane waves with at most `max_cycles` periods across
/// the image. Zero mean, amplitude about 1.
fn smooth_field(height: usize, width: usize, terms: usize, max_cycles: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..terms)
        .map(|_| {
            (
                rng.random_range(-max_cycles..=max_cycles) / height as f64,
                rng.random_range(-max_cycles..=max_cycles) / width as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let norm = (terms as f64).sqrt();
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            let v: f64 = waves
                .iter()
                .map(|&(fy, fx, phase, amp)| amp * (TAU * (fy * i as f64 + fx * j as f64) + phase).cos())
                .sum();
            out.push(v / norm);
        }
    }
    out
}

/// Every band an independent smooth field; the cube is min-max scaled to [0, 1].
pub fn smooth_random_cube(bands: usize, height: usize, width: usize, seed: u64) -> Result<HyperCube> {
    if bands == 0 || height == 0 || width == 0 {
        return Err(Error::arg("cube dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(bands * height * width);
    for _ in 0..bands {
        data.extend(smooth_field(height, width, 6, 4.0, &mut rng));
    }
    Ok(HyperCube::new(bands, height, width, data)?.scale_to_unit())
}

/// A linear-mixture scene `X = clamp01(A·S)`.
#[derive(Debug, Clone)]
pub struct MixtureScene {
    pub cube: HyperCube,
    /// `[bands, endmembers]`, entries uniform on [0, 1).
    pub endmembers: DenseArray,
    /// Smooth nonnegative abundances summing to one at every pixel.
    pub abundances: HyperCube,
}

pub fn mixture_scene(bands: usize, height: usize, width: usize, endmembers: usize, seed: u64) -> Result<MixtureScene> {
    if bands == 0 || height == 0 || width == 0 || endmembers == 0 {
        return Err(Error::arg("scene dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..bands * endmembers).map(|_| rng.random::<f64>()).collect();
    let pixels = height * width;
    let mut s = Vec::with_capacity(endmembers * pixels);
    for _ in 0..endmembers {
        s.extend(smooth_field(height, width, 4, 3.0, &mut rng).into_iter().map(|v| (2.5 * v).exp()));
    }
    for p in 0..pixels {
        let total: f64 = (0..endmembers).map(|j| s[j * pixels + p]).sum();
        for j in 0..endmembers {
            s[j * pixels + p] /= total;
        }
    }
    let mut x = vec![0.0; bands * pixels];
    crate::kernels::matmul_acc(&a, &s, &mut x, bands, endmembers, pixels);
    Ok(MixtureScene {
        cube: HyperCube::new(bands, height, width, x)?.clamp01(),
        endmembers: DenseArray::new(vec![bands, endmembers], a)?,
        abundances: HyperCube::new(endmembers, height, width, s)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_cube_is_unit_scaled_and_seeded() {
        let c = smooth_random_cube(4, 32, 32, 3).unwrap();
        let (lo, hi) = c
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_eq!(c, smooth_random_cube(4, 32, 32, 3).unwrap());
        assert_ne!(c, smooth_random_cube(4, 32, 32, 4).unwrap());
    }

    #[test]
    fn neighbouring_pixels_are_close() {
        let c = smooth_random_cube(2, 64, 64, 0).unwrap();
        for b in 0..2 {
            for i in 0..64 {
                for j in 1..64 {
                    assert!((c.get(b, i, j) - c.get(b, i, j - 1)).abs() < 0.25);
                }
            }
        }
    }

    #[test]
    fn abundances_sum_to_one() {
        let s = mixture_scene(10, 16, 16, 5, 1).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let a = s.abundances.spectrum(i, j);
                assert!(a.iter().all(|&v| v >= 0.0));
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert!(s.cube.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
