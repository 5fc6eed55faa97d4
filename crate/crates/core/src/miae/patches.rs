use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-left corners (on the HR grid) of overlapping square patches that
/// together cover the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub size: usize,
    pub origins: Vec<(usize, usize)>,
}

/// Origins `0, s, 2s, …` that fit, plus an end-aligned origin when the regular
/// grid leaves a margin uncovered.
fn axis_origins(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|o| o + patch <= dim)
        .collect();
    if let Some(&last) = out.last() {
        if last + patch < dim {
            out.push(dim - patch);
        }
    }
    out
}

pub fn make_patch_plan(
    height: usize,
    width: usize,
    patch: usize,
    stride: usize,
    ratio: usize,
) -> Result<PatchPlan> {
    if patch == 0 || stride == 0 || ratio == 0 {
        return Err(Error::arg("patch, stride and ratio must be positive"));
    }
    if patch > height || patch > width {
        return Err(Error::arg(format!(
            "patch {patch} exceeds the {height}×{width} image"
        )));
    }
    if stride > patch {
        return Err(Error::arg(format!(
            "stride {stride} exceeds the patch size {patch}; patches would leave gaps"
        )));
    }
    if patch % ratio != 0 || stride % ratio != 0 {
        return Err(Error::arg(format!(
            "patch {patch} and stride {stride} must be multiples of {ratio}"
        )));
    }
    let rows = axis_origins(height, patch, stride);
    let cols = axis_origins(width, patch, stride);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchPlan {
        size: patch,
        origins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_rule() {
        assert_eq!(axis_origins(100, 40, 24), vec![0, 24, 48, 60]);
        let big = axis_origins(512, 40, 24);
        assert_eq!(big.first(), Some(&0));
        assert_eq!(&big[big.len() - 2..], &[456, 472]);
        assert_eq!(big.len(), 21);
        assert_eq!(axis_origins(40, 40, 24), vec![0]);
    }

    #[test]
    fn plan_covers_image() {
        let plan = make_patch_plan(100, 64, 40, 24, 4).unwrap();
        let mut hit = vec![false; 100 * 64];
        for &(r, c) in &plan.origins {
            assert_eq!(r % 4, 0);
            assert_eq!(c % 4, 0);
            assert!(r + 40 <= 100 && c + 40 <= 64);
            for i in r..r + 40 {
                for j in c..c + 40 {
                    hit[i * 64 + j] = true;
                }
            }
        }
        assert!(hit.iter().all(|&h| h));
    }

    #[test]
    fn rejects_oversized_patch() {
        assert!(make_patch_plan(32, 32, 40, 24, 8).is_err());
        assert!(make_patch_plan(64, 64, 30, 24, 8).is_err());
        assert!(make_patch_plan(64, 64, 8, 16, 4).is_err());
    }
}
