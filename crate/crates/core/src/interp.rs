//! Upsampling of the LR-HSI onto the HR grid.
//!
//! Output pixel `i` samples source coordinate `(i + 0.5)/r − 0.5`, clamped to
//! the valid range, so upsampled pixels stay centred on the source pixels.

use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl Interpolation {
    pub fn upsample(self, x: &HyperCube, ratio: usize) -> Result<HyperCube> {
        match self {
            Interpolation::Bilinear => upsample_bilinear(x, ratio),
            Interpolation::Nearest => upsample_nearest(x, ratio),
        }
    }
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "nearest" => Ok(Self::Nearest),
            other => Err(Error::arg(format!("unknown interpolation '{other}'"))),
        }
    }
}

#[inline]
fn source_coord(i: usize, ratio: usize, len: usize) -> f64 {
    let c = (i as f64 + 0.5) / ratio as f64 - 0.5;
    c.clamp(0.0, (len - 1) as f64)
}

fn check_ratio(ratio: usize) -> Result<()> {
    if ratio == 0 {
        return Err(Error::arg("upsampling ratio must be at least 1"));
    }
    Ok(())
}

/// Bilinear upsampling by an integer factor.
pub fn upsample_bilinear(x: &HyperCube, ratio: usize) -> Result<HyperCube> {
    check_ratio(ratio)?;
    let (h, w) = (x.height(), x.width());
    // (lower index, upper index, weight of upper) per output row / column
    let axis = |len: usize| -> Vec<(usize, usize, f64)> {
        (0..len * ratio)
            .map(|i| {
                let c = source_coord(i, ratio, len);
                let lo = c.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, c - lo as f64)
            })
            .collect()
    };
    let rows = axis(h);
    let cols = axis(w);
    Ok(HyperCube::from_fn(x.bands(), h * ratio, w * ratio, |b, i, j| {
        let (r0, r1, ty) = rows[i];
        let (c0, c1, tx) = cols[j];
        let (v00, v01) = (x.get(b, r0, c0), x.get(b, r0, c1));
        let (v10, v11) = (x.get(b, r1, c0), x.get(b, r1, c1));
        let top = v00 + tx * (v01 - v00);
        let bottom = v10 + tx * (v11 - v10);
        let v = top + ty * (bottom - top);
        let lo = v00.min(v01).min(v10).min(v11);
        let hi = v00.max(v01).max(v10).max(v11);
        v.clamp(lo, hi)
    }))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &HyperCube, ratio: usize) -> Result<HyperCube> {
    check_ratio(ratio)?;
    let (h, w) = (x.height(), x.width());
    let near = |i: usize, len: usize| source_coord(i, ratio, len).round() as usize;
    Ok(HyperCube::from_fn(x.bands(), h * ratio, w * ratio, |b, i, j| {
        x.get(b, near(i, h), near(j, w))
    }))
}
