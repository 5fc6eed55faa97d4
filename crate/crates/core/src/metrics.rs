//! Full-reference fusion quality measures: RMSE, PSNR, SAM, ERGAS and UIQI.

use serde::{Deserialize, Serialize};

use crate::cube::HyperCube;
use crate::error::{Error, Result};

/// Side length and stride of the UIQI windows.
pub const UIQI_WINDOW: usize = 32;

const TINY: f64 = 1e-12;

/// All five measures plus the per-band and per-pixel diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    #[serde(with = "json_float")]
    pub psnr_db: f64,
    pub sam_deg: f64,
    pub ergas: f64,
    pub uiqi: f64,
    #[serde(with = "json_float::vec")]
    pub per_band_psnr: Vec<f64>,
    pub sorted_per_pixel_sam: Vec<f64>,
}

/// Root mean squared error over every element.
pub fn rmse(reference: &HyperCube, test: &HyperCube) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    Ok(mean_sq_diff(reference.data(), test.data()).sqrt())
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Per-band PSNR with the band's reference maximum as peak, and the mean over
/// bands with nonzero error (`+∞` when every band is exact).
pub fn psnr(reference: &HyperCube, test: &HyperCube) -> Result<(f64, Vec<f64>)> {
    reference.ensure_same_shape(test)?;
    let per_band: Vec<f64> = (0..reference.bands())
        .map(|b| {
            let (r, t) = (reference.band(b), test.band(b));
            let mse = mean_sq_diff(r, t);
            if mse == 0.0 {
                return f64::INFINITY;
            }
            let peak = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            10.0 * (peak * peak / mse).log10()
        })
        .collect();
    let finite: Vec<f64> = per_band.iter().copied().filter(|v| *v != f64::INFINITY).collect();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok((mean, per_band))
}

/// Mean spectral angle in degrees and the ascending per-pixel angles.
pub fn sam(reference: &HyperCube, test: &HyperCube) -> Result<(f64, Vec<f64>)> {
    reference.ensure_same_shape(test)?;
    let n = reference.pixels();
    let mut nr = vec![0.0; n];
    let mut nt = vec![0.0; n];
    for b in 0..reference.bands() {
        for (p, (&r, &t)) in reference.band(b).iter().zip(test.band(b)).enumerate() {
            nr[p] += r * r;
            nt[p] += t * t;
        }
    }
    let nr: Vec<f64> = nr.into_iter().map(f64::sqrt).collect();
    let nt: Vec<f64> = nt.into_iter().map(f64::sqrt).collect();
    // Chord between the unit spectra: θ = 2·asin(|x/‖x‖ − y/‖y‖| / 2), which
    // equals acos of the cosine but stays accurate near 0°.
    let mut chord = vec![0.0; n];
    for b in 0..reference.bands() {
        for (p, (&r, &t)) in reference.band(b).iter().zip(test.band(b)).enumerate() {
            if nr[p] >= TINY && nt[p] >= TINY {
                let d = r / nr[p] - t / nt[p];
                chord[p] += d * d;
            }
        }
    }
    let mut angles: Vec<f64> = (0..n)
        .map(|p| {
            if nr[p] < TINY || nt[p] < TINY {
                0.0
            } else {
                (2.0 * (chord[p].sqrt() / 2.0).clamp(-1.0, 1.0).asin()).to_degrees()
            }
        })
        .collect();
    let mean = angles.iter().sum::<f64>() / n as f64;
    angles.sort_by(f64::total_cmp);
    Ok((mean, angles))
}

/// `(100/r)·sqrt(mean_k (RMSE_k / μ_k)²)` over bands whose reference mean is
/// not zero.
pub fn ergas(reference: &HyperCube, test: &HyperCube, ratio: usize) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    if ratio == 0 {
        return Err(Error::arg("ERGAS ratio must be at least 1"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for b in 0..reference.bands() {
        let r = reference.band(b);
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        if mu.abs() < TINY {
            continue;
        }
        let rmse_b = mean_sq_diff(r, test.band(b)).sqrt();
        acc += (rmse_b / mu).powi(2);
        count += 1;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(100.0 / ratio as f64 * (acc / count as f64).sqrt())
}

/// Universal image quality index averaged over 32×32 windows and bands.
pub fn uiqi(reference: &HyperCube, test: &HyperCube) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let (h, w) = (reference.height(), reference.width());
    if h < 2 || w < 2 {
        return Err(Error::arg(format!("UIQI needs at least 2×2 pixels, got {h}×{w}")));
    }
    let starts = |len: usize| -> Vec<(usize, usize)> {
        (0..len)
            .step_by(UIQI_WINDOW)
            .map(|s| (s, (s + UIQI_WINDOW).min(len)))
            .filter(|(s, e)| e - s >= 2)
            .collect()
    };
    let (rows, cols) = (starts(h), starts(w));
    let mut total = 0.0;
    for b in 0..reference.bands() {
        let (rb, tb) = (reference.band(b), test.band(b));
        let mut sum = 0.0;
        let mut kept = 0usize;
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                let px = || (r0..r1).flat_map(|i| (c0..c1).map(move |j| i * w + j));
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                let mx = px().map(|p| rb[p]).sum::<f64>() / n;
                let my = px().map(|p| tb[p]).sum::<f64>() / n;
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for p in px() {
                    let (dx, dy) = (rb[p] - mx, tb[p] - my);
                    sxx += dx * dx;
                    syy += dy * dy;
                    sxy += dx * dy;
                }
                let (sxx, syy, sxy) = (sxx / (n - 1.0), syy / (n - 1.0), sxy / (n - 1.0));
                let denom = (sxx + syy) * (mx * mx + my * my);
                if denom < TINY {
                    continue;
                }
                // grouped so identical windows give exactly 1
                sum += 4.0 * sxy * (mx * my) / denom;
                kept += 1;
            }
        }
        total += if kept > 0 {
            sum / kept as f64
        } else if rb == tb {
            1.0
        } else {
            0.0
        };
    }
    Ok(total / reference.bands() as f64)
}

/// Every measure for a fused cube against its reference.
pub fn evaluate(reference: &HyperCube, test: &HyperCube, ratio: usize) -> Result<MetricsReport> {
    let (psnr_db, per_band_psnr) = psnr(reference, test)?;
    let (sam_deg, sorted_per_pixel_sam) = sam(reference, test)?;
    Ok(MetricsReport {
        rmse: rmse(reference, test)?,
        psnr_db,
        sam_deg,
        ergas: ergas(reference, test, ratio)?,
        uiqi: uiqi(reference, test)?,
        per_band_psnr,
        sorted_per_pixel_sam,
    })
}

/// JSON has no infinities; non-finite values travel as strings.
mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    impl Repr {
        fn into_f64<E: serde::de::Error>(self) -> Result<f64, E> {
            match self {
                Repr::Num(v) => Ok(v),
                Repr::Text(s) => match s.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    other => Err(E::custom(format!("not a number: {other}"))),
                },
            }
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Repr::deserialize(d)?.into_f64()
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        struct Item(f64);

        impl serde::Serialize for Item {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::serialize(&self.0, s)
            }
        }

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&Item(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<super::Repr>::deserialize(d)?
                .into_iter()
                .map(super::Repr::into_f64)
                .collect()
        }
    }
}
