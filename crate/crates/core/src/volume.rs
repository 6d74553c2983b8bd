//! Intensity normalization and spatial resampling of 3-D volumes.
//!
//! Volumes are stored as `[depth, height, width]`. On disk a volume is a raw
//! little-endian `f32` array plus a JSON sidecar:
//!
//! ```json
//! {"shape": [56, 448, 448], "units": "HU", "dtype": "float32", "endianness": "little"}
//! ```
//!
//! Resampling uses corner-aligned coordinates: output index `i` of `n_out`
//! samples the source at `i * (n_in - 1) / (n_out - 1)`, so the first and last
//! voxels of each axis map onto the first and last source voxels.

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default resampling target `(depth, height, width)`.
pub const DEFAULT_TARGET: [usize; 3] = [56, 448, 448];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f64>,
    pub units: String,
}

impl Volume {
    pub fn new(data: Array3<f64>, units: impl Into<String>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(Error::shape(format!("volume dims must be >= 1, got {:?}", data.shape())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voxel {pos} of volume")));
        }
        Ok(Volume { data, units: units.into() })
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeParams {
    pub lo: f64,
    pub hi: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for NormalizeParams {
    /// CT window `[-1024, 1024]` HU with the reference dataset statistics.
    fn default() -> Self {
        NormalizeParams { lo: -1024.0, hi: 1024.0, mu: -158.58, sigma: 324.70 }
    }
}

impl NormalizeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.lo < self.hi) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("clip range [{}, {}] is empty", self.lo, self.hi)));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x.clamp(self.lo, self.hi) - self.mu) / self.sigma
    }
}

/// `(clamp(x, lo, hi) - mu) / sigma` voxelwise.
pub fn clip_normalize(v: &Volume, params: &NormalizeParams) -> Result<Volume> {
    params.validate()?;
    Ok(Volume { data: v.data.mapv(|x| params.apply(x)), units: "normalized".into() })
}

/// Source index pair and weight for every output position along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_out == 1 || n_in == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
            let i0 = (pos.floor() as usize).min(n_in - 1);
            if i0 == n_in - 1 {
                (i0, i0, 0.0)
            } else {
                (i0, i0 + 1, pos - i0 as f64)
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 || a == b {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

fn resample_axis(data: &Array3<f64>, axis: usize, n_out: usize) -> Array3<f64> {
    let n_in = data.len_of(Axis(axis));
    if n_in == n_out {
        return data.clone();
    }
    let mut shape = [data.shape()[0], data.shape()[1], data.shape()[2]];
    shape[axis] = n_out;
    let mut out = Array3::<f64>::zeros(shape);
    for (o, (i0, i1, t)) in axis_taps(n_in, n_out).into_iter().enumerate() {
        let a = data.index_axis(Axis(axis), i0);
        let b = data.index_axis(Axis(axis), i1);
        let mut dst = out.index_axis_mut(Axis(axis), o);
        ndarray::Zip::from(&mut dst).and(&a).and(&b).for_each(|d, &x, &y| *d = lerp(x, y, t));
    }
    out
}

/// Trilinear resampling to `target`, done as three separable linear passes.
/// A target equal to the source shape returns an identical copy.
pub fn resample_trilinear(v: &Volume, target: [usize; 3]) -> Result<Volume> {
    if target.contains(&0) {
        return Err(Error::shape(format!("target dims must be >= 1, got {target:?}")));
    }
    if v.shape() == target {
        return Ok(v.clone());
    }
    let mut data = v.data.clone();
    for (axis, &n) in target.iter().enumerate() {
        data = resample_axis(&data, axis, n);
    }
    Ok(Volume { data, units: v.units.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: [usize; 3],
    #[serde(default)]
    pub units: String,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default = "default_endianness")]
    pub endianness: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn default_dtype() -> String {
    "float32".into()
}

fn default_endianness() -> String {
    "little".into()
}

impl Sidecar {
    pub fn parse(text: &str) -> Result<Sidecar> {
        let sc: Sidecar = serde_json::from_str(text)?;
        if sc.dtype != "float32" {
            return Err(Error::Format(format!("unsupported dtype `{}`", sc.dtype)));
        }
        if sc.endianness != "little" {
            return Err(Error::Format(format!("unsupported endianness `{}`", sc.endianness)));
        }
        if sc.shape.contains(&0) {
            return Err(Error::Format(format!("shape {:?} has a zero dimension", sc.shape)));
        }
        Ok(sc)
    }

    pub fn voxel_count(&self) -> Option<usize> {
        self.shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }
}

/// Decode a raw `f32` array described by `sidecar`.
pub fn decode_volume(raw: &[u8], sidecar: &Sidecar) -> Result<Volume> {
    let count = sidecar
        .voxel_count()
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| Error::Format(format!("shape {:?} overflows", sidecar.shape)))?;
    if raw.len() != count * 4 {
        return Err(Error::Format(format!(
            "raw file holds {} bytes, shape {:?} needs {}",
            raw.len(),
            sidecar.shape,
            count * 4
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array3::from_shape_vec(sidecar.shape, values).map_err(|e| Error::Format(e.to_string()))?;
    Volume::new(data, sidecar.units.clone())
}

/// Raw bytes plus sidecar for a volume. Values are narrowed to `f32`.
pub fn encode_volume(v: &Volume) -> (Vec<u8>, Sidecar) {
    let mut raw = Vec::with_capacity(v.data.len() * 4);
    for &x in v.data.iter() {
        raw.extend_from_slice(&(x as f32).to_le_bytes());
    }
    let sidecar = Sidecar {
        shape: v.shape(),
        units: v.units.clone(),
        dtype: default_dtype(),
        endianness: default_endianness(),
        config_hash: None,
    };
    (raw, sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol(shape: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> Volume {
        Volume::new(Array3::from_shape_fn(shape, |(a, b, c)| f(a, b, c)), "HU").unwrap()
    }

    #[test]
    fn normalization_constants() {
        let p = NormalizeParams::default();
        assert_eq!(p.apply(-158.58), 0.0);
        assert!((p.apply(2000.0) - 3.6421).abs() < 1e-4);
        assert!((p.apply(-5000.0) + 2.6653).abs() < 1e-4);
        assert_eq!(p.apply(2000.0), p.apply(1024.0));
    }

    #[test]
    fn bad_sigma_rejected() {
        let v = vol([1, 1, 1], |_, _, _| 0.0);
        let p = NormalizeParams { sigma: 0.0, ..Default::default() };
        assert!(clip_normalize(&v, &p).is_err());
    }

    #[test]
    fn ramp_to_three() {
        let v = vol([1, 1, 2], |_, _, c| c as f64);
        let r = resample_trilinear(&v, [1, 1, 3]).unwrap();
        assert_eq!(r.data.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn identity_and_constant() {
        let v = vol([3, 4, 5], |a, b, c| (a * 31 + b * 7 + c) as f64 * 0.37);
        assert_eq!(resample_trilinear(&v, [3, 4, 5]).unwrap(), v);
        let k = vol([2, 3, 4], |_, _, _| 7.0);
        let r = resample_trilinear(&k, [5, 1, 9]).unwrap();
        assert!(r.data.iter().all(|&x| x == 7.0));
    }

    #[test]
    fn trilinear_matches_direct_formula() {
        let v = vol([2, 2, 2], |a, b, c| (a * 4 + b * 2 + c) as f64);
        let r = resample_trilinear(&v, [3, 3, 3]).unwrap();
        // Linear field: value at the centre is the mean of the corners.
        assert!((r.data[[1, 1, 1]] - 3.5).abs() < 1e-12);
        assert_eq!(r.data[[2, 2, 2]], 7.0);
        assert_eq!(r.data[[0, 0, 0]], 0.0);
    }

    #[test]
    fn zero_target_rejected() {
        let v = vol([1, 1, 1], |_, _, _| 1.0);
        assert!(resample_trilinear(&v, [0, 1, 1]).is_err());
    }

    #[test]
    fn volume_file_round_trip() {
        let v = vol([2, 3, 4], |a, b, c| (a + b + c) as f64 - 1.5);
        let (raw, sc) = encode_volume(&v);
        let text = serde_json::to_string(&sc).unwrap();
        let back = decode_volume(&raw, &Sidecar::parse(&text).unwrap()).unwrap();
        assert_eq!(back, v);
        assert!(decode_volume(&raw[..raw.len() - 4], &sc).is_err());
        assert!(Sidecar::parse(r#"{"shape":[1,1,1],"dtype":"float64"}"#).is_err());
        assert!(Sidecar::parse(r#"{"shape":[0,1,1]}"#).is_err());
    }

    proptest! {
        #[test]
        fn normalized_output_in_window(x in -1e6f64..1e6) {
            let p = NormalizeParams::default();
            let y = p.apply(x);
            prop_assert!(y >= (p.lo - p.mu) / p.sigma && y <= (p.hi - p.mu) / p.sigma);
        }

        #[test]
        fn resample_stays_in_envelope(
            seed in 0u64..1000,
            src in (1usize..5, 1usize..5, 1usize..5),
            dst in (1usize..7, 1usize..7, 1usize..7),
        ) {
            let v = vol([src.0, src.1, src.2], |a, b, c| {
                ((seed as usize * 13 + a * 7 + b * 3 + c * 11) % 17) as f64 - 8.0
            });
            let r = resample_trilinear(&v, [dst.0, dst.1, dst.2]).unwrap();
            let lo = v.data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.data.iter().all(|&x| x >= lo && x <= hi));
            prop_assert_eq!(r.shape(), [dst.0, dst.1, dst.2]);
        }

        #[test]
        fn normalize_commutes_with_resample_on_clipped_input(
            seed in 0u64..1000,
            dst in (1usize..6, 1usize..6, 1usize..6),
        ) {
            let v = vol([3, 2, 4], |a, b, c| {
                ((seed as usize * 17 + a * 5 + b * 13 + c * 3) % 41) as f64 * 50.0 - 1000.0
            });
            let p = NormalizeParams::default();
            let target = [dst.0, dst.1, dst.2];
            let a = clip_normalize(&resample_trilinear(&v, target).unwrap(), &p).unwrap();
            let b = resample_trilinear(&clip_normalize(&v, &p).unwrap(), target).unwrap();
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
