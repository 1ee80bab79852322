//! Conversions between `(h, w, c)` pixel arrays and tape feature maps.

use super::{FeatureMap, Tape, Value};
use ndarray::{Array2, Array3, ArrayD, Ix2};

/// `(h, w, c)` pixels -> `(c, h*w)` matrix.
pub fn to_channel_major(pixels: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = pixels.dim();
    let mut out = Array2::zeros((c, h * w));
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                out[(ci, y * w + x)] = pixels[(y, x, ci)];
            }
        }
    }
    out
}

/// `(c, h*w)` matrix -> `(h, w, c)` pixels.
pub fn to_pixels(map: &ArrayD<f64>, h: usize, w: usize) -> Array3<f64> {
    let m = map.view().into_dimensionality::<Ix2>().expect("non-2-D feature map");
    let c = m.nrows();
    assert_eq!(m.ncols(), h * w, "pixel count mismatch");
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ci in 0..c {
                out[(y, x, ci)] = m[(ci, y * w + x)];
            }
        }
    }
    out
}

/// Insert an image as a non-differentiable feature map.
pub fn image_constant<'t>(tape: &'t Tape, pixels: &Array3<f64>) -> FeatureMap<'t> {
    let (h, w, _) = pixels.dim();
    FeatureMap::new(tape.constant(to_channel_major(pixels).into_dyn()), h, w)
}

/// Insert an image as a differentiable leaf (used by gradient checks).
pub fn image_param<'t>(tape: &'t Tape, pixels: &Array3<f64>) -> FeatureMap<'t> {
    let (h, w, _) = pixels.dim();
    FeatureMap::new(tape.param(to_channel_major(pixels).into_dyn()), h, w)
}

/// Wrap an already-inserted value as a feature map.
pub fn as_feature_map(val: Value<'_>, h: usize, w: usize) -> FeatureMap<'_> {
    FeatureMap::new(val, h, w)
}
