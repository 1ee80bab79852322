//! Spatial ops over channels-by-pixels feature maps: im2col convolution,
//! 2x2 average pooling, nearest-neighbor upsampling.

use super::Value;
use ndarray::{Array2, ArrayD, Ix2};

/// A 2-D feature map stored as a `(channels, h*w)` matrix on the tape.
#[derive(Clone, Copy)]
pub struct FeatureMap<'t> {
    pub val: Value<'t>,
    pub h: usize,
    pub w: usize,
}

impl<'t> FeatureMap<'t> {
    pub fn new(val: Value<'t>, h: usize, w: usize) -> Self {
        let shape = val.shape();
        assert_eq!(shape.len(), 2, "feature map must be 2-D");
        assert_eq!(shape[1], h * w, "feature map pixels vs h*w");
        FeatureMap { val, h, w }
    }

    pub fn channels(&self) -> usize {
        self.val.shape()[0]
    }

    /// Same-padded convolution with an odd square kernel.
    /// `weight` is `(c_out, c_in*k*k)`; `bias`, when given, is `(c_out,)`.
    pub fn conv(&self, weight: Value<'t>, bias: Option<Value<'t>>, k: usize) -> FeatureMap<'t> {
        assert!(k % 2 == 1, "conv kernel must be odd");
        let cin = self.channels();
        assert_eq!(weight.shape()[1], cin * k * k, "conv weight columns vs c_in*k*k");
        let cols = im2col(self.val, self.h, self.w, k);
        let mut out = weight.matmul(cols);
        if let Some(b) = bias {
            out = out.bias_add(b);
        }
        FeatureMap { val: out, h: self.h, w: self.w }
    }

    /// 2x2 average pooling; requires even spatial dims.
    pub fn avg_pool2(&self) -> FeatureMap<'t> {
        assert!(self.h % 2 == 0 && self.w % 2 == 0, "avg_pool2 needs even dims");
        let (h, w) = (self.h, self.w);
        let (oh, ow) = (h / 2, w / 2);
        let out = self.val.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let c = a2.nrows();
            let mut out = Array2::<f64>::zeros((c, oh * ow));
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (y, x) = (oy * 2, ox * 2);
                        out[(ci, oy * ow + ox)] = 0.25
                            * (a2[(ci, y * w + x)]
                                + a2[(ci, y * w + x + 1)]
                                + a2[(ci, (y + 1) * w + x)]
                                + a2[(ci, (y + 1) * w + x + 1)]);
                    }
                }
            }
            out.into_dyn()
        });
        let val = self.val.tape().record(
            out,
            vec![self.val.id()],
            Box::new(move |g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let c = parents[0].shape()[0];
                let mut dx = Array2::<f64>::zeros((c, h * w));
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = 0.25 * g2[(ci, oy * ow + ox)];
                            let (y, x) = (oy * 2, ox * 2);
                            dx[(ci, y * w + x)] += gv;
                            dx[(ci, y * w + x + 1)] += gv;
                            dx[(ci, (y + 1) * w + x)] += gv;
                            dx[(ci, (y + 1) * w + x + 1)] += gv;
                        }
                    }
                }
                vec![dx.into_dyn()]
            }),
        );
        FeatureMap { val, h: oh, w: ow }
    }

    /// Pool down to an arbitrary grid by averaging equal blocks.
    /// Requires spatial dims divisible by the grid.
    pub fn avg_pool_to(&self, gh: usize, gw: usize) -> FeatureMap<'t> {
        assert!(
            self.h % gh == 0 && self.w % gw == 0,
            "avg_pool_to: dims {}x{} not divisible by grid {}x{}",
            self.h,
            self.w,
            gh,
            gw
        );
        let (h, w) = (self.h, self.w);
        let (bh, bw) = (h / gh, w / gw);
        let norm = 1.0 / (bh * bw) as f64;
        let out = self.val.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let c = a2.nrows();
            let mut out = Array2::<f64>::zeros((c, gh * gw));
            for ci in 0..c {
                for gy in 0..gh {
                    for gx in 0..gw {
                        let mut s = 0.0;
                        for dy in 0..bh {
                            for dx in 0..bw {
                                s += a2[(ci, (gy * bh + dy) * w + gx * bw + dx)];
                            }
                        }
                        out[(ci, gy * gw + gx)] = s * norm;
                    }
                }
            }
            out.into_dyn()
        });
        let val = self.val.tape().record(
            out,
            vec![self.val.id()],
            Box::new(move |g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let c = parents[0].shape()[0];
                let mut dx = Array2::<f64>::zeros((c, h * w));
                for ci in 0..c {
                    for gy in 0..gh {
                        for gx in 0..gw {
                            let gv = norm * g2[(ci, gy * gw + gx)];
                            for dy in 0..bh {
                                for dxi in 0..bw {
                                    dx[(ci, (gy * bh + dy) * w + gx * bw + dxi)] += gv;
                                }
                            }
                        }
                    }
                }
                vec![dx.into_dyn()]
            }),
        );
        FeatureMap { val, h: gh, w: gw }
    }

    /// 2x nearest-neighbor upsampling.
    pub fn upsample2(&self) -> FeatureMap<'t> {
        let (h, w) = (self.h, self.w);
        let (oh, ow) = (h * 2, w * 2);
        let out = self.val.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let c = a2.nrows();
            let mut out = Array2::<f64>::zeros((c, oh * ow));
            for ci in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        out[(ci, y * ow + x)] = a2[(ci, (y / 2) * w + x / 2)];
                    }
                }
            }
            out.into_dyn()
        });
        let val = self.val.tape().record(
            out,
            vec![self.val.id()],
            Box::new(move |g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let c = parents[0].shape()[0];
                let mut dx = Array2::<f64>::zeros((c, h * w));
                for ci in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            dx[(ci, (y / 2) * w + x / 2)] += g2[(ci, y * ow + x)];
                        }
                    }
                }
                vec![dx.into_dyn()]
            }),
        );
        FeatureMap { val, h: oh, w: ow }
    }

    /// Stack another map's channels under this one; spatial dims must match.
    pub fn concat_channels(&self, other: &FeatureMap<'t>) -> FeatureMap<'t> {
        assert_eq!((self.h, self.w), (other.h, other.w), "concat_channels dims");
        FeatureMap { val: self.val.concat_rows(other.val), h: self.h, w: self.w }
    }

    pub fn map_scalar(&self, f: impl FnOnce(Value<'t>) -> Value<'t>) -> FeatureMap<'t> {
        FeatureMap { val: f(self.val), h: self.h, w: self.w }
    }
}

/// Zero-padded ("same") im2col: `(c, h*w)` -> `(c*k*k, h*w)`.
fn im2col<'t>(x: Value<'t>, h: usize, w: usize, k: usize) -> Value<'t> {
    let pad = k / 2;
    let out = x.with_value(|a| {
        let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
        let c = a2.nrows();
        let mut out = Array2::<f64>::zeros((c * k * k, h * w));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xp in 0..w {
                            let sx = xp as isize + kx as isize - pad as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            out[(row, y * w + xp)] = a2[(ci, sy as usize * w + sx as usize)];
                        }
                    }
                }
            }
        }
        out.into_dyn()
    });
    x.tape().record(
        out,
        vec![x.id()],
        Box::new(move |g, parents, _| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let c = parents[0].shape()[0];
            let pad = k / 2;
            let mut dx = Array2::<f64>::zeros((c, h * w));
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        for y in 0..h {
                            let sy = y as isize + ky as isize - pad as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xp in 0..w {
                                let sx = xp as isize + kx as isize - pad as isize;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                dx[(ci, sy as usize * w + sx as usize)] += g2[(row, y * w + xp)];
                            }
                        }
                    }
                }
            }
            vec![dx.into_dyn()]
        }),
    )
}

#[allow(unused)]
fn debug_shape(a: &ArrayD<f64>) -> String {
    format!("{:?}", a.shape())
}
