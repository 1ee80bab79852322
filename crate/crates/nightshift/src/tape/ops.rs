//! Tape operations: forward computation plus recorded backward closures.

use super::Value;
use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, IxDyn};

fn scalar_like(template: &ArrayD<f64>, x: f64) -> ArrayD<f64> {
    ArrayD::from_elem(template.raw_dim(), x)
}

/// Broadcast rule shared by the binary elementwise ops: shapes must match,
/// or one side must hold a single element.
fn binary_case(a: &[usize], b: &[usize], an: usize, bn: usize, op: &str) -> usize {
    if a == b {
        0
    } else if bn == 1 {
        1
    } else if an == 1 {
        2
    } else {
        panic!("{op}: incompatible shapes {a:?} vs {b:?}");
    }
}

fn reduce_to(template: &ArrayD<f64>, g: ArrayD<f64>) -> ArrayD<f64> {
    if g.shape() == template.shape() {
        g
    } else {
        scalar_like(template, g.sum())
    }
}

macro_rules! binary_op {
    ($name:ident, $fwd:expr, $bwd_a:expr, $bwd_b:expr) => {
        pub fn $name(self, rhs: Value<'t>) -> Value<'t> {
            assert!(std::ptr::eq(self.tape, rhs.tape), "values from different tapes");
            let out = self.with_value(|a| {
                rhs.with_value(|b| {
                    let case =
                        binary_case(a.shape(), b.shape(), a.len(), b.len(), stringify!($name));
                    let fwd: fn(f64, f64) -> f64 = $fwd;
                    match case {
                        0 => ndarray::Zip::from(a).and(b).map_collect(|&x, &y| fwd(x, y)),
                        1 => {
                            let y = *b.iter().next().unwrap();
                            a.mapv(|x| fwd(x, y))
                        }
                        _ => {
                            let x = *a.iter().next().unwrap();
                            b.mapv(|y| fwd(x, y))
                        }
                    }
                })
            });
            self.tape.record(
                out,
                vec![self.id, rhs.id],
                Box::new(move |g, parents, _| {
                    let (a, b) = (parents[0], parents[1]);
                    let bwd_a: fn(f64, f64, f64) -> f64 = $bwd_a;
                    let bwd_b: fn(f64, f64, f64) -> f64 = $bwd_b;
                    let broadcast = |t: &ArrayD<f64>| {
                        if t.len() == 1 {
                            scalar_like(g, *t.iter().next().unwrap())
                        } else {
                            t.clone()
                        }
                    };
                    let (af, bf) = (broadcast(a), broadcast(b));
                    let ga = ndarray::Zip::from(g)
                        .and(&af)
                        .and(&bf)
                        .map_collect(|&gi, &x, &y| bwd_a(gi, x, y));
                    let gb = ndarray::Zip::from(g)
                        .and(&af)
                        .and(&bf)
                        .map_collect(|&gi, &x, &y| bwd_b(gi, x, y));
                    vec![reduce_to(a, ga), reduce_to(b, gb)]
                }),
            )
        }
    };
}

macro_rules! unary_op {
    ($name:ident, $fwd:expr, $bwd:expr) => {
        pub fn $name(self) -> Value<'t> {
            let fwd: fn(f64) -> f64 = $fwd;
            let out = self.with_value(|a| a.mapv(fwd));
            self.tape.record(
                out,
                vec![self.id],
                Box::new(move |g, parents, out| {
                    let bwd: fn(f64, f64, f64) -> f64 = $bwd;
                    vec![ndarray::Zip::from(g)
                        .and(parents[0])
                        .and(out)
                        .map_collect(|&gi, &x, &y| bwd(gi, x, y))]
                }),
            )
        }
    };
}

fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Value<'t> {
    binary_op!(add, |x, y| x + y, |g, _, _| g, |g, _, _| g);
    binary_op!(sub, |x, y| x - y, |g, _, _| g, |g, _, _| -g);
    binary_op!(mul, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x);
    binary_op!(div, |x, y| x / y, |g, _, y| g / y, |g, x, y| -g * x / (y * y));
    binary_op!(
        maximum,
        |x, y| if x >= y { x } else { y },
        |g, x, y| if x >= y { g } else { 0.0 },
        |g, x, y| if x >= y { 0.0 } else { g }
    );
    binary_op!(
        minimum,
        |x, y| if x <= y { x } else { y },
        |g, x, y| if x <= y { g } else { 0.0 },
        |g, x, y| if x <= y { 0.0 } else { g }
    );

    unary_op!(neg, |x| -x, |g, _, _| -g);
    unary_op!(exp, |x| x.exp(), |g, _, y| g * y);
    unary_op!(ln, |x| x.ln(), |g, x, _| g / x);
    unary_op!(sqrt, |x| x.sqrt(), |g, _, y| g / (2.0 * y));
    unary_op!(abs, |x| x.abs(), |g, x, _| g * if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    });
    unary_op!(atan, |x| x.atan(), |g, x, _| g / (1.0 + x * x));
    unary_op!(relu, |x| x.max(0.0), |g, x, _| if x > 0.0 { g } else { 0.0 });
    unary_op!(sigmoid, stable_sigmoid, |g, _, y| g * y * (1.0 - y));
    unary_op!(softplus, stable_softplus, |g, x, _| g * stable_sigmoid(x));

    pub fn add_scalar(self, s: f64) -> Value<'t> {
        let out = self.with_value(|a| a.mapv(|x| x + s));
        self.tape
            .record(out, vec![self.id], Box::new(move |g, _, _| vec![g.clone()]))
    }

    pub fn mul_scalar(self, s: f64) -> Value<'t> {
        let out = self.with_value(|a| a.mapv(|x| x * s));
        self.tape
            .record(out, vec![self.id], Box::new(move |g, _, _| vec![g.mapv(|gi| gi * s)]))
    }

    /// `s - self`.
    pub fn rsub_scalar(self, s: f64) -> Value<'t> {
        self.mul_scalar(-1.0).add_scalar(s)
    }

    pub fn square(self) -> Value<'t> {
        self.mul(self)
    }

    /// Clamp to `[lo, hi]`; the gradient passes through the closed interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Value<'t> {
        let out = self.with_value(|a| a.mapv(|x| x.clamp(lo, hi)));
        self.tape.record(
            out,
            vec![self.id],
            Box::new(move |g, parents, _| {
                vec![ndarray::Zip::from(g)
                    .and(parents[0])
                    .map_collect(|&gi, &x| if (lo..=hi).contains(&x) { gi } else { 0.0 })]
            }),
        )
    }

    /// Sum of all elements, as a 0-dim scalar.
    pub fn sum(self) -> Value<'t> {
        let out = self.with_value(|a| ArrayD::from_elem(IxDyn(&[]), a.sum()));
        self.tape.record(
            out,
            vec![self.id],
            Box::new(|g, parents, _| {
                let gs = *g.iter().next().unwrap();
                vec![scalar_like(parents[0], gs)]
            }),
        )
    }

    /// Mean of all elements, as a 0-dim scalar.
    pub fn mean(self) -> Value<'t> {
        let n = self.len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Value<'t> {
        let shape = shape.to_vec();
        let out = self.with_value(|a| {
            a.clone()
                .into_shape_with_order(IxDyn(&shape))
                .expect("reshape: element count mismatch")
        });
        self.tape.record(
            out,
            vec![self.id],
            Box::new(|g, parents, _| {
                vec![g
                    .clone()
                    .into_shape_with_order(parents[0].raw_dim())
                    .expect("reshape backward")]
            }),
        )
    }

    /// Transpose a 2-D tensor.
    pub fn transpose(self) -> Value<'t> {
        let out = self.with_value(|a| a.t().to_owned());
        self.tape
            .record(out, vec![self.id], Box::new(|g, _, _| vec![g.t().to_owned()]))
    }

    /// 2-D matrix product.
    pub fn matmul(self, rhs: Value<'t>) -> Value<'t> {
        assert!(std::ptr::eq(self.tape, rhs.tape), "values from different tapes");
        let out = self.with_value(|a| {
            rhs.with_value(|b| {
                let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs not 2-D");
                let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs not 2-D");
                assert_eq!(a2.ncols(), b2.nrows(), "matmul: {:?} x {:?}", a.shape(), b.shape());
                a2.dot(&b2).into_dyn()
            })
        });
        self.tape.record(
            out,
            vec![self.id, rhs.id],
            Box::new(|g, parents, _| {
                let a = parents[0].view().into_dimensionality::<Ix2>().unwrap();
                let b = parents[1].view().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                vec![g2.dot(&b.t()).into_dyn(), a.t().dot(&g2).into_dyn()]
            }),
        )
    }

    /// Gather elements of the flattened tensor; result is 1-D.
    pub fn gather_flat(self, indices: &[usize]) -> Value<'t> {
        let idx = indices.to_vec();
        let out = self.with_value(|a| {
            let flat = a.view().into_shape_with_order(IxDyn(&[a.len()])).unwrap();
            Array1::from_iter(idx.iter().map(|&i| flat[i])).into_dyn()
        });
        self.tape.record(
            out,
            vec![self.id],
            Box::new(move |g, parents, _| {
                let mut acc = vec![0.0; parents[0].len()];
                for (gi, &i) in g.iter().zip(&idx) {
                    acc[i] += *gi;
                }
                vec![ArrayD::from_shape_vec(parents[0].raw_dim(), acc).unwrap()]
            }),
        )
    }

    /// Gather rows of a 2-D tensor.
    pub fn gather_rows(self, indices: &[usize]) -> Value<'t> {
        let idx = indices.to_vec();
        let out = self.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().expect("gather_rows on non-2-D");
            let mut out = Array2::zeros((idx.len(), a2.ncols()));
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).assign(&a2.row(i));
            }
            out.into_dyn()
        });
        self.tape.record(
            out,
            vec![self.id],
            Box::new(move |g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut acc = Array2::<f64>::zeros(
                    parents[0].view().into_dimensionality::<Ix2>().unwrap().raw_dim(),
                );
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = acc.row_mut(i);
                    row += &g2.row(r);
                }
                vec![acc.into_dyn()]
            }),
        )
    }

    /// Vertically stack two 2-D tensors with equal column counts.
    pub fn concat_rows(self, below: Value<'t>) -> Value<'t> {
        let out = self.with_value(|a| {
            below.with_value(|b| {
                let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                ndarray::concatenate(Axis(0), &[a2, b2]).expect("concat_rows").into_dyn()
            })
        });
        self.tape.record(
            out,
            vec![self.id, below.id],
            Box::new(|g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let na = parents[0].shape()[0];
                vec![
                    g2.slice(ndarray::s![..na, ..]).to_owned().into_dyn(),
                    g2.slice(ndarray::s![na.., ..]).to_owned().into_dyn(),
                ]
            }),
        )
    }

    /// Add a per-row bias (1-D, length = rows) to every column of a 2-D tensor.
    pub fn bias_add(self, bias: Value<'t>) -> Value<'t> {
        let out = self.with_value(|a| {
            bias.with_value(|b| {
                let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                let b1 = b.view().into_dimensionality::<Ix1>().unwrap();
                assert_eq!(a2.nrows(), b1.len(), "bias_add: rows vs bias length");
                let mut out = a2.to_owned();
                for (mut row, &bv) in out.rows_mut().into_iter().zip(b1.iter()) {
                    row += bv;
                }
                out.into_dyn()
            })
        });
        self.tape.record(
            out,
            vec![self.id, bias.id],
            Box::new(|g, _, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                vec![g.clone(), g2.sum_axis(Axis(1)).into_dyn()]
            }),
        )
    }

    /// Row-wise softmax of a 2-D tensor, stabilized by max subtraction.
    pub fn softmax_rows(self) -> Value<'t> {
        let out = self.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().expect("softmax_rows on non-2-D");
            let mut out = a2.to_owned();
            for mut row in out.rows_mut() {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - m).exp());
                let s = row.sum();
                row.mapv_inplace(|x| x / s);
            }
            out.into_dyn()
        });
        self.tape.record(
            out,
            vec![self.id],
            Box::new(|g, _, out| {
                let s = out.view().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<f64>::zeros(s.raw_dim());
                for ((mut drow, srow), grow) in
                    dx.rows_mut().into_iter().zip(s.rows()).zip(g2.rows())
                {
                    let dot: f64 = srow.iter().zip(grow.iter()).map(|(&si, &gi)| si * gi).sum();
                    for ((d, &si), &gi) in drow.iter_mut().zip(srow.iter()).zip(grow.iter()) {
                        *d = si * (gi - dot);
                    }
                }
                vec![dx.into_dyn()]
            }),
        )
    }

    /// Normalize each row of a 2-D tensor to unit Euclidean norm.
    /// Rows with norm below `eps` are divided by `eps` instead.
    pub fn l2_normalize_rows(self, eps: f64) -> Value<'t> {
        let out = self.with_value(|a| {
            let a2 = a.view().into_dimensionality::<Ix2>().expect("l2_normalize_rows on non-2-D");
            let mut out = a2.to_owned();
            for mut row in out.rows_mut() {
                let n = row.iter().map(|&x| x * x).sum::<f64>().sqrt().max(eps);
                row.mapv_inplace(|x| x / n);
            }
            out.into_dyn()
        });
        self.tape.record(
            out,
            vec![self.id],
            Box::new(move |g, parents, out| {
                let x = parents[0].view().into_dimensionality::<Ix2>().unwrap();
                let y = out.view().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<f64>::zeros(x.raw_dim());
                for (((mut drow, xrow), yrow), grow) in
                    dx.rows_mut().into_iter().zip(x.rows()).zip(y.rows()).zip(g2.rows())
                {
                    let norm = xrow.iter().map(|&v| v * v).sum::<f64>().sqrt();
                    if norm > eps {
                        let dot: f64 =
                            grow.iter().zip(yrow.iter()).map(|(&gi, &yi)| gi * yi).sum();
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow.iter()).zip(yrow.iter()) {
                            *d = (gi - dot * yi) / norm;
                        }
                    } else {
                        for (d, &gi) in drow.iter_mut().zip(grow.iter()) {
                            *d = gi / eps;
                        }
                    }
                }
                vec![dx.into_dyn()]
            }),
        )
    }
}

impl<'t> std::ops::Add for Value<'t> {
    type Output = Value<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Value::add(self, rhs)
    }
}

impl<'t> std::ops::Sub for Value<'t> {
    type Output = Value<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Value::sub(self, rhs)
    }
}

impl<'t> std::ops::Mul for Value<'t> {
    type Output = Value<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Value::mul(self, rhs)
    }
}

impl<'t> std::ops::Div for Value<'t> {
    type Output = Value<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        Value::div(self, rhs)
    }
}

impl<'t> std::ops::Neg for Value<'t> {
    type Output = Value<'t>;
    fn neg(self) -> Self::Output {
        Value::neg(self)
    }
}
