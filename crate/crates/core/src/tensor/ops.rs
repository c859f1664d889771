//! Elementwise, reduction and layout ops.

use std::rc::Rc;

use super::Tensor;

/// Marks a gather slot that reads zero.
pub const GATHER_ZERO: usize = usize::MAX;

/// `(outer, dim, inner)` sizes around `axis` of `shape`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64 + 'static) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        let x = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g| {
            let xv = x.data();
            vec![Some(g.iter().zip(xv.iter()).map(|(g, &v)| g * df(v)).collect())]
        })
    }

    fn assert_same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shapes {:?} and {:?} differ",
            self.shape(),
            other.shape()
        );
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "add");
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "sub");
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a - b).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], |g| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        })
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "mul");
        let data = self.data().iter().zip(other.data().iter()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], move |g| {
            let ga = a
                .requires_grad()
                .then(|| g.iter().zip(b.data().iter()).map(|(g, v)| g * v).collect());
            let gb = b
                .requires_grad()
                .then(|| g.iter().zip(a.data().iter()).map(|(g, v)| g * v).collect());
            vec![ga, gb]
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |v| if v > 0.0 { v } else { slope * v },
            move |v| if v > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, f64::signum)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|v| v * v, |v| 2.0 * v)
    }

    /// `log10(max(x, floor))`; zero gradient where the floor is active.
    pub fn log10_clamped(&self, floor: f64) -> Tensor {
        self.unary(
            move |v| v.max(floor).log10(),
            move |v| {
                if v > floor {
                    1.0 / (v * std::f64::consts::LN_10)
                } else {
                    0.0
                }
            },
        )
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            self.numel(),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {shape:?}",
            self.shape()
        );
        Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let (outer, dim, inner) = split_axis(self.shape(), axis);
        assert!(start + len <= dim, "narrow {start}+{len} beyond {dim}");
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            let mut out = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(out)]
        })
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of nothing");
        let base_shape = parts[0].shape().to_vec();
        for p in parts {
            assert_eq!(p.rank(), base_shape.len(), "concat rank");
            for (i, (&a, &b)) in p.shape().iter().zip(&base_shape).enumerate() {
                assert!(i == axis || a == b, "concat shapes {:?} vs {base_shape:?}", p.shape());
            }
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let dims: Vec<usize> = parts.iter().map(|p| p.dim(axis)).collect();
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &d) in parts.iter().zip(&dims) {
                let src = p.data();
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        Tensor::from_op(data, shape, parts.to_vec(), move |g| {
            let mut offset = 0;
            dims.iter()
                .map(|&d| {
                    let mut out = Vec::with_capacity(outer * d * inner);
                    for o in 0..outer {
                        let b = (o * total + offset) * inner;
                        out.extend_from_slice(&g[b..b + d * inner]);
                    }
                    offset += d;
                    Some(out)
                })
                .collect()
        })
    }

    /// `out[i] = self[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    pub fn gather(&self, index: Rc<Vec<usize>>, shape: &[usize]) -> Tensor {
        assert_eq!(index.len(), shape.iter().product::<usize>(), "gather index size");
        let src = self.data();
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { src[i] })
            .collect();
        drop(src);
        let n = self.numel();
        Tensor::from_op(data, shape.to_vec(), vec![self.clone()], move |g| {
            let mut out = vec![0.0; n];
            for (&i, gv) in index.iter().zip(g) {
                if i != GATHER_ZERO {
                    out[i] += gv;
                }
            }
            vec![Some(out)]
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let shape = self.shape();
        assert_eq!(axes.len(), shape.len(), "permute rank");
        let rank = shape.len();
        let mut strides = vec![1; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n = self.numel();
        let mut index = Vec::with_capacity(n);
        let mut coord = vec![0usize; rank];
        for _ in 0..n {
            index.push(coord.iter().zip(axes).map(|(&c, &a)| c * strides[a]).sum());
            for d in (0..rank).rev() {
                coord[d] += 1;
                if coord[d] < out_shape[d] {
                    break;
                }
                coord[d] = 0;
            }
        }
        self.gather(Rc::new(index), &out_shape)
    }

    /// Repeats every step of the last axis `factor` times.
    pub fn repeat_time(&self, factor: usize) -> Tensor {
        let t = *self.shape().last().expect("repeat_time on scalar");
        let rows = self.numel() / t.max(1);
        let src = self.data();
        let mut data = Vec::with_capacity(self.numel() * factor);
        for r in 0..rows {
            for &v in &src[r * t..(r + 1) * t] {
                data.extend(std::iter::repeat(v).take(factor));
            }
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = t * factor;
        Tensor::from_op(data, shape, vec![self.clone()], move |g| {
            let out = g.chunks(factor).map(|c| c.iter().sum()).collect();
            vec![Some(out)]
        })
    }

    /// `gamma * self + beta` with `gamma`, `beta` of shape `[B, C, T]`. A
    /// rank-4 `self` of shape `[B, C, F, T]` is modulated identically at
    /// every `F` position.
    pub fn film(&self, gamma: &Tensor, beta: &Tensor) -> Tensor {
        let s = self.shape();
        assert!(s.len() == 3 || s.len() == 4, "film expects rank 3 or 4");
        let (b, c, t) = (s[0], s[1], s[s.len() - 1]);
        let f = if s.len() == 4 { s[2] } else { 1 };
        assert_eq!(gamma.shape(), [b, c, t], "film gamma shape");
        assert_eq!(beta.shape(), [b, c, t], "film beta shape");
        let x = self.data();
        let gv = gamma.data();
        let bv = beta.data();
        let mut data = vec![0.0; x.len()];
        for bc in 0..b * c {
            for fi in 0..f {
                let row = (bc * f + fi) * t;
                for ti in 0..t {
                    data[row + ti] = gv[bc * t + ti] * x[row + ti] + bv[bc * t + ti];
                }
            }
        }
        drop((x, gv, bv));
        let (xt, gt) = (self.clone(), gamma.clone());
        Tensor::from_op(
            data,
            s.to_vec(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let x = xt.data();
                let gv = gt.data();
                let mut gx = vec![0.0; x.len()];
                let mut gg = vec![0.0; b * c * t];
                let mut gb = vec![0.0; b * c * t];
                for bc in 0..b * c {
                    for fi in 0..f {
                        let row = (bc * f + fi) * t;
                        for ti in 0..t {
                            let go = g[row + ti];
                            gx[row + ti] = go * gv[bc * t + ti];
                            gg[bc * t + ti] += go * x[row + ti];
                            gb[bc * t + ti] += go;
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            },
        )
    }

    /// Forward value `value`, backward identity into `self`.
    pub fn straight_through(&self, value: Vec<f64>) -> Tensor {
        assert_eq!(value.len(), self.numel(), "straight_through size");
        Tensor::from_op(value, self.shape().to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }
}
