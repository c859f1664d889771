//! Convolution, transposed convolution and max pooling via im2col + GEMM.
//!
//! Layouts: 1D activations are `[B, C, T]`, 2D activations `[B, C, F, T]`.
//! Conv weights are `[C_out, C_in, K]` / `[C_out, C_in, K_f, K_t]`;
//! transposed-conv weights are `[C_in, C_out, K]`.

use super::Tensor;

/// `c = a · b + beta · c` with `a` logically `m×k`, `b` logically `k×n`,
/// either stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the index ranges implied by the dimensions
    // and strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dSpec {
    /// Causal padding: `(K - 1) * dilation` on the left only.
    pub fn causal(kernel: usize, stride: usize, dilation: usize) -> Self {
        Self {
            stride,
            dilation,
            pad_left: (kernel - 1) * dilation,
            pad_right: 0,
        }
    }

    pub fn out_len(&self, len: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + self.pad_left + self.pad_right;
        assert!(padded >= span, "conv1d input too short: {padded} < {span}");
        (padded - span) / self.stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride_f: usize,
    pub stride_t: usize,
    pub pad_f: (usize, usize),
    pub pad_t: usize,
}

impl Conv2dSpec {
    /// "Same" padding along frequency (so a stride-2 layer halves an even
    /// extent) and causal padding along time.
    pub fn same_f_causal_t(kf: usize, kt: usize, stride_f: usize, stride_t: usize) -> Self {
        let total = kf.saturating_sub(stride_f);
        Self {
            stride_f,
            stride_t,
            pad_f: (total.div_ceil(2), total / 2),
            pad_t: kt - 1,
        }
    }

    pub fn out_dims(&self, f: usize, t: usize, kf: usize, kt: usize) -> (usize, usize) {
        let pf = f + self.pad_f.0 + self.pad_f.1;
        let pt = t + self.pad_t;
        assert!(pf >= kf && pt >= kt, "conv2d input {f}x{t} too small for kernel {kf}x{kt}");
        ((pf - kf) / self.stride_f + 1, (pt - kt) / self.stride_t + 1)
    }
}

fn im2col_1d(x: &[f64], cin: usize, t: usize, k: usize, spec: &Conv1dSpec, tout: usize, col: &mut [f64]) {
    for ci in 0..cin {
        for kk in 0..k {
            let row = &mut col[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
            for (to, c) in row.iter_mut().enumerate() {
                let idx = (to * spec.stride) as isize + off;
                *c = if idx >= 0 && (idx as usize) < t {
                    x[ci * t + idx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_1d(col: &[f64], cin: usize, t: usize, k: usize, spec: &Conv1dSpec, tout: usize, gx: &mut [f64]) {
    for ci in 0..cin {
        for kk in 0..k {
            let row = &col[(ci * k + kk) * tout..(ci * k + kk + 1) * tout];
            let off = (kk * spec.dilation) as isize - spec.pad_left as isize;
            for (to, c) in row.iter().enumerate() {
                let idx = (to * spec.stride) as isize + off;
                if idx >= 0 && (idx as usize) < t {
                    gx[ci * t + idx as usize] += c;
                }
            }
        }
    }
}

fn bias_grad(g: &[f64], batch: usize, cout: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; cout];
    for b in 0..batch {
        for (co, acc) in gb.iter_mut().enumerate() {
            let s = (b * cout + co) * plane;
            *acc += g[s..s + plane].iter().sum::<f64>();
        }
    }
    gb
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (co, chunk) in out.chunks_mut(plane).enumerate() {
        let bv = bias[co % bias.len()];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

/// 1D convolution of `[B, C_in, T]` with `[C_out, C_in, K]` weights.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv1dSpec) -> Tensor {
    assert!(spec.stride >= 1 && spec.dilation >= 1, "conv1d stride/dilation must be >= 1");
    let (batch, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, wcin, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, wcin, "conv1d channel mismatch: input {cin}, weight {wcin}");
    let tout = spec.out_len(t, k);
    let ck = cin * k;
    let direct = k == 1 && spec.stride == 1 && spec.pad_left == 0 && spec.pad_right == 0;
    let mut out = vec![0.0; batch * cout * tout];
    {
        let xv = x.data();
        let wv = w.data();
        let mut col = vec![0.0; if direct { 0 } else { ck * tout }];
        for b in 0..batch {
            let xb = &xv[b * cin * t..(b + 1) * cin * t];
            let src: &[f64] = if direct {
                xb
            } else {
                im2col_1d(xb, cin, t, k, &spec, tout, &mut col);
                &col
            };
            gemm(cout, ck, tout, &wv, false, src, false, &mut out[b * cout * tout..], 0.0);
        }
        if let Some(bias) = bias {
            add_bias(&mut out, &bias.data(), tout);
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xt, wt, has_bias) = (x.clone(), w.clone(), bias.is_some());
    Tensor::from_op(out, vec![batch, cout, tout], parents, move |g| {
        let xv = xt.data();
        let wv = wt.data();
        let mut gx = xt.requires_grad().then(|| vec![0.0; batch * cin * t]);
        let mut gw = wt.requires_grad().then(|| vec![0.0; cout * ck]);
        let mut col = vec![0.0; if direct { 0 } else { ck * tout }];
        let mut gcol = vec![0.0; if gx.is_some() { ck * tout } else { 0 }];
        for b in 0..batch {
            let gb = &g[b * cout * tout..(b + 1) * cout * tout];
            if let Some(gw) = gw.as_mut() {
                let xb = &xv[b * cin * t..(b + 1) * cin * t];
                let src: &[f64] = if direct {
                    xb
                } else {
                    im2col_1d(xb, cin, t, k, &spec, tout, &mut col);
                    &col
                };
                gemm(cout, tout, ck, gb, false, src, true, gw, 1.0);
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[b * cin * t..(b + 1) * cin * t];
                if direct {
                    gemm(ck, cout, tout, &wv, true, gb, false, gxb, 0.0);
                } else {
                    gemm(ck, cout, tout, &wv, true, gb, false, &mut gcol, 0.0);
                    col2im_1d(&gcol, cin, t, k, &spec, tout, gxb);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(Some(bias_grad(g, batch, cout, tout)));
        }
        grads
    })
}

fn im2col_2d(
    x: &[f64],
    dims: (usize, usize, usize),
    kernel: (usize, usize),
    spec: &Conv2dSpec,
    out: (usize, usize),
    col: &mut [f64],
) {
    let (cin, f, t) = dims;
    let (kf, kt) = kernel;
    let (fo, to) = out;
    let plane = fo * to;
    for ci in 0..cin {
        for a in 0..kf {
            for c in 0..kt {
                let row = &mut col[((ci * kf + a) * kt + c) * plane..][..plane];
                for i in 0..fo {
                    let fi = (i * spec.stride_f + a) as isize - spec.pad_f.0 as isize;
                    let dst = &mut row[i * to..(i + 1) * to];
                    if fi < 0 || fi as usize >= f {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(ci * f + fi as usize) * t..][..t];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let ti = (j * spec.stride_t + c) as isize - spec.pad_t as isize;
                        *d = if ti >= 0 && (ti as usize) < t { src[ti as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im_2d(
    col: &[f64],
    dims: (usize, usize, usize),
    kernel: (usize, usize),
    spec: &Conv2dSpec,
    out: (usize, usize),
    gx: &mut [f64],
) {
    let (cin, f, t) = dims;
    let (kf, kt) = kernel;
    let (fo, to) = out;
    let plane = fo * to;
    for ci in 0..cin {
        for a in 0..kf {
            for c in 0..kt {
                let row = &col[((ci * kf + a) * kt + c) * plane..][..plane];
                for i in 0..fo {
                    let fi = (i * spec.stride_f + a) as isize - spec.pad_f.0 as isize;
                    if fi < 0 || fi as usize >= f {
                        continue;
                    }
                    let dst = &mut gx[(ci * f + fi as usize) * t..][..t];
                    for (j, s) in row[i * to..(i + 1) * to].iter().enumerate() {
                        let ti = (j * spec.stride_t + c) as isize - spec.pad_t as isize;
                        if ti >= 0 && (ti as usize) < t {
                            dst[ti as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// 2D convolution of `[B, C_in, F, T]` with `[C_out, C_in, K_f, K_t]` weights.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: Conv2dSpec) -> Tensor {
    assert!(spec.stride_f >= 1 && spec.stride_t >= 1, "conv2d stride must be >= 1");
    let (batch, cin, f, t) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (cout, wcin, kf, kt) = (w.dim(0), w.dim(1), w.dim(2), w.dim(3));
    assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
    let (fo, to) = spec.out_dims(f, t, kf, kt);
    let plane = fo * to;
    let ck = cin * kf * kt;
    let direct = kf == 1 && kt == 1 && spec == Conv2dSpec::same_f_causal_t(1, 1, 1, 1);
    let in_plane = cin * f * t;
    let mut out = vec![0.0; batch * cout * plane];
    {
        let xv = x.data();
        let wv = w.data();
        let mut col = vec![0.0; if direct { 0 } else { ck * plane }];
        for b in 0..batch {
            let xb = &xv[b * in_plane..(b + 1) * in_plane];
            let src: &[f64] = if direct {
                xb
            } else {
                im2col_2d(xb, (cin, f, t), (kf, kt), &spec, (fo, to), &mut col);
                &col
            };
            gemm(cout, ck, plane, &wv, false, src, false, &mut out[b * cout * plane..], 0.0);
        }
        if let Some(bias) = bias {
            add_bias(&mut out, &bias.data(), plane);
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xt, wt, has_bias) = (x.clone(), w.clone(), bias.is_some());
    Tensor::from_op(out, vec![batch, cout, fo, to], parents, move |g| {
        let xv = xt.data();
        let wv = wt.data();
        let mut gx = xt.requires_grad().then(|| vec![0.0; batch * in_plane]);
        let mut gw = wt.requires_grad().then(|| vec![0.0; cout * ck]);
        let mut col = vec![0.0; if direct { 0 } else { ck * plane }];
        let mut gcol = vec![0.0; if gx.is_some() && !direct { ck * plane } else { 0 }];
        for b in 0..batch {
            let gb = &g[b * cout * plane..(b + 1) * cout * plane];
            if let Some(gw) = gw.as_mut() {
                let xb = &xv[b * in_plane..(b + 1) * in_plane];
                let src: &[f64] = if direct {
                    xb
                } else {
                    im2col_2d(xb, (cin, f, t), (kf, kt), &spec, (fo, to), &mut col);
                    &col
                };
                gemm(cout, plane, ck, gb, false, src, true, gw, 1.0);
            }
            if let Some(gx) = gx.as_mut() {
                let gxb = &mut gx[b * in_plane..(b + 1) * in_plane];
                if direct {
                    gemm(ck, cout, plane, &wv, true, gb, false, gxb, 0.0);
                } else {
                    gemm(ck, cout, plane, &wv, true, gb, false, &mut gcol, 0.0);
                    col2im_2d(&gcol, (cin, f, t), (kf, kt), &spec, (fo, to), gxb);
                }
            }
        }
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(Some(bias_grad(g, batch, cout, plane)));
        }
        grads
    })
}

/// Causal transposed convolution: `[B, C_in, T]` → `[B, C_out, T * stride]`.
/// Input step `j` contributes to outputs `j*stride .. j*stride + K`, and the
/// full-length output is trimmed to its first `T * stride` samples, so output
/// `n` depends only on inputs `<= n / stride`.
pub fn conv_transpose1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize) -> Tensor {
    assert!(stride >= 1, "conv_transpose1d stride must be >= 1");
    let (batch, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
    let (wcin, cout, k) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin, wcin, "conv_transpose1d channel mismatch: input {cin}, weight {wcin}");
    let tout = t * stride;
    let ck = cout * k;
    let scatter = |cols: &[f64], out: &mut [f64]| {
        for co in 0..cout {
            for kk in 0..k {
                let row = &cols[(co * k + kk) * t..][..t];
                for (j, v) in row.iter().enumerate() {
                    let n = j * stride + kk;
                    if n < tout {
                        out[co * tout + n] += v;
                    }
                }
            }
        }
    };
    let mut out = vec![0.0; batch * cout * tout];
    {
        let xv = x.data();
        let wv = w.data();
        let mut cols = vec![0.0; ck * t];
        for b in 0..batch {
            gemm(ck, cin, t, &wv, true, &xv[b * cin * t..], false, &mut cols, 0.0);
            scatter(&cols, &mut out[b * cout * tout..(b + 1) * cout * tout]);
        }
        if let Some(bias) = bias {
            add_bias(&mut out, &bias.data(), tout);
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xt, wt, has_bias) = (x.clone(), w.clone(), bias.is_some());
    Tensor::from_op(out, vec![batch, cout, tout], parents, move |g| {
        let xv = xt.data();
        let wv = wt.data();
        let mut gx = xt.requires_grad().then(|| vec![0.0; batch * cin * t]);
        let mut gw = wt.requires_grad().then(|| vec![0.0; cin * ck]);
        let mut gcols = vec![0.0; ck * t];
        for b in 0..batch {
            let gb = &g[b * cout * tout..(b + 1) * cout * tout];
            for co in 0..cout {
                for kk in 0..k {
                    let row = &mut gcols[(co * k + kk) * t..][..t];
                    for (j, v) in row.iter_mut().enumerate() {
                        let n = j * stride + kk;
                        *v = if n < tout { gb[co * tout + n] } else { 0.0 };
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                gemm(cin, ck, t, &wv, false, &gcols, false, &mut gx[b * cin * t..], 0.0);
            }
            if let Some(gw) = gw.as_mut() {
                gemm(cin, t, ck, &xv[b * cin * t..], false, &gcols, true, gw, 1.0);
            }
        }
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(Some(bias_grad(g, batch, cout, tout)));
        }
        grads
    })
}

/// Max pooling over `[B, C, F, T]` with `-inf` padding, "same" along
/// frequency and causal along time.
pub fn max_pool2d(x: &Tensor, kernel: (usize, usize), spec: Conv2dSpec) -> Tensor {
    let (batch, c, f, t) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (kf, kt) = kernel;
    let (fo, to) = spec.out_dims(f, t, kf, kt);
    let xv = x.data();
    let mut out = vec![f64::NEG_INFINITY; batch * c * fo * to];
    let mut arg = vec![usize::MAX; out.len()];
    for bc in 0..batch * c {
        let base = bc * f * t;
        for i in 0..fo {
            for j in 0..to {
                let o = (bc * fo + i) * to + j;
                for a in 0..kf {
                    let fi = (i * spec.stride_f + a) as isize - spec.pad_f.0 as isize;
                    if fi < 0 || fi as usize >= f {
                        continue;
                    }
                    for b in 0..kt {
                        let ti = (j * spec.stride_t + b) as isize - spec.pad_t as isize;
                        if ti < 0 || ti as usize >= t {
                            continue;
                        }
                        let idx = base + fi as usize * t + ti as usize;
                        if xv[idx] > out[o] {
                            out[o] = xv[idx];
                            arg[o] = idx;
                        }
                    }
                }
            }
        }
    }
    drop(xv);
    let n = x.numel();
    Tensor::from_op(out, vec![batch, c, fo, to], vec![x.clone()], move |g| {
        let mut gx = vec![0.0; n];
        for (&a, gv) in arg.iter().zip(g) {
            if a != usize::MAX {
                gx[a] += gv;
            }
        }
        vec![Some(gx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_input() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.5, 0.25], &[1, 1, 4]);
        let w = Tensor::from_vec(vec![1.0], &[1, 1, 1]);
        let y = conv1d(&x, &w, None, Conv1dSpec::causal(1, 1, 1));
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn three_tap_matches_direct_sum() {
        let xs = [1.0, 2.0, -1.0, 0.5, 3.0];
        let ws = [0.5, -1.0, 2.0];
        let x = Tensor::from_vec(xs.to_vec(), &[1, 1, 5]);
        let w = Tensor::from_vec(ws.to_vec(), &[1, 1, 3]);
        let y = conv1d(&x, &w, None, Conv1dSpec::causal(3, 1, 1)).to_vec();
        for t in 0..5 {
            let mut expect = 0.0;
            for k in 0..3 {
                let idx = t as isize + k as isize - 2;
                if idx >= 0 {
                    expect += ws[k] * xs[idx as usize];
                }
            }
            assert!((y[t] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn strided_causal_output_length() {
        let x = Tensor::zeros(&[2, 3, 10]);
        let w = Tensor::zeros(&[4, 3, 4]);
        let y = conv1d(&x, &w, None, Conv1dSpec::causal(4, 2, 1));
        assert_eq!(y.shape(), [2, 4, 5]);
    }

    #[test]
    fn conv2d_stem_shape() {
        let x = Tensor::zeros(&[1, 1, 320, 32]);
        let w = Tensor::zeros(&[64, 1, 7, 7]);
        let y = conv2d(&x, &w, None, Conv2dSpec::same_f_causal_t(7, 7, 2, 1));
        assert_eq!(y.shape(), [1, 64, 160, 32]);
    }

    #[test]
    fn conv2d_identity_1x1() {
        let v: Vec<f64> = (0..24).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = Tensor::from_vec(v.clone(), &[1, 2, 3, 4]);
        let w = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]);
        let y = conv2d(&x, &w, None, Conv2dSpec::same_f_causal_t(1, 1, 1, 1));
        assert_eq!(y.to_vec(), v);
    }

    #[test]
    fn transposed_conv_is_causal_and_upsamples() {
        let x = Tensor::from_vec(vec![1.0, 0.0, 0.0], &[1, 1, 3]);
        let w = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 4]);
        let y = conv_transpose1d(&x, &w, None, 2);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_shape_and_value() {
        let x = Tensor::from_vec((0..16).map(f64::from).collect(), &[1, 1, 4, 4]);
        let y = max_pool2d(&x, (3, 3), Conv2dSpec::same_f_causal_t(3, 3, 2, 1));
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        // Output (0, 0) sees rows 0..=1 (row -1 is padding), time 0 only.
        assert_eq!(y.to_vec()[0], 4.0);
    }
}
