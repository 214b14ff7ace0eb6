//! Batched NHWC kernels. Every kernel is a pure function of its inputs;
//! batch items are processed independently (possibly in parallel) and any
//! cross-item reduction is summed sequentially in batch order so results do
//! not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Spatial geometry of a (depthwise or dense) convolution for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, NnError> {
        if kernel == 0 || stride == 0 {
            return Err(NnError::ShapeMismatch("kernel and stride must be positive".into()));
        }
        let (out_h, pad_top) = axis(in_h, kernel, stride, padding)?;
        let (out_w, pad_left) = axis(in_w, kernel, stride, padding)?;
        Ok(Self { in_h, in_w, kernel, stride, out_h, out_w, pad_top, pad_left })
    }

    #[inline(always)]
    fn input_row(&self, out_y: usize, ky: usize) -> Option<usize> {
        let y = (out_y * self.stride + ky) as isize - self.pad_top as isize;
        (y >= 0 && (y as usize) < self.in_h).then_some(y as usize)
    }

    #[inline(always)]
    fn input_col(&self, out_x: usize, kx: usize) -> Option<usize> {
        let x = (out_x * self.stride + kx) as isize - self.pad_left as isize;
        (x >= 0 && (x as usize) < self.in_w).then_some(x as usize)
    }
}

// TensorFlow convention: Same gives ceil(n / stride) outputs with the odd
// padding pixel placed at the bottom/right.
fn axis(n: usize, k: usize, s: usize, padding: Padding) -> Result<(usize, usize), NnError> {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if n < k {
                return Err(NnError::ShapeMismatch(format!(
                    "valid convolution with kernel {k} on extent {n}"
                )));
            }
            Ok(((n - k) / s + 1, 0))
        }
    }
}

fn dims4(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4], NnError> {
    match *t.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        ref s => Err(NnError::ShapeMismatch(format!("{what}: expected [N,H,W,C], got {s:?}"))),
    }
}

fn dims2(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 2], NnError> {
    match *t.shape() {
        [n, f] => Ok([n, f]),
        ref s => Err(NnError::ShapeMismatch(format!("{what}: expected [N,F], got {s:?}"))),
    }
}

fn check_shape(t: &Tensor<impl Scalar>, expected: &[usize], what: &str) -> Result<(), NnError> {
    if t.shape() != expected {
        return Err(NnError::ShapeMismatch(format!(
            "{what}: expected {expected:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn sum_in_order(parts: impl IntoIterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

fn to_tensor<T: Scalar>(shape: &[usize], values: Vec<f64>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), values.into_iter().map(T::of_f64).collect())
        .expect("kernel produced consistent shape")
}

// ---------------------------------------------------------------------------
// Dense 2-D convolution, weights [k, k, Cin, Cout].

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let [n, h, w, cin] = dims4(input, "conv2d input")?;
    let [k, k2, wcin, cout] = dims4(weights, "conv2d weights")?;
    if k != k2 || wcin != cin {
        return Err(NnError::ShapeMismatch(format!(
            "conv2d weights {:?} incompatible with input channels {cin}",
            weights.shape()
        )));
    }
    check_shape(bias, &[cout], "conv2d bias")?;
    let g = ConvGeometry::new(h, w, k, stride, padding)?;
    let in_len = h * w * cin;
    let out_len = g.out_h * g.out_w * cout;
    let mut out = vec![T::zero(); n * out_len];
    let (wd, bd, xd) = (weights.data(), bias.data(), input.data());
    out.par_chunks_mut(out_len).enumerate().for_each(|(i, dst)| {
        conv_forward_item(&xd[i * in_len..(i + 1) * in_len], wd, bd, &g, cin, cout, dst);
    });
    Tensor::new(vec![n, g.out_h, g.out_w, cout], out)
}

fn conv_forward_item<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    g: &ConvGeometry,
    cin: usize,
    cout: usize,
    dst: &mut [T],
) {
    let k = g.kernel;
    let mut acc = vec![0.0f64; cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            for (a, &bv) in acc.iter_mut().zip(b) {
                *a = bv.as_f64();
            }
            for ky in 0..k {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..k {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let px = &x[(iy * g.in_w + ix) * cin..][..cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &xv) in px.iter().enumerate() {
                        let xv = xv.as_f64();
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv.as_f64();
                        }
                    }
                }
            }
            let o = &mut dst[(oy * g.out_w + ox) * cout..][..cout];
            for (d, &a) in o.iter_mut().zip(&acc) {
                *d = T::of_f64(a);
            }
        }
    }
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    out_grad: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads<T>, NnError> {
    let [n, h, w, cin] = dims4(input, "conv2d input")?;
    let [k, _, _, cout] = dims4(weights, "conv2d weights")?;
    let g = ConvGeometry::new(h, w, k, stride, padding)?;
    check_shape(out_grad, &[n, g.out_h, g.out_w, cout], "conv2d output gradient")?;
    let in_len = h * w * cin;
    let out_len = g.out_h * g.out_w * cout;
    let (xd, wd, gd) = (input.data(), weights.data(), out_grad.data());
    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            conv_backward_item(
                &xd[i * in_len..(i + 1) * in_len],
                wd,
                &gd[i * out_len..(i + 1) * out_len],
                &g,
                cin,
                cout,
            )
        })
        .collect();
    let mut dx = Vec::with_capacity(n * in_len);
    let mut dws = Vec::with_capacity(n);
    let mut dbs = Vec::with_capacity(n);
    for (px, pw, pb) in parts {
        dx.extend(px.into_iter().map(T::of_f64));
        dws.push(pw);
        dbs.push(pb);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: to_tensor(weights.shape(), sum_in_order(dws, wd.len())),
        bias: to_tensor(&[cout], sum_in_order(dbs, cout)),
    })
}

fn conv_backward_item<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeometry,
    cin: usize,
    cout: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = g.kernel;
    let mut dx = vec![0.0f64; x.len()];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; cout];
    let mut gbuf = vec![0.0f64; cout];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = &gout[(oy * g.out_w + ox) * cout..][..cout];
            let mut any = false;
            for (b, &v) in gbuf.iter_mut().zip(go) {
                *b = v.as_f64();
                any |= *b != 0.0;
            }
            if !any {
                continue;
            }
            for (d, &v) in db.iter_mut().zip(&gbuf) {
                *d += v;
            }
            for ky in 0..k {
                let Some(iy) = g.input_row(oy, ky) else { continue };
                for kx in 0..k {
                    let Some(ix) = g.input_col(ox, kx) else { continue };
                    let pix = (iy * g.in_w + ix) * cin;
                    let wbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[pix + ci].as_f64();
                        let wrow = &w[wbase + ci * cout..][..cout];
                        let dwrow = &mut dw[wbase + ci * cout..][..cout];
                        let mut s = 0.0;
                        for ((dwv, &wv), &gv) in dwrow.iter_mut().zip(wrow).zip(&gbuf) {
                            s += gv * wv.as_f64();
                            *dwv += xv * gv;
                        }
                        dx[pix + ci] += s;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Depthwise convolution, weights [k, k, C], no bias.

pub fn depthwise_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let [n, h, w, c] = dims4(input, "depthwise input")?;
    let (k, wc) = match *weights.shape() {
        [k, k2, wc] if k == k2 => (k, wc),
        ref s => return Err(NnError::ShapeMismatch(format!("depthwise weights {s:?}"))),
    };
    if wc != c {
        return Err(NnError::ShapeMismatch(format!(
            "depthwise weights for {wc} channels, input has {c}"
        )));
    }
    let g = ConvGeometry::new(h, w, k, stride, padding)?;
    let in_len = h * w * c;
    let out_len = g.out_h * g.out_w * c;
    let mut out = vec![T::zero(); n * out_len];
    let (xd, wd) = (input.data(), weights.data());
    out.par_chunks_mut(out_len).enumerate().for_each(|(i, dst)| {
        let x = &xd[i * in_len..(i + 1) * in_len];
        let mut acc = vec![0.0f64; c];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..k {
                    let Some(iy) = g.input_row(oy, ky) else { continue };
                    for kx in 0..k {
                        let Some(ix) = g.input_col(ox, kx) else { continue };
                        let px = &x[(iy * g.in_w + ix) * c..][..c];
                        let wk = &wd[(ky * k + kx) * c..][..c];
                        for ((a, &xv), &wv) in acc.iter_mut().zip(px).zip(wk) {
                            *a += xv.as_f64() * wv.as_f64();
                        }
                    }
                }
                let o = &mut dst[(oy * g.out_w + ox) * c..][..c];
                for (d, &a) in o.iter_mut().zip(&acc) {
                    *d = T::of_f64(a);
                }
            }
        }
    });
    Tensor::new(vec![n, g.out_h, g.out_w, c], out)
}

pub fn depthwise_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    out_grad: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let [n, h, w, c] = dims4(input, "depthwise input")?;
    let k = weights.shape()[0];
    let g = ConvGeometry::new(h, w, k, stride, padding)?;
    check_shape(out_grad, &[n, g.out_h, g.out_w, c], "depthwise output gradient")?;
    let in_len = h * w * c;
    let out_len = g.out_h * g.out_w * c;
    let (xd, wd, gd) = (input.data(), weights.data(), out_grad.data());
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &xd[i * in_len..(i + 1) * in_len];
            let go = &gd[i * out_len..(i + 1) * out_len];
            let mut dx = vec![0.0f64; in_len];
            let mut dw = vec![0.0f64; wd.len()];
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let gp = &go[(oy * g.out_w + ox) * c..][..c];
                    for ky in 0..k {
                        let Some(iy) = g.input_row(oy, ky) else { continue };
                        for kx in 0..k {
                            let Some(ix) = g.input_col(ox, kx) else { continue };
                            let pix = (iy * g.in_w + ix) * c;
                            let wb = (ky * k + kx) * c;
                            for ch in 0..c {
                                let gv = gp[ch].as_f64();
                                dx[pix + ch] += gv * wd[wb + ch].as_f64();
                                dw[wb + ch] += gv * x[pix + ch].as_f64();
                            }
                        }
                    }
                }
            }
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(n * in_len);
    let mut dws = Vec::with_capacity(n);
    for (px, pw) in parts {
        dx.extend(px.into_iter().map(T::of_f64));
        dws.push(pw);
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        to_tensor(weights.shape(), sum_in_order(dws, wd.len())),
    ))
}

// ---------------------------------------------------------------------------
// Dense layer: input [N, n], weights [n, m], bias [m].

pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let [n, fin] = dims2(input, "dense input")?;
    let [win, fout] = dims2(weights, "dense weights")?;
    if win != fin {
        return Err(NnError::ShapeMismatch(format!(
            "dense weights {:?} for input width {fin}",
            weights.shape()
        )));
    }
    check_shape(bias, &[fout], "dense bias")?;
    let mut out = Vec::with_capacity(n * fout);
    let mut acc = vec![0.0f64; fout];
    for row in input.data().chunks(fin) {
        for (a, &b) in acc.iter_mut().zip(bias.data()) {
            *a = b.as_f64();
        }
        for (i, &xv) in row.iter().enumerate() {
            let xv = xv.as_f64();
            if xv == 0.0 {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&weights.data()[i * fout..(i + 1) * fout]) {
                *a += xv * wv.as_f64();
            }
        }
        out.extend(acc.iter().map(|&a| T::of_f64(a)));
    }
    Tensor::new(vec![n, fout], out)
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    out_grad: &Tensor<T>,
) -> Result<DenseGrads<T>, NnError> {
    let [n, fin] = dims2(input, "dense input")?;
    let fout = weights.shape()[1];
    check_shape(out_grad, &[n, fout], "dense output gradient")?;
    let wd = weights.data();
    let mut dx = Vec::with_capacity(n * fin);
    let mut dw = vec![0.0f64; fin * fout];
    let mut db = vec![0.0f64; fout];
    for (row, grow) in input.data().chunks(fin).zip(out_grad.data().chunks(fout)) {
        let gv: Vec<f64> = grow.iter().map(|v| v.as_f64()).collect();
        for (d, &g) in db.iter_mut().zip(&gv) {
            *d += g;
        }
        for (i, &xv) in row.iter().enumerate() {
            let xv = xv.as_f64();
            let wrow = &wd[i * fout..(i + 1) * fout];
            let dwrow = &mut dw[i * fout..(i + 1) * fout];
            let mut s = 0.0;
            for ((dwv, &w), &g) in dwrow.iter_mut().zip(wrow).zip(&gv) {
                s += g * w.as_f64();
                *dwv += xv * g;
            }
            dx.push(T::of_f64(s));
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        weights: to_tensor(weights.shape(), dw),
        bias: to_tensor(&[fout], db),
    })
}

// ---------------------------------------------------------------------------
// Pooling.

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and the flat input index of each maximum.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>), NnError> {
    let [n, h, w, c] = dims4(input, "maxpool input")?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(NnError::ShapeMismatch(format!("maxpool on {h}x{w}")));
    }
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(out.capacity());
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = x[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    arg.push(best_idx as u32);
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, arg))
}

pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    out_grad: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if argmax.len() != out_grad.len() {
        return Err(NnError::ShapeMismatch("maxpool gradient size".into()));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(out_grad.data()) {
        d[idx as usize] = d[idx as usize] + g;
    }
    Ok(dx)
}

/// Channel means over the spatial extent: [N,H,W,C] -> [N,C].
pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, h, w, c] = dims4(input, "global average pool input")?;
    let area = (h * w) as f64;
    let mut out = Vec::with_capacity(n * c);
    for item in input.data().chunks(h * w * c) {
        let mut acc = vec![0.0f64; c];
        for px in item.chunks(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v.as_f64();
            }
        }
        out.extend(acc.into_iter().map(|a| T::of_f64(a / area)));
    }
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    input_shape: &[usize],
    out_grad: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let &[n, h, w, c] = input_shape else {
        return Err(NnError::ShapeMismatch(format!("pool input shape {input_shape:?}")));
    };
    check_shape(out_grad, &[n, c], "global average pool gradient")?;
    let inv = 1.0 / (h * w) as f64;
    let mut dx = Vec::with_capacity(n * h * w * c);
    for grow in out_grad.data().chunks(c) {
        let scaled: Vec<T> = grow.iter().map(|&g| T::of_f64(g.as_f64() * inv)).collect();
        for _ in 0..h * w {
            dx.extend_from_slice(&scaled);
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Elementwise and normalisation.

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, out_grad: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Softmax along the last axis with max-subtraction.
pub fn softmax_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let width = *input.shape().last().expect("non-empty shape");
    let mut out = Vec::with_capacity(input.len());
    for row in input.data().chunks(width) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| T::of_f64(e / total)));
    }
    Tensor::new(input.shape().to_vec(), out).expect("same shape")
}

/// Vector-Jacobian product of softmax given its output.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, out_grad: &Tensor<T>) -> Tensor<T> {
    let width = *output.shape().last().expect("non-empty shape");
    let mut dx = Vec::with_capacity(output.len());
    for (s, g) in output.data().chunks(width).zip(out_grad.data().chunks(width)) {
        let dot: f64 = s.iter().zip(g).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
        dx.extend(s.iter().zip(g).map(|(&a, &b)| T::of_f64(a.as_f64() * (b.as_f64() - dot))));
    }
    Tensor::new(output.shape().to_vec(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    #[test]
    fn same_padding_follows_tensorflow_sizes() {
        let g = ConvGeometry::new(5, 5, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (3, 1));
        let g = ConvGeometry::new(4, 4, 3, 2, Padding::Same).unwrap();
        // total padding 1: nothing on top, one row at the bottom
        assert_eq!((g.out_h, g.pad_top), (2, 0));
        let g = ConvGeometry::new(6, 6, 3, 1, Padding::Valid).unwrap();
        assert_eq!(g.out_h, 4);
    }

    #[test]
    fn identity_1x1_kernel() {
        let x = t(&[1, 2, 2, 1], &[1.0, -2.0, 3.5, 4.0]);
        let y = conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, Padding::Same)
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_valid_and_same() {
        let x = t(&[1, 3, 3, 1], &[1.0; 9]);
        let w = t(&[3, 3, 1, 1], &[1.0; 9]);
        let b = t(&[1], &[0.0]);
        let valid = conv2d_forward(&x, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(valid.shape(), &[1, 1, 1, 1]);
        assert_eq!(valid.data(), &[9.0]);
        let same = conv2d_forward(&x, &w, &b, 1, Padding::Same).unwrap();
        assert_eq!(same.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = t(&[1, 3, 3, 2], &[0.0; 18]);
        let w = t(&[3, 3, 1, 1], &[1.0; 9]);
        let err = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, Padding::Same);
        assert!(matches!(err, Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn dense_hand_example() {
        let y = dense_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &t(&[2], &[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
        let zero = dense_forward(&t(&[1, 2], &[5.0, -7.0]), &t(&[2, 2], &[0.0; 4]), &t(&[2], &[0.5, -1.0]))
            .unwrap();
        assert_eq!(zero.data(), &[0.5, -1.0]);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_forward(&t(&[2], &[0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_forward(&t(&[2], &[1000.0, 1000.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_forward(&t(&[2], &[0.0, 3f64.ln()]));
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = t(&[1, 2, 2, 1], &[1.0, 5.0, 3.0, 2.0]);
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let dx = maxpool2_backward(x.shape(), &arg, &t(&[1, 1, 1, 1], &[2.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
