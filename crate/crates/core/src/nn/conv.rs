//! 2-D convolution (cross-correlation, no kernel flip) and its transpose.

use crate::autodiff::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Sliding-window geometry shared by im2col/col2im.
///
/// `c×h×w` is the "image" side and `oh×ow` the window-grid side.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// For one kernel column `kj`, the output columns `[lo, hi)` whose input
    /// column lands inside the image when `stride == 1`.
    fn unit_stride_span(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.ow);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.ow).max(lo);
        (lo, hi)
    }
}

/// Unfolds `src[c×h×w]` into `dst[(c·kh·kw)×(oh·ow)]`.
fn im2col(src: &[f64], g: &Geom, dst: &mut [f64]) {
    let ohw = g.cols();
    let plane = g.h * g.w;
    for c in 0..g.c {
        let img = &src[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut dst[r * ohw..(r + 1) * ohw];
                for oy in 0..g.oh {
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let irow = &img[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kj);
                        out[..lo].fill(0.0);
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            out[lo..hi].copy_from_slice(&irow[start..start + (hi - lo)]);
                        }
                        out[hi..].fill(0.0);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *o = if ix >= 0 && ix < g.w as isize {
                                irow[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds `cols` back into `dst[c×h×w]`.
fn col2im(cols: &[f64], g: &Geom, dst: &mut [f64]) {
    let ohw = g.cols();
    let plane = g.h * g.w;
    for c in 0..g.c {
        let img = &mut dst[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[r * ohw..(r + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let irow = &mut img[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = g.unit_stride_span(kj);
                        if hi > lo {
                            let start = lo + kj - g.pad;
                            irow[start..start + (hi - lo)]
                                .iter_mut()
                                .zip(&src[lo..hi])
                                .for_each(|(d, s)| *d += s);
                        }
                    } else {
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                irow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = input + 2 * pad;
    if span < kernel || !(span - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "convolution extent {input} (pad {pad}) does not tile with kernel {kernel}, stride {stride}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

struct Conv2dRule {
    n: usize,
    out_ch: usize,
    g: Geom,
    has_bias: bool,
}

impl Backward for Conv2dRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = &self.g;
        let (rows, ohw, o) = (g.rows(), g.cols(), self.out_ch);
        let x = tape.value(inputs[0]).data();
        let k = tape.value(inputs[1]).data();
        let in_stride = g.c * g.h * g.w;
        let out_stride = o * ohw;
        let want_x = tape.requires_grad(inputs[0]);
        let want_k = tape.requires_grad(inputs[1]);

        let mut dx = want_x.then(|| vec![0.0; self.n * in_stride]);
        let mut dk = want_k.then(|| vec![0.0; o * rows]);
        let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { rows * ohw }];
        let mut dcols = vec![0.0; if want_x { rows * ohw } else { 0 }];
        for b in 0..self.n {
            let gout = &grad[b * out_stride..(b + 1) * out_stride];
            if let Some(dk) = dk.as_mut() {
                let xs = &x[b * in_stride..(b + 1) * in_stride];
                let cols: &[f64] = if g.is_pointwise() {
                    xs
                } else {
                    im2col(xs, g, &mut cols);
                    &cols
                };
                // dK += dOut · colsᵀ
                gemm(o, ohw, rows, gout, (ohw as isize, 1), cols, (1, ohw as isize), 1.0, dk);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[b * in_stride..(b + 1) * in_stride];
                // dcols = Kᵀ · dOut
                if g.is_pointwise() {
                    gemm(rows, o, ohw, k, (1, rows as isize), gout, (ohw as isize, 1), 0.0, dxs);
                } else {
                    gemm(rows, o, ohw, k, (1, rows as isize), gout, (ohw as isize, 1), 0.0, &mut dcols);
                    col2im(&dcols, g, dxs);
                }
            }
        }
        let mut out = vec![dx, dk];
        if self.has_bias {
            let db = tape.requires_grad(inputs[2]).then(|| {
                let mut db = vec![0.0; o];
                for b in 0..self.n {
                    for (ch, acc) in db.iter_mut().enumerate() {
                        let base = b * out_stride + ch * ohw;
                        *acc += grad[base..base + ohw].iter().sum::<f64>();
                    }
                }
                db
            });
            out.push(db);
        }
        out
    }
}

/// Cross-correlation of `x[N×C×H×W]` with `kernel[O×C×kh×kw]` plus an optional per-channel bias.
pub fn conv2d(tape: &mut Tape, x: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
    tape.check(x)?;
    tape.check(kernel)?;
    if let Some(b) = bias {
        tape.check(b)?;
    }
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (o, kc, kh, kw) = tape.value(kernel).dims4()?;
    if kc != c {
        return Err(Error::dim("conv2d", tape.shape(x), tape.shape(kernel)));
    }
    if let Some(b) = bias {
        if tape.shape(b) != [o] {
            return Err(Error::dim("conv2d bias", tape.shape(b), &[o]));
        }
    }
    let oh = conv_out_extent(h, kh, stride, pad)?;
    let ow = conv_out_extent(w, kw, stride, pad)?;
    let g = Geom { c, h, w, kh, kw, stride, pad, oh, ow };
    let (rows, ohw) = (g.rows(), g.cols());
    let xd = tape.value(x).data();
    let kd = tape.value(kernel).data();
    let in_stride = c * h * w;
    let mut out = vec![0.0; n * o * ohw];
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { rows * ohw }];
    for b in 0..n {
        let xs = &xd[b * in_stride..(b + 1) * in_stride];
        let cols: &[f64] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        let dst = &mut out[b * o * ohw..(b + 1) * o * ohw];
        gemm(o, rows, ohw, kd, (rows as isize, 1), cols, (ohw as isize, 1), 0.0, dst);
    }
    if let Some(bv) = bias {
        let bd = tape.value(bv).data();
        for plane in out.chunks_exact_mut(ohw).enumerate() {
            let (idx, p) = plane;
            let add = bd[idx % o];
            p.iter_mut().for_each(|v| *v += add);
        }
    }
    let out = Tensor::from_parts(vec![n, o, oh, ow], out);
    let mut inputs = vec![x, kernel];
    inputs.extend(bias);
    tape.push(
        "conv2d",
        out,
        inputs,
        Conv2dRule {
            n,
            out_ch: o,
            g,
            has_bias: bias.is_some(),
        },
    )
}

struct TConv2dRule {
    n: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    g: Geom,
}

impl Backward for TConv2dRule {
    fn backward(&self, tape: &Tape, inputs: &[Var], _: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = &self.g;
        let (rows, hw, cin) = (g.rows(), self.h * self.w, self.in_ch);
        let x = tape.value(inputs[0]).data();
        let k = tape.value(inputs[1]).data();
        let out_stride = g.c * g.h * g.w;
        let want_x = tape.requires_grad(inputs[0]);
        let want_k = tape.requires_grad(inputs[1]);
        let mut dx = want_x.then(|| vec![0.0; self.n * cin * hw]);
        let mut dk = want_k.then(|| vec![0.0; cin * rows]);
        let mut dcols = vec![0.0; rows * hw];
        for b in 0..self.n {
            im2col(&grad[b * out_stride..(b + 1) * out_stride], g, &mut dcols);
            if let Some(dx) = dx.as_mut() {
                // dx = K · dcols
                let dst = &mut dx[b * cin * hw..(b + 1) * cin * hw];
                gemm(cin, rows, hw, k, (rows as isize, 1), &dcols, (hw as isize, 1), 0.0, dst);
            }
            if let Some(dk) = dk.as_mut() {
                // dK += x · dcolsᵀ
                let xs = &x[b * cin * hw..(b + 1) * cin * hw];
                gemm(cin, hw, rows, xs, (hw as isize, 1), &dcols, (1, hw as isize), 1.0, dk);
            }
        }
        vec![dx, dk]
    }
}

/// Transposed convolution of `x[N×C×H×W]` with `kernel[C×O×kh×kw]`, no padding.
///
/// Output extent is `(H − 1)·stride + kh`. With the same kernel this is the
/// adjoint of [`conv2d`] at zero padding and zero bias.
pub fn tconv2d(tape: &mut Tape, x: Var, kernel: Var, stride: usize) -> Result<Var> {
    tape.check(x)?;
    tape.check(kernel)?;
    if stride == 0 {
        return Err(Error::Config("transposed convolution stride must be positive".into()));
    }
    let (n, c, h, w) = tape.value(x).dims4()?;
    let (kc, o, kh, kw) = tape.value(kernel).dims4()?;
    if kc != c {
        return Err(Error::dim("tconv2d", tape.shape(x), tape.shape(kernel)));
    }
    if h == 0 || w == 0 {
        return Err(Error::Config("transposed convolution of an empty map".into()));
    }
    let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let g = Geom {
        c: o,
        h: oh,
        w: ow,
        kh,
        kw,
        stride,
        pad: 0,
        oh: h,
        ow: w,
    };
    let (rows, hw) = (g.rows(), h * w);
    let xd = tape.value(x).data();
    let kd = tape.value(kernel).data();
    let out_stride = o * oh * ow;
    let mut out = vec![0.0; n * out_stride];
    let mut cols = vec![0.0; rows * hw];
    for b in 0..n {
        let xs = &xd[b * c * hw..(b + 1) * c * hw];
        // cols = Kᵀ · x
        gemm(rows, c, hw, kd, (1, rows as isize), xs, (hw as isize, 1), 0.0, &mut cols);
        col2im(&cols, &g, &mut out[b * out_stride..(b + 1) * out_stride]);
    }
    let out = Tensor::from_parts(vec![n, o, oh, ow], out);
    tape.push("tconv2d", out, vec![x, kernel], TConv2dRule { n, in_ch: c, h, w, g })
}
