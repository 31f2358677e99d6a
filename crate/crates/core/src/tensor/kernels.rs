//! Forward and backward kernels. Pure functions over [`Tensor`]s; the tape and the
//! eager executor both call into these.
//!
//! Convolutions are same-size, stride 1, zero padded. Reductions over the kernel
//! window run in a fixed order (input channel, then kernel row, then kernel column)
//! so results are reproducible run to run.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Row-major `c (m×n) = a (m×k) · b (k×n) + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    rsc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, rows: usize, cols: usize| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs
    };
    if k > 0 {
        assert!(last(rsa, csa, m, k) < a.len(), "gemm: lhs out of bounds");
        assert!(last(rsb, csb, k, n) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(rsc, 1, m, n) < c.len(), "gemm: output out of bounds");
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: every strided access was bounds-checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn check_odd(op: &'static str, kh: usize, kw: usize) -> Result<()> {
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::shape(
            op,
            format!("kernel {kh}x{kw} must have odd extents"),
        ));
    }
    Ok(())
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::vector(c) {
            return Err(Error::shape(
                op,
                format!("bias {} does not match {c} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

/// Expand one batch item into a `[cin·kh·kw, h·w]` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    src: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    cols: &mut [T],
) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let p = h * w;
    for i in 0..cin {
        let plane = &src[i * p..(i + 1) * p];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &mut cols[((i * kh + dy) * kw + dx) * p..][..p];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = dx as isize - pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = ((w as isize - shift).min(w as isize)).max(0) as usize;
                    dst.fill(T::zero());
                    if x1 > x0 {
                        let s0 = (x0 as isize + shift) as usize;
                        dst[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one batch item (adjoint of [`im2col`]).
fn col2im<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    dst: &mut [T],
) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let p = h * w;
    for i in 0..cin {
        let plane = &mut dst[i * p..(i + 1) * p];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = &cols[((i * kh + dy) * kw + dx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + dy as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = dx as isize - pw as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = ((w as isize - shift).min(w as isize)).max(0) as usize;
                    for x in x0..x1 {
                        drow[(x as isize + shift) as usize] =
                            drow[(x as isize + shift) as usize] + src[x];
                    }
                }
            }
        }
    }
}

/// Same-size convolution. `weight` is `[cout, cin, kh, kw]`, `bias` is `[1, cout, 1, 1]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    if ws.c != xs.c {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs} has {} channels, weight {ws} expects {}", xs.c, ws.c),
        ));
    }
    check_odd("conv2d", ws.h, ws.w)?;
    check_bias("conv2d", bias, ws.n)?;

    let (cout, k, p) = (ws.n, ws.c * ws.h * ws.w, xs.plane());
    let out_shape = Shape::new(xs.n, cout, xs.h, xs.w);
    let mut out = vec![T::zero(); out_shape.numel()];
    let pointwise = ws.h == 1 && ws.w == 1;
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    for n in 0..xs.n {
        let src = &input.data()[n * xs.c * p..(n + 1) * xs.c * p];
        let patches: &[T] = if pointwise {
            src
        } else {
            im2col(src, xs.c, xs.h, xs.w, ws.h, ws.w, &mut cols);
            &cols
        };
        let dst = &mut out[n * cout * p..(n + 1) * cout * p];
        gemm(cout, k, p, weight.data(), (k, 1), patches, (p, 1), dst, p, false);
        if let Some(b) = bias {
            for (o, chunk) in dst.chunks_mut(p).enumerate() {
                let bo = b.data()[o];
                chunk.iter_mut().for_each(|v| *v = *v + bo);
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let xs = input.shape();
    let ws = weight.shape();
    let (cout, k, p) = (ws.n, ws.c * ws.h * ws.w, xs.plane());
    let pointwise = ws.h == 1 && ws.w == 1;

    let mut gw = vec![T::zero(); ws.numel()];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if need_input {
        vec![T::zero(); xs.numel()]
    } else {
        Vec::new()
    };
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut gcols = vec![T::zero(); k * p];

    for n in 0..xs.n {
        let src = &input.data()[n * xs.c * p..(n + 1) * xs.c * p];
        let g = &grad_out.data()[n * cout * p..(n + 1) * cout * p];
        for (o, chunk) in g.chunks(p).enumerate() {
            gb[o] = gb[o] + chunk.iter().copied().sum::<T>();
        }
        let patches: &[T] = if pointwise {
            src
        } else {
            im2col(src, xs.c, xs.h, xs.w, ws.h, ws.w, &mut cols);
            &cols
        };
        // d_weight[o, kk] += Σ_p g[o, p] · patches[kk, p]
        gemm(cout, p, k, g, (p, 1), patches, (1, p), &mut gw, k, true);
        if need_input {
            let dst = &mut gx[n * xs.c * p..(n + 1) * xs.c * p];
            if pointwise {
                gemm(k, cout, p, weight.data(), (1, k), g, (p, 1), dst, p, true);
            } else {
                gemm(k, cout, p, weight.data(), (1, k), g, (p, 1), &mut gcols, p, false);
                col2im(&gcols, xs.c, xs.h, xs.w, ws.h, ws.w, dst);
            }
        }
    }
    (
        need_input.then(|| Tensor::new(xs, gx).expect("shape")),
        Tensor::new(ws, gw).expect("shape"),
        Tensor::new(Shape::vector(cout), gb).expect("shape"),
    )
}

/// Per-channel (depthwise) same-size convolution. `weight` is `[c, 1, kh, kw]`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    if ws.n != xs.c || ws.c != 1 {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!("weight {ws} does not match input {xs}"),
        ));
    }
    check_odd("depthwise_conv2d", ws.h, ws.w)?;
    check_bias("depthwise_conv2d", bias, xs.c)?;
    let (ph, pw) = ((ws.h - 1) / 2, (ws.w - 1) / 2);
    let (h, w) = (xs.h, xs.w);
    let mut out = vec![T::zero(); xs.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = input.plane(n, c);
            let dst = &mut out[xs.index(n, c, 0, 0)..][..h * w];
            let b = bias.map_or(T::zero(), |b| b.data()[c]);
            dst.fill(b);
            let kernel = &weight.data()[c * ws.h * ws.w..(c + 1) * ws.h * ws.w];
            for dy in 0..ws.h {
                for dx in 0..ws.w {
                    let kv = kernel[dy * ws.w + dx];
                    for y in 0..h {
                        let sy = y as isize + dy as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let shift = dx as isize - pw as isize;
                        let x0 = (-shift).max(0) as usize;
                        let x1 = ((w as isize - shift).min(w as isize)).max(0) as usize;
                        let srow = &src[sy as usize * w..];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            drow[x] = drow[x] + kv * srow[(x as isize + shift) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(xs, out)
}

/// Gradients of [`depthwise_conv2d`]: `(d_input, d_weight, d_bias)`.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xs = input.shape();
    let ws = weight.shape();
    let (ph, pw) = ((ws.h - 1) / 2, (ws.w - 1) / 2);
    let (h, w) = (xs.h, xs.w);
    let mut gx = vec![T::zero(); xs.numel()];
    let mut gw = vec![T::zero(); ws.numel()];
    let mut gb = vec![T::zero(); xs.c];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = input.plane(n, c);
            let g = grad_out.plane(n, c);
            gb[c] = gb[c] + g.iter().copied().sum::<T>();
            let kbase = c * ws.h * ws.w;
            let gxp = &mut gx[xs.index(n, c, 0, 0)..][..h * w];
            for dy in 0..ws.h {
                for dx in 0..ws.w {
                    let kv = weight.data()[kbase + dy * ws.w + dx];
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = y as isize + dy as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let shift = dx as isize - pw as isize;
                        let x0 = (-shift).max(0) as usize;
                        let x1 = ((w as isize - shift).min(w as isize)).max(0) as usize;
                        for x in x0..x1 {
                            let si = sy as usize * w + (x as isize + shift) as usize;
                            acc = acc + g[y * w + x] * src[si];
                            gxp[si] = gxp[si] + kv * g[y * w + x];
                        }
                    }
                    gw[kbase + dy * ws.w + dx] = gw[kbase + dy * ws.w + dx] + acc;
                }
            }
        }
    }
    (
        Tensor::new(xs, gx).expect("shape"),
        Tensor::new(ws, gw).expect("shape"),
        Tensor::new(Shape::vector(xs.c), gb).expect("shape"),
    )
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    input.map(|v| if v >= T::zero() { v } else { s * v })
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    zip_map(input, grad_out, |x, g| if x >= T::zero() { g } else { s * g })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    leaky_relu(input, 0.0)
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    zip_map(input, grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Takes the forward *output* `s` and uses `s(1 - s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    zip_map(output, grad_out, |s, g| g * s * (T::one() - s))
}

pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let inv = T::from_f64(1.0 / s.plane() as f64);
    let mut out = Vec::with_capacity(s.n * s.c);
    for n in 0..s.n {
        for c in 0..s.c {
            out.push(input.plane(n, c).iter().copied().sum::<T>() * inv);
        }
    }
    Tensor::new(Shape::new(s.n, s.c, 1, 1), out).expect("shape")
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let inv = T::from_f64(1.0 / input_shape.plane() as f64);
    let mut gx = Vec::with_capacity(input_shape.numel());
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat_n(g * inv, input_shape.plane()));
    }
    Tensor::new(input_shape, gx).expect("shape")
}

/// `out[n, o] = bias[o] + Σ_i weight[o, i] · input[n, i]` on `[N, C, 1, 1]` tensors.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = input.shape();
    let ws = weight.shape();
    if xs.h != 1 || xs.w != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!("input {xs} must have 1x1 spatial extent"),
        ));
    }
    if ws.c != xs.c || ws.h != 1 || ws.w != 1 {
        return Err(Error::shape(
            "fully_connected",
            format!("weight {ws} does not match input {xs}"),
        ));
    }
    check_bias("fully_connected", bias, ws.n)?;
    let (cin, cout) = (ws.c, ws.n);
    let mut out = vec![T::zero(); xs.n * cout];
    for n in 0..xs.n {
        let x = &input.data()[n * cin..(n + 1) * cin];
        for o in 0..cout {
            let row = &weight.data()[o * cin..(o + 1) * cin];
            let dot: T = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
            out[n * cout + o] = dot + bias.map_or(T::zero(), |b| b.data()[o]);
        }
    }
    Tensor::new(Shape::new(xs.n, cout, 1, 1), out)
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let xs = input.shape();
    let ws = weight.shape();
    let (cin, cout) = (ws.c, ws.n);
    let mut gx = vec![T::zero(); xs.numel()];
    let mut gw = vec![T::zero(); ws.numel()];
    let mut gb = vec![T::zero(); cout];
    for n in 0..xs.n {
        let x = &input.data()[n * cin..(n + 1) * cin];
        let g = &grad_out.data()[n * cout..(n + 1) * cout];
        for o in 0..cout {
            gb[o] = gb[o] + g[o];
            for i in 0..cin {
                gw[o * cin + i] = gw[o * cin + i] + g[o] * x[i];
                gx[n * cin + i] = gx[n * cin + i] + weight.data()[o * cin + i] * g[o];
            }
        }
    }
    (
        Tensor::new(xs, gx).expect("shape"),
        Tensor::new(ws, gw).expect("shape"),
        Tensor::new(Shape::vector(cout), gb).expect("shape"),
    )
}

/// `[N, C·r², H, W] → [N, C, rH, rW]` with `out[n, c, r·y+dy, r·x+dx] = in[n, c·r²+dy·r+dx, y, x]`.
pub fn pixel_shuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {r}²", s.c),
        ));
    }
    let out_shape = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut out = vec![T::zero(); out_shape.numel()];
    for n in 0..s.n {
        for c in 0..out_shape.c {
            for dy in 0..r {
                for dx in 0..r {
                    let src = input.plane(n, c * r * r + dy * r + dx);
                    for y in 0..s.h {
                        for x in 0..s.w {
                            out[out_shape.index(n, c, r * y + dy, r * x + dx)] = src[y * s.w + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Inverse of [`pixel_shuffle`], also its adjoint.
pub fn pixel_unshuffle<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let out_shape = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut out = vec![T::zero(); out_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = c * r * r + dy * r + dx;
                    for y in 0..out_shape.h {
                        for x in 0..out_shape.w {
                            out[out_shape.index(n, oc, y, x)] =
                                input.at(n, c, r * y + dy, r * x + dx);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    Ok(zip_map(a, b, |x, y| x + y))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    Ok(zip_map(a, b, |x, y| x * y))
}

/// Broadcast multiply of `[N, C, H, W]` by per-channel gates `[N, C, 1, 1]`.
pub fn mul_channelwise<T: Scalar>(input: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if gate.shape() != Shape::new(s.n, s.c, 1, 1) {
        return Err(Error::shape(
            "mul_channelwise",
            format!("gate {} does not broadcast over {s}", gate.shape()),
        ));
    }
    let p = s.plane();
    let mut out = Vec::with_capacity(s.numel());
    for (plane, &g) in input.data().chunks(p).zip(gate.data()) {
        out.extend(plane.iter().map(|&v| v * g));
    }
    Tensor::new(s, out)
}

pub fn mul_channelwise_backward<T: Scalar>(
    input: &Tensor<T>,
    gate: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let p = s.plane();
    let mut gx = Vec::with_capacity(s.numel());
    let mut gg = Vec::with_capacity(s.n * s.c);
    for ((plane, g), &gv) in input
        .data()
        .chunks(p)
        .zip(grad_out.data().chunks(p))
        .zip(gate.data())
    {
        gx.extend(g.iter().map(|&v| v * gv));
        gg.push(plane.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>());
    }
    (
        Tensor::new(s, gx).expect("shape"),
        Tensor::new(gate.shape(), gg).expect("shape"),
    )
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .shape();
    for t in parts {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} is incompatible with {first}"),
            ));
        }
    }
    let c: usize = parts.iter().map(|t| t.shape().c).sum();
    let out_shape = Shape::new(first.n, c, first.h, first.w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for t in parts {
            let chunk = t.shape().c * first.plane();
            out.extend_from_slice(&t.data()[n * chunk..(n + 1) * chunk]);
        }
    }
    Tensor::new(out_shape, out)
}

/// Channels `[offset, offset + len)` of every batch item.
pub fn slice_channels<T: Scalar>(input: &Tensor<T>, offset: usize, len: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if offset + len > s.c {
        return Err(Error::shape(
            "split_channels",
            format!("range {offset}..{} exceeds {} channels", offset + len, s.c),
        ));
    }
    let p = s.plane();
    let mut out = Vec::with_capacity(s.n * len * p);
    for n in 0..s.n {
        let start = (n * s.c + offset) * p;
        out.extend_from_slice(&input.data()[start..start + len * p]);
    }
    Tensor::new(Shape::new(s.n, len, s.h, s.w), out)
}

pub fn split_channels<T: Scalar>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let total: usize = sizes.iter().sum();
    if total != input.shape().c {
        return Err(Error::shape(
            "split_channels",
            format!("sizes {sizes:?} do not sum to {} channels", input.shape().c),
        ));
    }
    let mut offset = 0;
    sizes
        .iter()
        .map(|&len| {
            let part = slice_channels(input, offset, len);
            offset += len;
            part
        })
        .collect()
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub(crate) fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn box_sum_corners_and_center() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f32);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f32);
        let b = Tensor::zeros(Shape::vector(1));
        let y = conv2d(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        assert_eq!(y.at(0, 0, 0, 0), 4.0);
        assert_eq!(y.at(0, 0, 2, 2), 4.0);
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn pointwise_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Shape::new(2, 1, 4, 5), &mut rng);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 1.0f32);
        assert_eq!(conv2d(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let even = Tensor::<f32>::zeros(Shape::new(2, 3, 2, 2));
        assert!(conv2d(&x, &even, None).is_err());
        let wrong_cin = Tensor::<f32>::zeros(Shape::new(2, 4, 3, 3));
        assert!(conv2d(&x, &wrong_cin, None).is_err());
        let w = Tensor::<f32>::zeros(Shape::new(2, 3, 3, 3));
        let bad_bias = Tensor::<f32>::zeros(Shape::vector(3));
        assert!(conv2d(&x, &w, Some(&bad_bias)).is_err());
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::new(Shape::new(1, 1, 1, 3), vec![-1.0f64, 0.0, 2.0]).unwrap();
        let y = leaky_relu(&x, 0.05);
        assert_eq!(y.data(), &[-0.05, 0.0, 2.0]);
        let pos = Tensor::new(Shape::new(1, 1, 1, 3), vec![0.5f64, 0.0, 3.0]).unwrap();
        assert_eq!(leaky_relu(&pos, 0.05), pos);
        let neg = Tensor::new(Shape::new(1, 1, 1, 2), vec![-0.5f64, -3.0]).unwrap();
        assert_eq!(relu(&neg).data(), &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_values() {
        let x = Tensor::new(Shape::new(1, 1, 1, 4), vec![0.0f64, 1.0, 5.0, 20.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data().windows(2).all(|w| w[0] < w[1]));
        assert!(y.data()[3] < 1.0 && y.data()[3] > 0.999_999);
    }

    #[test]
    fn pooling_means() {
        let x = Tensor::new(Shape::new(1, 2, 2, 2), vec![7.0f64, 7.0, 7.0, 7.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_eq!(y.data(), &[7.0, 2.5]);
    }

    #[test]
    fn fc_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(Shape::new(3, 4, 1, 1), &mut rng);
        let eye = Tensor::from_fn(Shape::new(4, 4, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        assert_eq!(fully_connected(&x, &eye, None).unwrap(), x);
        let zero = Tensor::zeros(Shape::new(2, 4, 1, 1));
        let b = Tensor::new(Shape::vector(2), vec![0.25, -1.5]).unwrap();
        let y = fully_connected(&x, &zero, Some(&b)).unwrap();
        assert_eq!(y.data(), &[0.25, -1.5, 0.25, -1.5, 0.25, -1.5]);
        assert!(fully_connected(&random(Shape::new(1, 4, 2, 1), &mut rng), &eye, None).is_err());
    }

    #[test]
    fn shuffle_layout() {
        let x = Tensor::new(Shape::new(1, 4, 1, 1), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random(Shape::new(2, 3, 4, 5), &mut rng);
        assert_eq!(pixel_shuffle(&z, 1).unwrap(), z);
        assert!(pixel_shuffle(&z, 2).is_err());
    }

    #[test]
    fn split_concat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(Shape::new(2, 64, 3, 3), &mut rng);
        let parts = split_channels(&x, &[16, 16, 16, 16]).unwrap();
        let refs: Vec<_> = parts.iter().collect();
        assert_eq!(concat_channels(&refs).unwrap(), x);
        assert!(split_channels(&x, &[16, 16]).is_err());
        let ones = Tensor::full(Shape::new(2, 64, 1, 1), 1.0);
        assert_eq!(mul_channelwise(&x, &ones).unwrap(), x);
        assert!(mul_channelwise(&x, &Tensor::full(Shape::new(2, 63, 1, 1), 1.0)).is_err());
        assert!(add(&x, &parts[0]).is_err());
    }
}
