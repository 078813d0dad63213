//! Raw forward/backward kernels shared by the compute graph.
//!
//! Layout conventions (row-major):
//!   activations  [C, H, W]
//!   conv weights [C_out, C_in, KH, KW]
//!   transposed conv weights [C_in, C_out, KH, KW]
//!   flow/sample grids [2, H, W], channel 0 = x (width), channel 1 = y (height)
//!
//! Spherical boundary policy: the width axis (longitude) wraps circularly,
//! the height axis (latitude) clamps to the border row.

use super::graph::PadMode;
use crate::scalar::Scalar;

/// Axis selector for depthwise axial convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAxis {
    Height,
    Width,
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

#[inline]
fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Copy one [H,W] plane into an [H+2ph, W+2pw] buffer resolving the pad mode.
fn pad_plane<S: Scalar>(src: &[S], h: usize, w: usize, ph: usize, pw: usize, mode: PadMode, dst: &mut [S]) {
    let wp = w + 2 * pw;
    match mode {
        PadMode::None => {
            debug_assert!(ph == 0 && pw == 0);
            dst.copy_from_slice(src);
        }
        PadMode::Zero => {
            dst.fill(S::ZERO);
            for i in 0..h {
                dst[(i + ph) * wp + pw..(i + ph) * wp + pw + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        PadMode::Sphere => {
            for ip in 0..h + 2 * ph {
                let si = clamp(ip as isize - ph as isize, h);
                let srow = &src[si * w..(si + 1) * w];
                let drow = &mut dst[ip * wp..(ip + 1) * wp];
                for (jp, d) in drow.iter_mut().enumerate() {
                    *d = srow[wrap(jp as isize - pw as isize, w)];
                }
            }
        }
    }
}

/// Fold a gradient on the padded buffer back onto the source plane.
fn unpad_plane_acc<S: Scalar>(
    dpad: &[S],
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    mode: PadMode,
    dst: &mut [S],
) {
    let wp = w + 2 * pw;
    match mode {
        PadMode::None => {
            for (d, s) in dst.iter_mut().zip(dpad.iter()) {
                *d += *s;
            }
        }
        PadMode::Zero => {
            for i in 0..h {
                let prow = &dpad[(i + ph) * wp + pw..(i + ph) * wp + pw + w];
                let drow = &mut dst[i * w..(i + 1) * w];
                for (d, s) in drow.iter_mut().zip(prow.iter()) {
                    *d += *s;
                }
            }
        }
        PadMode::Sphere => {
            for ip in 0..h + 2 * ph {
                let si = clamp(ip as isize - ph as isize, h);
                let prow = &dpad[ip * wp..(ip + 1) * wp];
                for (jp, s) in prow.iter().enumerate() {
                    dst[si * w + wrap(jp as isize - pw as isize, w)] += *s;
                }
            }
        }
    }
}

pub fn conv2d_out_dims(h: usize, w: usize, kh: usize, kw: usize, stride: usize, mode: PadMode) -> (usize, usize, usize, usize) {
    let (ph, pw) = match mode {
        PadMode::None => (0, 0),
        _ => ((kh - 1) / 2, (kw - 1) / 2),
    };
    let h_out = (h + 2 * ph - kh) / stride + 1;
    let w_out = (w + 2 * pw - kw) / stride + 1;
    (h_out, w_out, ph, pw)
}

fn padded_input<S: Scalar>(x: &[S], c_in: usize, h: usize, w: usize, ph: usize, pw: usize, mode: PadMode) -> Vec<S> {
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut xp = vec![S::ZERO; c_in * hp * wp];
    for ci in 0..c_in {
        pad_plane(&x[ci * h * w..(ci + 1) * h * w], h, w, ph, pw, mode, &mut xp[ci * hp * wp..(ci + 1) * hp * wp]);
    }
    xp
}

/// Pointwise (1x1, stride 1) convolution: a plain channel-mixing GEMM over
/// the flattened spatial plane, blocked 4-wide over input channels.
fn conv1x1_fwd<S: Scalar>(x: &[S], weight: &[S], bias: Option<&[S]>, c_in: usize, plane: usize, c_out: usize, out: &mut [S]) {
    for co in 0..c_out {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias.map_or(S::ZERO, |b| b[co]));
        let wrow = &weight[co * c_in..(co + 1) * c_in];
        let mut ci = 0;
        while ci + 4 <= c_in {
            let (w0, w1, w2, w3) = (wrow[ci], wrow[ci + 1], wrow[ci + 2], wrow[ci + 3]);
            let x0 = &x[ci * plane..(ci + 1) * plane];
            let x1 = &x[(ci + 1) * plane..(ci + 2) * plane];
            let x2 = &x[(ci + 2) * plane..(ci + 3) * plane];
            let x3 = &x[(ci + 3) * plane..(ci + 4) * plane];
            for p in 0..plane {
                dst[p] += w0 * x0[p] + w1 * x1[p] + w2 * x2[p] + w3 * x3[p];
            }
            ci += 4;
        }
        while ci < c_in {
            let wv = wrow[ci];
            let xs = &x[ci * plane..(ci + 1) * plane];
            for (d, s) in dst.iter_mut().zip(xs.iter()) {
                *d += wv * *s;
            }
            ci += 1;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1x1_bwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    dout: &[S],
    c_in: usize,
    plane: usize,
    c_out: usize,
    mut dx: Option<&mut [S]>,
    mut dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    if let Some(db) = db {
        for co in 0..c_out {
            let mut acc = S::ZERO;
            for g in &dout[co * plane..(co + 1) * plane] {
                acc += *g;
            }
            db[co] += acc;
        }
    }
    if let Some(dw) = dw.as_deref_mut() {
        for co in 0..c_out {
            let g = &dout[co * plane..(co + 1) * plane];
            let mut ci = 0;
            while ci + 4 <= c_in {
                let (mut a0, mut a1, mut a2, mut a3) = (S::ZERO, S::ZERO, S::ZERO, S::ZERO);
                let x0 = &x[ci * plane..(ci + 1) * plane];
                let x1 = &x[(ci + 1) * plane..(ci + 2) * plane];
                let x2 = &x[(ci + 2) * plane..(ci + 3) * plane];
                let x3 = &x[(ci + 3) * plane..(ci + 4) * plane];
                for p in 0..plane {
                    let gv = g[p];
                    a0 += gv * x0[p];
                    a1 += gv * x1[p];
                    a2 += gv * x2[p];
                    a3 += gv * x3[p];
                }
                dw[co * c_in + ci] += a0;
                dw[co * c_in + ci + 1] += a1;
                dw[co * c_in + ci + 2] += a2;
                dw[co * c_in + ci + 3] += a3;
                ci += 4;
            }
            while ci < c_in {
                let xs = &x[ci * plane..(ci + 1) * plane];
                let mut acc = S::ZERO;
                for (gv, xv) in g.iter().zip(xs.iter()) {
                    acc += *gv * *xv;
                }
                dw[co * c_in + ci] += acc;
                ci += 1;
            }
        }
    }
    if let Some(dx) = dx.as_deref_mut() {
        for ci in 0..c_in {
            let dst = &mut dx[ci * plane..(ci + 1) * plane];
            let mut co = 0;
            while co + 4 <= c_out {
                let w0 = weight[co * c_in + ci];
                let w1 = weight[(co + 1) * c_in + ci];
                let w2 = weight[(co + 2) * c_in + ci];
                let w3 = weight[(co + 3) * c_in + ci];
                let g0 = &dout[co * plane..(co + 1) * plane];
                let g1 = &dout[(co + 1) * plane..(co + 2) * plane];
                let g2 = &dout[(co + 2) * plane..(co + 3) * plane];
                let g3 = &dout[(co + 3) * plane..(co + 4) * plane];
                for p in 0..plane {
                    dst[p] += w0 * g0[p] + w1 * g1[p] + w2 * g2[p] + w3 * g3[p];
                }
                co += 4;
            }
            while co < c_out {
                let wv = weight[co * c_in + ci];
                let gs = &dout[co * plane..(co + 1) * plane];
                for (d, gv) in dst.iter_mut().zip(gs.iter()) {
                    *d += wv * *gv;
                }
                co += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: Option<&[S]>,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    mode: PadMode,
    out: &mut [S],
) {
    if kh == 1 && kw == 1 && stride == 1 {
        conv1x1_fwd(x, weight, bias, c_in, h * w, c_out, out);
        return;
    }
    let (h_out, w_out, ph, pw) = conv2d_out_dims(h, w, kh, kw, stride, mode);
    let wp = w + 2 * pw;
    let hp = h + 2 * ph;
    let xp = padded_input(x, c_in, h, w, ph, pw, mode);

    for co in 0..c_out {
        let out_plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
        let b = bias.map_or(S::ZERO, |b| b[co]);
        out_plane.fill(b);
        for ki in 0..kh {
            for kj in 0..kw {
                // 2-wide input-channel blocking halves the store traffic of
                // the accumulation rows.
                let mut ci = 0;
                while ci + 2 <= c_in {
                    let w0 = weight[((co * c_in + ci) * kh + ki) * kw + kj];
                    let w1 = weight[((co * c_in + ci + 1) * kh + ki) * kw + kj];
                    let x0 = &xp[ci * hp * wp..(ci + 1) * hp * wp];
                    let x1 = &xp[(ci + 1) * hp * wp..(ci + 2) * hp * wp];
                    for oi in 0..h_out {
                        let row = (oi * stride + ki) * wp + kj;
                        let s0 = &x0[row..];
                        let s1 = &x1[row..];
                        let dst = &mut out_plane[oi * w_out..(oi + 1) * w_out];
                        if stride == 1 {
                            for ((d, a), b) in dst.iter_mut().zip(&s0[..w_out]).zip(&s1[..w_out]) {
                                *d += w0 * *a + w1 * *b;
                            }
                        } else {
                            for (oj, d) in dst.iter_mut().enumerate() {
                                *d += w0 * s0[oj * stride] + w1 * s1[oj * stride];
                            }
                        }
                    }
                    ci += 2;
                }
                while ci < c_in {
                    let wv = weight[((co * c_in + ci) * kh + ki) * kw + kj];
                    let xplane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
                    for oi in 0..h_out {
                        let src = &xplane[(oi * stride + ki) * wp + kj..];
                        let dst = &mut out_plane[oi * w_out..(oi + 1) * w_out];
                        if stride == 1 {
                            for (d, s) in dst.iter_mut().zip(&src[..w_out]) {
                                *d += wv * *s;
                            }
                        } else {
                            for (oj, d) in dst.iter_mut().enumerate() {
                                *d += wv * src[oj * stride];
                            }
                        }
                    }
                    ci += 1;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    dout: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    mode: PadMode,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    if kh == 1 && kw == 1 && stride == 1 {
        conv1x1_bwd(x, weight, dout, c_in, h * w, c_out, dx, dw, db);
        return;
    }
    let (h_out, w_out, ph, pw) = conv2d_out_dims(h, w, kh, kw, stride, mode);
    let wp = w + 2 * pw;
    let hp = h + 2 * ph;

    if let Some(db) = db {
        for co in 0..c_out {
            let mut acc = S::ZERO;
            for g in &dout[co * h_out * w_out..(co + 1) * h_out * w_out] {
                acc += *g;
            }
            db[co] += acc;
        }
    }

    if let Some(dw) = dw {
        let xp = padded_input(x, c_in, h, w, ph, pw, mode);
        for co in 0..c_out {
            let gplane = &dout[co * h_out * w_out..(co + 1) * h_out * w_out];
            let mut ci = 0;
            while ci < c_in {
                let pair = ci + 1 < c_in;
                let x0 = &xp[ci * hp * wp..(ci + 1) * hp * wp];
                let x1 = if pair { &xp[(ci + 1) * hp * wp..(ci + 2) * hp * wp] } else { x0 };
                for ki in 0..kh {
                    for kj in 0..kw {
                        let mut a0 = S::ZERO;
                        let mut a1 = S::ZERO;
                        for oi in 0..h_out {
                            let row = (oi * stride + ki) * wp + kj;
                            let s0 = &x0[row..];
                            let s1 = &x1[row..];
                            let g = &gplane[oi * w_out..(oi + 1) * w_out];
                            if stride == 1 {
                                for ((gv, v0), v1) in g.iter().zip(&s0[..w_out]).zip(&s1[..w_out]) {
                                    a0 += *gv * *v0;
                                    a1 += *gv * *v1;
                                }
                            } else {
                                for (oj, gv) in g.iter().enumerate() {
                                    a0 += *gv * s0[oj * stride];
                                    a1 += *gv * s1[oj * stride];
                                }
                            }
                        }
                        dw[((co * c_in + ci) * kh + ki) * kw + kj] += a0;
                        if pair {
                            dw[((co * c_in + ci + 1) * kh + ki) * kw + kj] += a1;
                        }
                    }
                }
                ci += if pair { 2 } else { 1 };
            }
        }
    }

    if let Some(dx) = dx {
        let mut dxp = vec![S::ZERO; c_in * hp * wp];
        for ci in 0..c_in {
            let dxplane = &mut dxp[ci * hp * wp..(ci + 1) * hp * wp];
            let mut co = 0;
            while co < c_out {
                let pair = co + 1 < c_out;
                let g0 = &dout[co * h_out * w_out..(co + 1) * h_out * w_out];
                let g1 = if pair {
                    &dout[(co + 1) * h_out * w_out..(co + 2) * h_out * w_out]
                } else {
                    g0
                };
                for ki in 0..kh {
                    for kj in 0..kw {
                        let w0 = weight[((co * c_in + ci) * kh + ki) * kw + kj];
                        let w1 = if pair {
                            weight[(((co + 1) * c_in + ci) * kh + ki) * kw + kj]
                        } else {
                            S::ZERO
                        };
                        for oi in 0..h_out {
                            let dst = &mut dxplane[(oi * stride + ki) * wp + kj..];
                            let r0 = &g0[oi * w_out..(oi + 1) * w_out];
                            let r1 = &g1[oi * w_out..(oi + 1) * w_out];
                            if stride == 1 {
                                for ((d, a), b) in dst[..w_out].iter_mut().zip(r0.iter()).zip(r1.iter()) {
                                    *d += w0 * *a + w1 * *b;
                                }
                            } else {
                                for (oj, (a, b)) in r0.iter().zip(r1.iter()).enumerate() {
                                    dst[oj * stride] += w0 * *a + w1 * *b;
                                }
                            }
                        }
                    }
                }
                co += if pair { 2 } else { 1 };
            }
        }
        for ci in 0..c_in {
            unpad_plane_acc(
                &dxp[ci * hp * wp..(ci + 1) * hp * wp],
                h,
                w,
                ph,
                pw,
                mode,
                &mut dx[ci * h * w..(ci + 1) * h * w],
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_fwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: Option<&[S]>,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out: &mut [S],
) {
    let h_out = (h - 1) * stride + kh;
    let w_out = (w - 1) * stride + kw;
    for co in 0..c_out {
        let b = bias.map_or(S::ZERO, |b| b[co]);
        out[co * h_out * w_out..(co + 1) * h_out * w_out].fill(b);
    }
    for ci in 0..c_in {
        let xplane = &x[ci * h * w..(ci + 1) * h * w];
        for co in 0..c_out {
            let out_plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
            for ki in 0..kh {
                for kj in 0..kw {
                    let wv = weight[((ci * c_out + co) * kh + ki) * kw + kj];
                    for i in 0..h {
                        let dst = &mut out_plane[(i * stride + ki) * w_out + kj..];
                        let src = &xplane[i * w..(i + 1) * w];
                        for (j, s) in src.iter().enumerate() {
                            dst[j * stride] += wv * *s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_bwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    dout: &[S],
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let h_out = (h - 1) * stride + kh;
    let w_out = (w - 1) * stride + kw;

    if let Some(db) = db {
        for co in 0..c_out {
            let mut acc = S::ZERO;
            for g in &dout[co * h_out * w_out..(co + 1) * h_out * w_out] {
                acc += *g;
            }
            db[co] += acc;
        }
    }

    if let Some(dw) = dw {
        for ci in 0..c_in {
            let xplane = &x[ci * h * w..(ci + 1) * h * w];
            for co in 0..c_out {
                let gplane = &dout[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let mut acc = S::ZERO;
                        for i in 0..h {
                            let g = &gplane[(i * stride + ki) * w_out + kj..];
                            let src = &xplane[i * w..(i + 1) * w];
                            for (j, s) in src.iter().enumerate() {
                                acc += *s * g[j * stride];
                            }
                        }
                        dw[((ci * c_out + co) * kh + ki) * kw + kj] += acc;
                    }
                }
            }
        }
    }

    if let Some(dx) = dx {
        for ci in 0..c_in {
            let dxplane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for co in 0..c_out {
                let gplane = &dout[co * h_out * w_out..(co + 1) * h_out * w_out];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = weight[((ci * c_out + co) * kh + ki) * kw + kj];
                        for i in 0..h {
                            let g = &gplane[(i * stride + ki) * w_out + kj..];
                            let dst = &mut dxplane[i * w..(i + 1) * w];
                            for (j, d) in dst.iter_mut().enumerate() {
                                *d += wv * g[j * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Depthwise 1-D convolution along one axis, same-shape output.
/// Width uses circular padding, height uses replicate padding.
pub fn depthwise_axial_fwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    bias: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    axis: ConvAxis,
    out: &mut [S],
) {
    let r = (k / 2) as isize;
    match axis {
        ConvAxis::Width => {
            let mut rowp = vec![S::ZERO; w + k - 1];
            for ch in 0..c {
                let b = bias[ch];
                for i in 0..h {
                    let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
                    for (jp, v) in rowp.iter_mut().enumerate() {
                        *v = src[wrap(jp as isize - r, w)];
                    }
                    let dst = &mut out[(ch * h + i) * w..(ch * h + i + 1) * w];
                    dst.fill(b);
                    for t in 0..k {
                        let wv = weight[ch * k + t];
                        for (d, s) in dst.iter_mut().zip(&rowp[t..t + w]) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
        ConvAxis::Height => {
            for ch in 0..c {
                let b = bias[ch];
                out[ch * h * w..(ch + 1) * h * w].fill(b);
                for t in 0..k {
                    let wv = weight[ch * k + t];
                    for i in 0..h {
                        let si = clamp(i as isize + t as isize - r, h);
                        let src = &x[(ch * h + si) * w..(ch * h + si + 1) * w];
                        let dst = &mut out[(ch * h + i) * w..(ch * h + i + 1) * w];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn depthwise_axial_bwd<S: Scalar>(
    x: &[S],
    weight: &[S],
    dout: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    axis: ConvAxis,
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let r = (k / 2) as isize;

    if let Some(db) = db {
        for ch in 0..c {
            let mut acc = S::ZERO;
            for g in &dout[ch * h * w..(ch + 1) * h * w] {
                acc += *g;
            }
            db[ch] += acc;
        }
    }

    let mut dx = dx;
    let mut dw = dw;
    match axis {
        ConvAxis::Width => {
            let mut rowp = vec![S::ZERO; w + k - 1];
            let mut drowp = vec![S::ZERO; w + k - 1];
            for ch in 0..c {
                for i in 0..h {
                    let src = &x[(ch * h + i) * w..(ch * h + i + 1) * w];
                    let g = &dout[(ch * h + i) * w..(ch * h + i + 1) * w];
                    for (jp, v) in rowp.iter_mut().enumerate() {
                        *v = src[wrap(jp as isize - r, w)];
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        for t in 0..k {
                            let mut acc = S::ZERO;
                            for (gv, s) in g.iter().zip(&rowp[t..t + w]) {
                                acc += *gv * *s;
                            }
                            dw[ch * k + t] += acc;
                        }
                    }
                    if let Some(dxv) = dx.as_deref_mut() {
                        drowp.fill(S::ZERO);
                        for t in 0..k {
                            let wv = weight[ch * k + t];
                            for (d, gv) in drowp[t..t + w].iter_mut().zip(g.iter()) {
                                *d += wv * *gv;
                            }
                        }
                        let base = (ch * h + i) * w;
                        for (jp, v) in drowp.iter().enumerate() {
                            dxv[base + wrap(jp as isize - r, w)] += *v;
                        }
                    }
                }
            }
        }
        ConvAxis::Height => {
            for ch in 0..c {
                for t in 0..k {
                    let wv = weight[ch * k + t];
                    let mut wacc = S::ZERO;
                    for i in 0..h {
                        let si = clamp(i as isize + t as isize - r, h);
                        let g = &dout[(ch * h + i) * w..(ch * h + i + 1) * w];
                        if dw.is_some() {
                            let src = &x[(ch * h + si) * w..(ch * h + si + 1) * w];
                            for (gv, s) in g.iter().zip(src.iter()) {
                                wacc += *gv * *s;
                            }
                        }
                        if let Some(dxv) = dx.as_deref_mut() {
                            let base = (ch * h + si) * w;
                            for (j, gv) in g.iter().enumerate() {
                                dxv[base + j] += wv * *gv;
                            }
                        }
                    }
                    if let Some(dwv) = dw.as_deref_mut() {
                        dwv[ch * k + t] += wacc;
                    }
                }
            }
        }
    }
}

/// Group normalization forward. Returns per-group (mean, inv_std) for reuse.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_fwd<S: Scalar>(
    x: &[S],
    gamma: &[S],
    beta: &[S],
    c: usize,
    h: usize,
    w: usize,
    groups: usize,
    eps: f64,
    out: &mut [S],
) -> Vec<(f64, f64)> {
    let cg = c / groups;
    let m = (cg * h * w) as f64;
    let plane = h * w;
    let mut stats = Vec::with_capacity(groups);
    for g in 0..groups {
        let lo = g * cg * plane;
        let hi = (g + 1) * cg * plane;
        let mut sum = 0.0;
        for v in &x[lo..hi] {
            sum += v.to_f64();
        }
        let mean = sum / m;
        let mut var = 0.0;
        for v in &x[lo..hi] {
            let d = v.to_f64() - mean;
            var += d * d;
        }
        var /= m;
        let inv_std = 1.0 / (var + eps).sqrt();
        stats.push((mean, inv_std));
        for cc in 0..cg {
            let ch = g * cg + cc;
            // scale/shift folded so the inner loop is a single fma shape
            let a = S::from_f64(gamma[ch].to_f64() * inv_std);
            let b = S::from_f64(beta[ch].to_f64() - gamma[ch].to_f64() * inv_std * mean);
            let xs = &x[ch * plane..(ch + 1) * plane];
            let os = &mut out[ch * plane..(ch + 1) * plane];
            for (o, v) in os.iter_mut().zip(xs.iter()) {
                *o = a * *v + b;
            }
        }
    }
    stats
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_bwd<S: Scalar>(
    x: &[S],
    gamma: &[S],
    dout: &[S],
    c: usize,
    h: usize,
    w: usize,
    groups: usize,
    stats: &[(f64, f64)],
    mut dx: Option<&mut [S]>,
    mut dgamma: Option<&mut [S]>,
    mut dbeta: Option<&mut [S]>,
) {
    let cg = c / groups;
    let plane = h * w;
    let m = (cg * plane) as f64;
    for g in 0..groups {
        let (mean, inv_std) = stats[g];
        // Channel-level reductions first.
        for cc in 0..cg {
            let ch = g * cg + cc;
            let xs = &x[ch * plane..(ch + 1) * plane];
            let gs = &dout[ch * plane..(ch + 1) * plane];
            if dgamma.is_some() || dbeta.is_some() {
                let mut sg = 0.0;
                let mut sgx = 0.0;
                for (gv, xv) in gs.iter().zip(xs.iter()) {
                    let gf = gv.to_f64();
                    sg += gf;
                    sgx += gf * (xv.to_f64() - mean) * inv_std;
                }
                if let Some(db) = dbeta.as_deref_mut() {
                    db[ch] += S::from_f64(sg);
                }
                if let Some(dg) = dgamma.as_deref_mut() {
                    dg[ch] += S::from_f64(sgx);
                }
            }
        }
        if let Some(dxv) = dx.as_deref_mut() {
            // Group-level reductions of dxhat = dout * gamma.
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for cc in 0..cg {
                let ch = g * cg + cc;
                let ga = gamma[ch].to_f64();
                let xs = &x[ch * plane..(ch + 1) * plane];
                let gs = &dout[ch * plane..(ch + 1) * plane];
                let mut p1 = 0.0;
                let mut p2 = 0.0;
                for (gv, xv) in gs.iter().zip(xs.iter()) {
                    let gf = gv.to_f64();
                    p1 += gf;
                    p2 += gf * xv.to_f64();
                }
                // sum dxhat = ga*p1; sum dxhat*xhat = ga*((p2 - mean*p1)*inv)
                s1 += ga * p1;
                s2 += ga * (p2 - mean * p1) * inv_std;
            }
            let c1 = s1 / m;
            let c2 = s2 / m;
            // dx = inv*(ga*g - c1 - xhat*c2) folded to A*g + B*x + C.
            for cc in 0..cg {
                let ch = g * cg + cc;
                let ga = gamma[ch].to_f64();
                let a = S::from_f64(inv_std * ga);
                let b = S::from_f64(-inv_std * inv_std * c2);
                let c = S::from_f64(inv_std * (mean * inv_std * c2 - c1));
                let xs = &x[ch * plane..(ch + 1) * plane];
                let gs = &dout[ch * plane..(ch + 1) * plane];
                let ds = &mut dxv[ch * plane..(ch + 1) * plane];
                for ((d, gv), xv) in ds.iter_mut().zip(gs.iter()).zip(xs.iter()) {
                    *d += a * *gv + b * *xv + c;
                }
            }
        }
    }
}

/// Resolved sample location along one axis plus interpolation weight.
struct AxisSample {
    i0: usize,
    i1: usize,
    frac: f64,
    /// Gradient of the (possibly clamped) continuous coordinate w.r.t. the
    /// unclamped one: 0.0 where clamping flattened it, 1.0 elsewhere.
    pass: f64,
}

fn resolve_axis(coord: f64, n: usize, wraps: bool, snap_eps: f64) -> AxisSample {
    let mut c = coord;
    // Snap near-integer coordinates so an identity grid reproduces the
    // field bit-exactly despite float round-off in the grid construction.
    let r = c.round();
    if (c - r).abs() <= snap_eps {
        c = r;
    }
    if wraps {
        let f = c.floor();
        let frac = c - f;
        let i0 = wrap(f as isize, n);
        let i1 = wrap(f as isize + 1, n);
        AxisSample { i0, i1, frac, pass: 1.0 }
    } else {
        let max = (n - 1) as f64;
        let pass = if c < 0.0 || c > max { 0.0 } else { 1.0 };
        let cc = c.clamp(0.0, max);
        let f = cc.floor();
        let i0 = f as usize;
        let i1 = (i0 + 1).min(n - 1);
        let frac = cc - f;
        AxisSample { i0, i1, frac, pass }
    }
}

fn snap_eps_for<S: Scalar>(n: usize) -> f64 {
    let ulp = if std::mem::size_of::<S>() == 4 { f32::EPSILON as f64 } else { f64::EPSILON };
    16.0 * ulp * n as f64
}

/// Bilinear sampling of `field` [C,h,w] at the normalized grid [2,h,w].
/// x in [-1,1] maps to column (x+1)/2*(w-1); wraps in longitude, clamps in
/// latitude.
pub fn bilinear_warp_fwd<S: Scalar>(field: &[S], grid: &[S], c: usize, h: usize, w: usize, out: &mut [S]) {
    let plane = h * w;
    let ex = snap_eps_for::<S>(w);
    let ey = snap_eps_for::<S>(h);
    for p in 0..plane {
        let gx = grid[p].to_f64();
        let gy = grid[plane + p].to_f64();
        let col = (gx + 1.0) * 0.5 * (w as f64 - 1.0);
        let row = (gy + 1.0) * 0.5 * (h as f64 - 1.0);
        let sx = resolve_axis(col, w, true, ex);
        let sy = resolve_axis(row, h, false, ey);
        let w00 = (1.0 - sy.frac) * (1.0 - sx.frac);
        let w01 = (1.0 - sy.frac) * sx.frac;
        let w10 = sy.frac * (1.0 - sx.frac);
        let w11 = sy.frac * sx.frac;
        for ch in 0..c {
            let f = &field[ch * plane..(ch + 1) * plane];
            let v00 = f[sy.i0 * w + sx.i0].to_f64();
            let v01 = f[sy.i0 * w + sx.i1].to_f64();
            let v10 = f[sy.i1 * w + sx.i0].to_f64();
            let v11 = f[sy.i1 * w + sx.i1].to_f64();
            out[ch * plane + p] = S::from_f64(w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn bilinear_warp_bwd<S: Scalar>(
    field: &[S],
    grid: &[S],
    dout: &[S],
    c: usize,
    h: usize,
    w: usize,
    mut dfield: Option<&mut [S]>,
    mut dgrid: Option<&mut [S]>,
) {
    let plane = h * w;
    let ex = snap_eps_for::<S>(w);
    let ey = snap_eps_for::<S>(h);
    for p in 0..plane {
        let gx = grid[p].to_f64();
        let gy = grid[plane + p].to_f64();
        let col = (gx + 1.0) * 0.5 * (w as f64 - 1.0);
        let row = (gy + 1.0) * 0.5 * (h as f64 - 1.0);
        let sx = resolve_axis(col, w, true, ex);
        let sy = resolve_axis(row, h, false, ey);
        let w00 = (1.0 - sy.frac) * (1.0 - sx.frac);
        let w01 = (1.0 - sy.frac) * sx.frac;
        let w10 = sy.frac * (1.0 - sx.frac);
        let w11 = sy.frac * sx.frac;
        let mut dcol = 0.0;
        let mut drow = 0.0;
        for ch in 0..c {
            let g = dout[ch * plane + p].to_f64();
            if g == 0.0 {
                continue;
            }
            let f = &field[ch * plane..(ch + 1) * plane];
            let v00 = f[sy.i0 * w + sx.i0].to_f64();
            let v01 = f[sy.i0 * w + sx.i1].to_f64();
            let v10 = f[sy.i1 * w + sx.i0].to_f64();
            let v11 = f[sy.i1 * w + sx.i1].to_f64();
            dcol += g * ((1.0 - sy.frac) * (v01 - v00) + sy.frac * (v11 - v10));
            drow += g * ((1.0 - sx.frac) * (v10 - v00) + sx.frac * (v11 - v01));
        }
        if let Some(df) = dfield.as_deref_mut() {
            for ch in 0..c {
                let g = dout[ch * plane + p].to_f64();
                if g == 0.0 {
                    continue;
                }
                let base = ch * plane;
                df[base + sy.i0 * w + sx.i0] += S::from_f64(g * w00);
                df[base + sy.i0 * w + sx.i1] += S::from_f64(g * w01);
                df[base + sy.i1 * w + sx.i0] += S::from_f64(g * w10);
                df[base + sy.i1 * w + sx.i1] += S::from_f64(g * w11);
            }
        }
        if let Some(dg) = dgrid.as_deref_mut() {
            dg[p] += S::from_f64(dcol * sx.pass * 0.5 * (w as f64 - 1.0));
            dg[plane + p] += S::from_f64(drow * sy.pass * 0.5 * (h as f64 - 1.0));
        }
    }
}
