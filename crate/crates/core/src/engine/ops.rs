//! Batched layer kernels over channels-last buffers.
//!
//! Spatial maps are `[n, h, w, c]`; a 1D map is the `h = 1` case. Windows use
//! implicit same-padding with `out = ceil(in / stride)`, the padding split
//! with the smaller half before the data.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
    ph: usize,
    pw: usize,
}

fn pad_before(len: usize, out: usize, k: usize, s: usize) -> usize {
    ((out - 1) * s + k).saturating_sub(len) / 2
}

impl Geom {
    pub fn new(n: usize, [h, w, c]: [usize; 3], [kh, kw]: [usize; 2], [sh, sw]: [usize; 2]) -> Self {
        let oh = h.div_ceil(sh);
        let ow = w.div_ceil(sw);
        Self {
            n,
            h,
            w,
            c,
            kh,
            kw,
            sh,
            sw,
            oh,
            ow,
            ph: pad_before(h, oh, kh, sh),
            pw: pad_before(w, ow, kw, sw),
        }
    }

    pub fn out_len(&self, channels: usize) -> usize {
        self.n * self.oh * self.ow * channels
    }

    /// Valid input rows/cols under output position `(oy, ox)` as
    /// `(i, iy)` / `(j, ix)` pairs of kernel and input coordinates.
    #[inline]
    fn rows(&self, oy: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let base = (oy * self.sh) as isize - self.ph as isize;
        (0..self.kh).filter_map(move |i| {
            let iy = base + i as isize;
            (iy >= 0 && (iy as usize) < self.h).then_some((i, iy as usize))
        })
    }

    #[inline]
    fn cols(&self, ox: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let base = (ox * self.sw) as isize - self.pw as isize;
        (0..self.kw).filter_map(move |j| {
            let ix = base + j as isize;
            (ix >= 0 && (ix as usize) < self.w).then_some((j, ix as usize))
        })
    }

    #[inline]
    fn in_at(&self, n: usize, iy: usize, ix: usize) -> usize {
        ((n * self.h + iy) * self.w + ix) * self.c
    }

    #[inline]
    fn out_at(&self, n: usize, oy: usize, ox: usize, channels: usize) -> usize {
        ((n * self.oh + oy) * self.ow + ox) * channels
    }
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense convolution; `wgt` is `[kh, kw, c, f]`.
pub(crate) fn conv_forward(g: &Geom, f: usize, x: &[f64], wgt: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; g.out_len(f)];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let out = &mut y[g.out_at(n, oy, ox, f)..][..f];
                out.copy_from_slice(bias);
                for (i, iy) in g.rows(oy) {
                    for (j, ix) in g.cols(ox) {
                        let xs = &x[g.in_at(n, iy, ix)..][..g.c];
                        let ws = &wgt[(i * g.kw + j) * g.c * f..][..g.c * f];
                        for (&xv, wr) in xs.iter().zip(ws.chunks_exact(f)) {
                            if xv != 0.0 {
                                axpy(out, xv, wr);
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv_backward(
    g: &Geom,
    f: usize,
    x: &[f64],
    wgt: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wgt.len()];
    let mut db = vec![0.0; f];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gy = &dy[g.out_at(n, oy, ox, f)..][..f];
                axpy(&mut db, 1.0, gy);
                for (i, iy) in g.rows(oy) {
                    for (j, ix) in g.cols(ox) {
                        let at = g.in_at(n, iy, ix);
                        let block = (i * g.kw + j) * g.c * f;
                        for ci in 0..g.c {
                            let wr = &wgt[block + ci * f..][..f];
                            dx[at + ci] += dot(wr, gy);
                            let xv = x[at + ci];
                            if xv != 0.0 {
                                axpy(&mut dw[block + ci * f..][..f], xv, gy);
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel convolution without bias; `wgt` is `[kh, kw, c]`.
pub(crate) fn depthwise_forward(g: &Geom, x: &[f64], wgt: &[f64]) -> Vec<f64> {
    let c = g.c;
    let mut y = vec![0.0; g.out_len(c)];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let out = &mut y[g.out_at(n, oy, ox, c)..][..c];
                for (i, iy) in g.rows(oy) {
                    for (j, ix) in g.cols(ox) {
                        let xs = &x[g.in_at(n, iy, ix)..][..c];
                        let ws = &wgt[(i * g.kw + j) * c..][..c];
                        for ((o, xv), wv) in out.iter_mut().zip(xs).zip(ws) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw)`.
pub(crate) fn depthwise_backward(
    g: &Geom,
    x: &[f64],
    wgt: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let c = g.c;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wgt.len()];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gy = &dy[g.out_at(n, oy, ox, c)..][..c];
                for (i, iy) in g.rows(oy) {
                    for (j, ix) in g.cols(ox) {
                        let at = g.in_at(n, iy, ix);
                        let k = (i * g.kw + j) * c;
                        for ci in 0..c {
                            dx[at + ci] += wgt[k + ci] * gy[ci];
                            dw[k + ci] += x[at + ci] * gy[ci];
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// Max pooling over valid (unpadded) window positions. Also returns the
/// flat input index chosen for every output.
pub(crate) fn max_pool_forward(g: &Geom, x: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let c = g.c;
    let mut y = vec![f64::NEG_INFINITY; g.out_len(c)];
    let mut arg = vec![0u32; y.len()];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = g.out_at(n, oy, ox, c);
                for (_, iy) in g.rows(oy) {
                    for (_, ix) in g.cols(ox) {
                        let at = g.in_at(n, iy, ix);
                        for ci in 0..c {
                            if x[at + ci] > y[o + ci] {
                                y[o + ci] = x[at + ci];
                                arg[o + ci] = (at + ci) as u32;
                            }
                        }
                    }
                }
            }
        }
    }
    (y, arg)
}

pub(crate) fn max_pool_backward(in_len: usize, arg: &[u32], dy: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (&a, g) in arg.iter().zip(dy) {
        dx[a as usize] += g;
    }
    dx
}

/// Average over valid window positions; padding is excluded from the count.
pub(crate) fn avg_pool_forward(g: &Geom, x: &[f64]) -> Vec<f64> {
    let c = g.c;
    let mut y = vec![0.0; g.out_len(c)];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = g.out_at(n, oy, ox, c);
                let mut count = 0usize;
                for (_, iy) in g.rows(oy) {
                    for (_, ix) in g.cols(ox) {
                        count += 1;
                        axpy(&mut y[o..o + c], 1.0, &x[g.in_at(n, iy, ix)..][..c]);
                    }
                }
                let inv = 1.0 / count as f64;
                y[o..o + c].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    y
}

pub(crate) fn avg_pool_backward(g: &Geom, in_len: usize, dy: &[f64]) -> Vec<f64> {
    let c = g.c;
    let mut dx = vec![0.0; in_len];
    for n in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = g.out_at(n, oy, ox, c);
                let count = g.rows(oy).count() * g.cols(ox).count();
                let inv = 1.0 / count as f64;
                for (_, iy) in g.rows(oy) {
                    for (_, ix) in g.cols(ox) {
                        let at = g.in_at(n, iy, ix);
                        axpy(&mut dx[at..at + c], inv, &dy[o..o + c]);
                    }
                }
            }
        }
    }
    dx
}

/// `y = x W + b` for `x: [n, k]`, `W: [k, m]`.
pub(crate) fn dense_forward(n: usize, k: usize, m: usize, x: &[f64], wgt: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n * m];
    for (xr, yr) in x.chunks_exact(k).zip(y.chunks_exact_mut(m)) {
        yr.copy_from_slice(bias);
        for (&xv, wr) in xr.iter().zip(wgt.chunks_exact(m)) {
            if xv != 0.0 {
                axpy(yr, xv, wr);
            }
        }
    }
    debug_assert_eq!(y.len(), n * m);
    y
}

pub(crate) fn dense_backward(
    k: usize,
    m: usize,
    x: &[f64],
    wgt: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wgt.len()];
    let mut db = vec![0.0; m];
    for ((xr, gr), dxr) in x.chunks_exact(k).zip(dy.chunks_exact(m)).zip(dx.chunks_exact_mut(k)) {
        axpy(&mut db, 1.0, gr);
        for ((&xv, wr), (d, dwr)) in xr
            .iter()
            .zip(wgt.chunks_exact(m))
            .zip(dxr.iter_mut().zip(dw.chunks_exact_mut(m)))
        {
            *d = dot(wr, gr);
            if xv != 0.0 {
                axpy(dwr, xv, gr);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) struct BnBatch {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Batch normalisation with batch statistics over every axis but the last.
pub(crate) fn bn_train_forward(c: usize, x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> BnBatch {
    let rows = (x.len() / c) as f64;
    let mut mean = vec![0.0; c];
    for r in x.chunks_exact(c) {
        axpy(&mut mean, 1.0, r);
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0; c];
    for r in x.chunks_exact(c) {
        for ((v, xv), m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (xv - m) * (xv - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= rows);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for ((r, hr), yr) in x.chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
        for ci in 0..c {
            hr[ci] = (r[ci] - mean[ci]) * inv_std[ci];
            yr[ci] = gamma[ci] * hr[ci] + beta[ci];
        }
    }
    BnBatch {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

/// Returns `(dx, dgamma, dbeta)` for the batch-statistics forward.
pub(crate) fn bn_train_backward(
    c: usize,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = (dy.len() / c) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (gr, hr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)) {
        for ci in 0..c {
            dbeta[ci] += gr[ci];
            dgamma[ci] += gr[ci] * hr[ci];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for ((gr, hr), dr) in dy.chunks_exact(c).zip(xhat.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
        for ci in 0..c {
            let k = gamma[ci] * inv_std[ci] / rows;
            dr[ci] = k * (rows * gr[ci] - dbeta[ci] - hr[ci] * dgamma[ci]);
        }
    }
    (dx, dgamma, dbeta)
}

/// Affine normalisation with fixed statistics; returns the output and the
/// per-channel scale `gamma / sqrt(var + eps)` used by the backward pass.
pub(crate) fn bn_eval_forward(
    c: usize,
    x: &[f64],
    [gamma, beta, mean, var]: [&[f64]; 4],
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let scale: Vec<f64> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let mut y = vec![0.0; x.len()];
    for (r, yr) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
        for ci in 0..c {
            yr[ci] = (r[ci] - mean[ci]) * scale[ci] + beta[ci];
        }
    }
    (y, scale)
}
