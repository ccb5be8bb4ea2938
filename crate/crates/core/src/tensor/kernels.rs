//! Numeric kernels behind the graph ops.

/// `c = op(a)·op(b) + beta·c` for row-major operands, where `op(a)` is
/// `m × k` and `op(b)` is `k × n`. Transposes are expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides address only those elements.
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds NHWC input into `[n·oh·ow, kh·kw·cin]` patches.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let k = g.patch();
    let mut cols = vec![0.0; g.rows() * k];
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let dst = row + (ky * g.kw + kx) * g.cin;
                        cols[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch gradients back onto the NHWC input gradient.
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let k = g.patch();
    for b in 0..g.n {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((b * g.oh + oy) * g.ow + ox) * k;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let src = row + (ky * g.kw + kx) * g.cin;
                        for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(&cols[src..src + g.cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.rows() * g.cout];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(g.cout) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    if g.is_pointwise() {
        gemm(g.rows(), g.patch(), g.cout, x, false, w, false, beta, &mut out);
    } else {
        let cols = im2col(x, g);
        gemm(g.rows(), g.patch(), g.cout, &cols, false, w, false, beta, &mut out);
    }
    out
}

/// Returns `(dx, dw, db)` for the requested parts.
pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (m, k) = (g.rows(), g.patch());
    let cols_owned;
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else if need_dw {
        cols_owned = im2col(x, g);
        &cols_owned
    } else {
        &[]
    };
    let dw = need_dw.then(|| {
        let mut dw = vec![0.0; k * g.cout];
        gemm(k, m, g.cout, cols, true, dy, false, 0.0, &mut dw);
        dw
    });
    let db = need_db.then(|| {
        let mut db = vec![0.0; g.cout];
        for row in dy.chunks_exact(g.cout) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        db
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; m * k];
        gemm(m, g.cout, k, dy, false, w, true, 0.0, &mut dcols);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![0.0; g.n * g.h * g.w * g.cin];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    (dx, dw, db)
}
