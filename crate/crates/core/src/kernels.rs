//! Loop kernels shared by the differentiable ops and the plain image operators.
//!
//! Matrices are row-major. All loops run in a fixed order so results are
//! bitwise reproducible, and each output column depends only on the matching
//! input column.

/// `out[m×n] += w[m×k] · x[k×n]`
pub(crate) fn matmul_acc(w: &[f64], x: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(w.len(), m * k);
    debug_assert_eq!(x.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Column blocks keep a slab of `out` in cache while all of `w` streams by.
    for c0 in (0..n).step_by(COL_BLOCK) {
        let c1 = (c0 + COL_BLOCK).min(n);
        for i in 0..m {
            let orow = &mut out[i * n + c0..i * n + c1];
            let wrow = &w[i * k..(i + 1) * k];
            let mut p = 0;
            while p + 4 <= k {
                let (w0, w1, w2, w3) = (wrow[p], wrow[p + 1], wrow[p + 2], wrow[p + 3]);
                let x0 = &x[p * n + c0..p * n + c1];
                let x1 = &x[(p + 1) * n + c0..(p + 1) * n + c1];
                let x2 = &x[(p + 2) * n + c0..(p + 2) * n + c1];
                let x3 = &x[(p + 3) * n + c0..(p + 3) * n + c1];
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += w0 * x0[j] + w1 * x1[j] + w2 * x2[j] + w3 * x3[j];
                }
                p += 4;
            }
            for q in p..k {
                let wv = wrow[q];
                let xr = &x[q * n + c0..q * n + c1];
                for (o, &xv) in orow.iter_mut().zip(xr) {
                    *o += wv * xv;
                }
            }
        }
    }
}

const COL_BLOCK: usize = 512;

/// `dx[k×n] += wᵀ · dy[m×n]`
pub(crate) fn matmul_tn_acc(w: &[f64], dy: &[f64], dx: &mut [f64], m: usize, k: usize, n: usize) {
    for c0 in (0..n).step_by(COL_BLOCK) {
        let c1 = (c0 + COL_BLOCK).min(n);
        for p in 0..k {
            let drow = &mut dx[p * n + c0..p * n + c1];
            let mut i = 0;
            while i + 4 <= m {
                let (w0, w1, w2, w3) = (w[i * k + p], w[(i + 1) * k + p], w[(i + 2) * k + p], w[(i + 3) * k + p]);
                let g0 = &dy[i * n + c0..i * n + c1];
                let g1 = &dy[(i + 1) * n + c0..(i + 1) * n + c1];
                let g2 = &dy[(i + 2) * n + c0..(i + 2) * n + c1];
                let g3 = &dy[(i + 3) * n + c0..(i + 3) * n + c1];
                for (j, d) in drow.iter_mut().enumerate() {
                    *d += w0 * g0[j] + w1 * g1[j] + w2 * g2[j] + w3 * g3[j];
                }
                i += 4;
            }
            for q in i..m {
                let wv = w[q * k + p];
                let g = &dy[q * n + c0..q * n + c1];
                for (d, &gv) in drow.iter_mut().zip(g) {
                    *d += wv * gv;
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `dw[m×k] += dy[m×n] · xᵀ`
pub(crate) fn matmul_nt_acc(dy: &[f64], x: &[f64], dw: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            dw[i * k + p] += dot(grow, &x[p * n..(p + 1) * n]);
        }
    }
}

/// Mirror index with edge repetition: `-1 → 0`, `-2 → 1`, `n → n-1`.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    debug_assert!((0..n).contains(&j), "mirror index out of range");
    j as usize
}

/// Geometry of a per-plane correlation evaluated on a regular sample grid.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlurGrid {
    pub height: usize,
    pub width: usize,
    pub ksize: usize,
    pub stride: usize,
    pub offset: usize,
}

impl BlurGrid {
    pub fn out_height(&self) -> usize {
        self.height / self.stride
    }

    pub fn out_width(&self) -> usize {
        self.width / self.stride
    }

    /// Source index table for each (output position, tap) pair along one axis.
    fn taps(&self, len: usize, out_len: usize) -> Vec<usize> {
        let half = (self.ksize / 2) as isize;
        let mut idx = Vec::with_capacity(out_len * self.ksize);
        for o in 0..out_len {
            let centre = (o * self.stride + self.offset) as isize;
            for t in 0..self.ksize as isize {
                idx.push(mirror(centre + t - half, len));
            }
        }
        idx
    }
}

/// Correlates every `height×width` plane of `input` with `kernel` under mirror
/// padding and keeps the samples at `stride·i + offset`.
pub(crate) fn blur_sample(input: &[f64], kernel: &[f64], g: BlurGrid, out: &mut [f64]) {
    let plane = g.height * g.width;
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.ksize;
    let rows = g.taps(g.height, oh);
    let cols = g.taps(g.width, ow);
    for (src, dst) in input.chunks_exact(plane).zip(out.chunks_exact_mut(oh * ow)) {
        for i in 0..oh {
            let ri = &rows[i * k..(i + 1) * k];
            for j in 0..ow {
                let cj = &cols[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (u, &r) in ri.iter().enumerate() {
                    let srow = &src[r * g.width..(r + 1) * g.width];
                    let krow = &kernel[u * k..(u + 1) * k];
                    for (&kv, &c) in krow.iter().zip(cj) {
                        acc += kv * srow[c];
                    }
                }
                dst[i * ow + j] = acc;
            }
        }
    }
}

/// Adjoint of [`blur_sample`]: accumulates gradients with respect to the
/// input planes and the kernel.
pub(crate) fn blur_sample_backward(
    input: &[f64],
    kernel: &[f64],
    g: BlurGrid,
    grad_out: &[f64],
    mut grad_input: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
) {
    let plane = g.height * g.width;
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.ksize;
    let rows = g.taps(g.height, oh);
    let cols = g.taps(g.width, ow);
    for (p, go) in grad_out.chunks_exact(oh * ow).enumerate() {
        let src = &input[p * plane..(p + 1) * plane];
        for i in 0..oh {
            let ri = &rows[i * k..(i + 1) * k];
            for j in 0..ow {
                let gv = go[i * ow + j];
                if gv == 0.0 {
                    continue;
                }
                let cj = &cols[j * k..(j + 1) * k];
                for (u, &r) in ri.iter().enumerate() {
                    for (v, &c) in cj.iter().enumerate() {
                        let s = r * g.width + c;
                        if let Some(gi) = grad_input.as_deref_mut() {
                            gi[p * plane + s] += kernel[u * k + v] * gv;
                        }
                        if let Some(gk) = grad_kernel.as_deref_mut() {
                            gk[u * k + v] += src[s] * gv;
                        }
                    }
                }
            }
        }
    }
}
