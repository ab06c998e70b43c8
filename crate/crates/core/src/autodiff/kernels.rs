//! Dense numeric kernels shared by the graph ops.

use crate::tensor::Float;

/// Strided matrix view: element (i, j) lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [Float],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [Float], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [Float], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n` and `c` row-major `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: Float, c: &mut [Float]) {
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len(), "gemm lhs out of bounds");
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: every index touched by the kernel was bounds-checked above.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unpadded 2-D convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Lays input patches out as a `[patch_len, batch * positions]` matrix.
pub(crate) fn im2col(x: &[Float], g: &ConvGeom) -> Vec<Float> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let np = g.batch * p;
    // rows are produced in storage order, so the buffer is filled by pushing
    let mut cols = Vec::with_capacity(g.patch_len() * np);
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                for n in 0..g.batch {
                    let plane = &x[(n * g.in_channels + c) * g.height * g.width..];
                    for i in 0..oh {
                        let src = &plane[(i * g.stride + ki) * g.width + kj..];
                        cols.extend(src.iter().step_by(g.stride).take(ow));
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a patch matrix back onto an input-shaped buffer.
pub(crate) fn col2im(cols: &[Float], g: &ConvGeom, dx: &mut [Float]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let np = g.batch * p;
    for c in 0..g.in_channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let r = (c * g.kernel + ki) * g.kernel + kj;
                let row = &cols[r * np..(r + 1) * np];
                for n in 0..g.batch {
                    let base = (n * g.in_channels + c) * g.height * g.width;
                    for i in 0..oh {
                        let off = base + (i * g.stride + ki) * g.width + kj;
                        let src = &row[n * p + i * ow..n * p + (i + 1) * ow];
                        for (j, s) in src.iter().enumerate() {
                            dx[off + j * g.stride] += s;
                        }
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(xs: &[Float]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
