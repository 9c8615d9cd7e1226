//! Bounds-checked strided views over `matrixmultiply::dgemm`.

#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    /// Dense row-major matrix starting at `offset`.
    pub fn rows(data: &'a [f64], offset: usize, cols: usize) -> Self {
        Mat {
            data,
            offset,
            rs: cols,
            cs: 1,
        }
    }

    pub fn new(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Mat { data, offset, rs, cs }
    }

    pub fn t(self) -> Self {
        Mat {
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

impl<'a> MatMut<'a> {
    pub fn rows(data: &'a mut [f64], offset: usize, cols: usize) -> Self {
        MatMut {
            data,
            offset,
            rs: cols,
            cs: 1,
        }
    }

    pub fn new(data: &'a mut [f64], offset: usize, rs: usize, cs: usize) -> Self {
        MatMut { data, offset, rs, cs }
    }
}

fn last_index(offset: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    offset + (rows - 1) * rs + (cols - 1) * cs
}

/// Products up to this many multiply-adds skip packing and use direct loops.
const SMALL: usize = 1 << 16;

fn scale_row(row: &mut [f64], beta: f64) {
    if beta == 0.0 {
        row.fill(0.0);
    } else if beta != 1.0 {
        row.iter_mut().for_each(|v| *v *= beta);
    }
}

/// Row of `c` accumulated as a sum of scaled rows of `b`; needs unit column strides.
#[allow(clippy::too_many_arguments)]
fn small_axpy(m: usize, k: usize, n: usize, alpha: f64, a: Mat, b: Mat, beta: f64, c: MatMut) {
    for i in 0..m {
        let row = &mut c.data[c.offset + i * c.rs..c.offset + i * c.rs + n];
        scale_row(row, beta);
        for p in 0..k {
            let s = alpha * a.data[a.offset + i * a.rs + p * a.cs];
            if s == 0.0 {
                continue;
            }
            let br = &b.data[b.offset + p * b.rs..b.offset + p * b.rs + n];
            for (cv, bv) in row.iter_mut().zip(br) {
                *cv += s * bv;
            }
        }
    }
}

/// Entries of `c` as dot products of contiguous rows of `a` and columns of `b`.
#[allow(clippy::too_many_arguments)]
fn small_dot(m: usize, k: usize, n: usize, alpha: f64, a: Mat, b: Mat, beta: f64, c: MatMut) {
    for i in 0..m {
        let ar = &a.data[a.offset + i * a.rs..a.offset + i * a.rs + k];
        let row = &mut c.data[c.offset + i * c.rs..c.offset + i * c.rs + n];
        scale_row(row, beta);
        for (j, cv) in row.iter_mut().enumerate() {
            let bc = &b.data[b.offset + j * b.cs..b.offset + j * b.cs + k];
            let dot: f64 = ar.iter().zip(bc).map(|(x, y)| x * y).sum();
            *cv += alpha * dot;
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c(m x n)`.
///
/// The view of `c` must not alias itself; views of `a` and `b` may overlap freely.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Mat, b: Mat, beta: f64, c: MatMut) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = c.offset + i * c.rs + j * c.cs;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    assert!(last_index(a.offset, m, k, a.rs, a.cs) < a.data.len(), "gemm: lhs view out of bounds");
    assert!(last_index(b.offset, k, n, b.rs, b.cs) < b.data.len(), "gemm: rhs view out of bounds");
    assert!(last_index(c.offset, m, n, c.rs, c.cs) < c.data.len(), "gemm: output view out of bounds");
    if m * k * n <= SMALL && c.cs == 1 {
        if b.cs == 1 {
            return small_axpy(m, k, n, alpha, a, b, beta, c);
        }
        if b.rs == 1 && a.cs == 1 {
            return small_dot(m, k, n, alpha, a, b, beta, c);
        }
    }
    // SAFETY: all three views were bounds-checked above and `c` is an exclusive borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}
