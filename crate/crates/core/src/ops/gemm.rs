//! Row-major single-precision matrix multiply with optional transposes.
//!
//! `matrixmultiply` is the portable backend; the `openblas` feature routes
//! the same calls to the system CBLAS.

/// A row-major operand: element `(i, j)` of the logical matrix is
/// `data[i * ld + j]`, or `data[j * ld + i]` when `trans` is set.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub ld: usize,
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub(crate) fn new(data: &'a [f32], ld: usize) -> Self {
        Mat { data, ld, trans: false }
    }

    pub(crate) fn t(self) -> Self {
        Mat { trans: !self.trans, ..self }
    }

    /// Elements spanned by a logical `rows × cols` view.
    fn span(&self, rows: usize, cols: usize) -> usize {
        let (r, c) = if self.trans { (cols, rows) } else { (rows, cols) };
        if r == 0 || c == 0 {
            0
        } else {
            (r - 1) * self.ld + c
        }
    }
}

/// `c = a·b + beta·c` with `a` m×k, `b` k×n and `c` m×n at row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32], ldc: usize) {
    assert!(a.data.len() >= a.span(m, k), "gemm: lhs too short");
    assert!(b.data.len() >= b.span(k, n), "gemm: rhs too short");
    assert!(m == 0 || n == 0 || c.len() >= (m - 1) * ldc + n, "gemm: output too short");
    assert!(a.ld >= if a.trans { m } else { k } && b.ld >= if b.trans { k } else { n } && ldc >= n);
    if m == 0 || n == 0 {
        return;
    }
    backend(m, k, n, a, b, beta, c, ldc);
}

#[cfg(not(feature = "openblas"))]
#[allow(clippy::too_many_arguments)]
fn backend(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32], ldc: usize) {
    let strides = |x: &Mat<'_>| if x.trans { (1, x.ld as isize) } else { (x.ld as isize, 1) };
    let ((rsa, csa), (rsb, csb)) = (strides(&a), strides(&b));
    // SAFETY: `gemm` checked that every addressed element is in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(feature = "openblas")]
mod cblas {
    pub const ROW_MAJOR: i32 = 101;
    pub const NO_TRANS: i32 = 111;
    pub const TRANS: i32 = 112;

    #[link(name = "openblas")]
    extern "C" {
        #[allow(clippy::too_many_arguments)]
        pub fn cblas_sgemm(
            layout: i32,
            trans_a: i32,
            trans_b: i32,
            m: i32,
            n: i32,
            k: i32,
            alpha: f32,
            a: *const f32,
            lda: i32,
            b: *const f32,
            ldb: i32,
            beta: f32,
            c: *mut f32,
            ldc: i32,
        );
    }
}

#[cfg(feature = "openblas")]
#[allow(clippy::too_many_arguments)]
fn backend(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32], ldc: usize) {
    let flag = |x: &Mat<'_>| if x.trans { cblas::TRANS } else { cblas::NO_TRANS };
    let dim = |v: usize| i32::try_from(v).expect("matrix dimension fits in i32");
    // CBLAS rejects a zero leading dimension even for empty inner products.
    let (lda, ldb) = (a.ld.max(1), b.ld.max(1));
    // SAFETY: `gemm` checked that every addressed element is in bounds.
    unsafe {
        cblas::cblas_sgemm(
            cblas::ROW_MAJOR,
            flag(&a),
            flag(&b),
            dim(m),
            dim(n),
            dim(k),
            1.0,
            a.data.as_ptr(),
            dim(lda),
            b.data.as_ptr(),
            dim(ldb),
            beta,
            c.as_mut_ptr(),
            dim(ldc),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        // [1 2; 3 4] · [5 6; 7 8]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, Mat::new(&a, 2), Mat::new(&b, 2), 0.0, &mut c, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, Mat::new(&a, 2).t(), Mat::new(&b, 2), 0.0, &mut c, 2);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, Mat::new(&a, 2), Mat::new(&b, 2).t(), 1.0, &mut c, 2);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }

    #[test]
    fn strided_output() {
        // 2×1 · 1×1 written into column 1 of a 2×3 buffer
        let mut c = [0.0; 6];
        gemm(2, 1, 1, Mat::new(&[1.0, 2.0], 1), Mat::new(&[3.0], 1), 0.0, &mut c[1..], 3);
        assert_eq!(c, [0.0, 3.0, 0.0, 0.0, 6.0, 0.0]);
    }
}
