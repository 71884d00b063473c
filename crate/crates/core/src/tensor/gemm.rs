//! Thin GEMM wrapper over ndarray's BLAS-free matrix multiply.

use ndarray::{ArrayView2, ArrayViewMut2};

use super::Elem;

/// `c = a(m,k) * b(k,n) + beta * c`, all row-major contiguous slices.
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Elem],
    b: &[Elem],
    c: &mut [Elem],
    beta: Elem,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let a = ArrayView2::from_shape((m, k), a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape((k, n), b).expect("gemm rhs shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out shape");
    ndarray::linalg::general_mat_mul(1.0 as Elem, &a, &b, beta, &mut c);
}

/// `c = a(m,k) * b(n,k)^T + beta * c`.
pub fn gemm_nt(
    m: usize,
    k: usize,
    n: usize,
    a: &[Elem],
    b: &[Elem],
    c: &mut [Elem],
    beta: Elem,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let a = ArrayView2::from_shape((m, k), a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape((n, k), b).expect("gemm rhs shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out shape");
    ndarray::linalg::general_mat_mul(1.0 as Elem, &a, &b.t(), beta, &mut c);
}

/// `c = a(k,m)^T * b(k,n) + beta * c`.
pub fn gemm_tn(
    m: usize,
    k: usize,
    n: usize,
    a: &[Elem],
    b: &[Elem],
    c: &mut [Elem],
    beta: Elem,
) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let a = ArrayView2::from_shape((k, m), a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape((k, n), b).expect("gemm rhs shape");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm out shape");
    ndarray::linalg::general_mat_mul(1.0 as Elem, &a.t(), &b, beta, &mut c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm(2, 3, 2, &a, &b, &mut c, 0.0);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // 2x3 = (3x2)^T
        let mut c = vec![0.0; 4];
        gemm_nt(2, 3, 2, &a, &bt, &mut c, 0.0);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2 = (2x3)^T
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c2 = vec![0.0; 4];
        gemm_tn(2, 3, 2, &at, &b, &mut c2, 0.0);
        assert_eq!(c2, vec![58.0, 64.0, 139.0, 154.0]);
    }
}
