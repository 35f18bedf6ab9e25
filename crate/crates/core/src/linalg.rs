//! Dense kernels shared by the network forward and backward passes.
//!
//! Every product is expressed as a row-by-row dot product over contiguous
//! slices. The summation order of [`dot`] depends only on the slice length,
//! so evaluating a top-left submatrix in place and evaluating a standalone
//! copy of it produce bit-identical results.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a network (f32 for training and
/// rendering, f64 for finite-difference checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const LANES: usize = 8;

/// Dot product with a fixed 8-lane accumulation order.
#[inline(always)]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        sum = sum + *x * *y;
    }
    sum
}

/// Four dot products of `a` against `b0..b3`, each summed in exactly the
/// order [`dot`] uses.
#[inline(always)]
fn dot4<T: Scalar>(a: &[T], b: [&[T]; 4]) -> [T; 4] {
    let n = a.len();
    let b = b.map(|r| &r[..n]);
    let mut acc = [[T::zero(); LANES]; 4];
    let full = n - n % LANES;
    let chunks = a[..full]
        .chunks_exact(LANES)
        .zip(b[0][..full].chunks_exact(LANES))
        .zip(b[1][..full].chunks_exact(LANES))
        .zip(b[2][..full].chunks_exact(LANES))
        .zip(b[3][..full].chunks_exact(LANES));
    for ((((x, y0), y1), y2), y3) in chunks {
        for l in 0..LANES {
            acc[0][l] = acc[0][l] + x[l] * y0[l];
            acc[1][l] = acc[1][l] + x[l] * y1[l];
            acc[2][l] = acc[2][l] + x[l] * y2[l];
            acc[3][l] = acc[3][l] + x[l] * y3[l];
        }
    }
    let mut out = [T::zero(); 4];
    for q in 0..4 {
        let c = &acc[q];
        let mut sum = ((c[0] + c[1]) + (c[2] + c[3])) + ((c[4] + c[5]) + (c[6] + c[7]));
        for j in full..n {
            sum = sum + a[j] * b[q][j];
        }
        out[q] = sum;
    }
    out
}

#[inline(always)]
fn reduce<T: Scalar>(c: &[T; LANES]) -> T {
    ((c[0] + c[1]) + (c[2] + c[3])) + ((c[4] + c[5]) + (c[6] + c[7]))
}

/// Two rows of `a` against four rows of `b`; same per-entry order as [`dot`].
#[inline(always)]
fn dot2x4<T: Scalar>(a: [&[T]; 2], b: [&[T]; 4]) -> [[T; 4]; 2] {
    let n = a[0].len();
    let a = a.map(|r| &r[..n]);
    let b = b.map(|r| &r[..n]);
    let full = n - n % LANES;
    let mut acc = [[[T::zero(); LANES]; 4]; 2];
    let chunks = a[0][..full]
        .chunks_exact(LANES)
        .zip(a[1][..full].chunks_exact(LANES))
        .zip(b[0][..full].chunks_exact(LANES))
        .zip(b[1][..full].chunks_exact(LANES))
        .zip(b[2][..full].chunks_exact(LANES))
        .zip(b[3][..full].chunks_exact(LANES));
    for (((((x0, x1), y0), y1), y2), y3) in chunks {
        for l in 0..LANES {
            acc[0][0][l] = acc[0][0][l] + x0[l] * y0[l];
            acc[0][1][l] = acc[0][1][l] + x0[l] * y1[l];
            acc[0][2][l] = acc[0][2][l] + x0[l] * y2[l];
            acc[0][3][l] = acc[0][3][l] + x0[l] * y3[l];
            acc[1][0][l] = acc[1][0][l] + x1[l] * y0[l];
            acc[1][1][l] = acc[1][1][l] + x1[l] * y1[l];
            acc[1][2][l] = acc[1][2][l] + x1[l] * y2[l];
            acc[1][3][l] = acc[1][3][l] + x1[l] * y3[l];
        }
    }
    let mut out = [[T::zero(); 4]; 2];
    for p in 0..2 {
        for q in 0..4 {
            let mut sum = reduce(&acc[p][q]);
            for j in full..n {
                sum = sum + a[p][j] * b[q][j];
            }
            out[p][q] = sum;
        }
    }
    out
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// Borrowed row-major matrix region: `rows` rows of `cols` used entries,
/// consecutive rows `stride` elements apart.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize, stride: usize) -> Self {
        assert!(cols <= stride || rows <= 1, "stride shorter than row");
        assert!(
            rows == 0 || (rows - 1) * stride + cols <= data.len(),
            "matrix region out of bounds"
        );
        Self {
            data,
            rows,
            cols,
            stride,
        }
    }

    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::new(data, rows, cols, cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &'a [T] {
        let start = r * self.stride;
        &self.data[start..start + self.cols]
    }
}

/// `out[i][j] = dot(a.row(i), b.row(j))`, i.e. `A · Bᵀ`. `out` is dense
/// `a.rows × b.rows`.
pub fn gemm_nt<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, out: &mut [T]) {
    assert_eq!(a.cols, b.cols, "inner dimension mismatch");
    assert_eq!(out.len(), a.rows * b.rows, "output size mismatch");
    let m = b.rows;
    if m == 0 {
        return;
    }
    let body = |(pair, out_rows): (usize, &mut [T])| {
        let i = pair * 2;
        if out_rows.len() == 2 * m {
            rows_kernel_dispatch([a.row(i), a.row(i + 1)], b, out_rows);
        } else {
            row_kernel_dispatch(a.row(i), b, out_rows);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if a.rows * m * a.cols >= 1 << 18 {
            out.par_chunks_mut(2 * m).enumerate().for_each(body);
            return;
        }
    }
    out.chunks_mut(2 * m).enumerate().for_each(body);
}

#[inline(always)]
fn row_kernel<T: Scalar>(ar: &[T], b: MatRef<'_, T>, out_row: &mut [T]) {
    let m = b.rows;
    let quads = m / 4 * 4;
    for j in (0..quads).step_by(4) {
        let r = dot4(ar, [b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3)]);
        out_row[j..j + 4].copy_from_slice(&r);
    }
    for j in quads..m {
        out_row[j] = dot(ar, b.row(j));
    }
}

#[inline(always)]
fn rows_kernel<T: Scalar>(ar: [&[T]; 2], b: MatRef<'_, T>, out_rows: &mut [T]) {
    let m = b.rows;
    let quads = m / 4 * 4;
    let (o0, o1) = out_rows.split_at_mut(m);
    for j in (0..quads).step_by(4) {
        let r = dot2x4(ar, [b.row(j), b.row(j + 1), b.row(j + 2), b.row(j + 3)]);
        o0[j..j + 4].copy_from_slice(&r[0]);
        o1[j..j + 4].copy_from_slice(&r[1]);
    }
    for j in quads..m {
        o0[j] = dot(ar[0], b.row(j));
        o1[j] = dot(ar[1], b.row(j));
    }
}

fn row_kernel_dispatch<T: Scalar>(ar: &[T], b: MatRef<'_, T>, out_row: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if let Some(()) = avx::try_rows(&[ar], b, out_row) {
        return;
    }
    row_kernel(ar, b, out_row)
}

fn rows_kernel_dispatch<T: Scalar>(ar: [&[T]; 2], b: MatRef<'_, T>, out_rows: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    if let Some(()) = avx::try_rows(&ar, b, out_rows) {
        return;
    }
    rows_kernel(ar, b, out_rows)
}

/// AVX path for `f32`. One 8-wide register per accumulator, lane `l`
/// summing the products at indices `≡ l (mod 8)`, then the same reduction
/// tree and tail order as [`dot`]. Multiplies and adds stay separate (no
/// FMA), so results equal the portable kernels bit for bit.
#[cfg(target_arch = "x86_64")]
mod avx {
    use std::any::TypeId;
    use std::arch::x86_64::*;

    use super::{dot, reduce, MatRef, Scalar, LANES};

    pub(super) fn try_rows<T: Scalar>(a: &[&[T]], b: MatRef<'_, T>, out: &mut [T]) -> Option<()> {
        if TypeId::of::<T>() != TypeId::of::<f32>() || !std::is_x86_feature_detected!("avx") {
            return None;
        }
        // SAFETY: T is f32 (checked above), so the casts are identities.
        let cast = |s: &[T]| unsafe { std::slice::from_raw_parts(s.as_ptr() as *const f32, s.len()) };
        let out = unsafe { std::slice::from_raw_parts_mut(out.as_mut_ptr() as *mut f32, out.len()) };
        let n = b.cols;
        let brow = |j: usize| cast(b.row(j));
        let m = b.rows;
        let quads = m / 4 * 4;
        match a {
            [a0] => {
                let a0 = &cast(a0)[..n];
                for j in (0..quads).step_by(4) {
                    let bs = [brow(j), brow(j + 1), brow(j + 2), brow(j + 3)];
                    // SAFETY: AVX support checked above.
                    let r = unsafe { kernel::<1>([a0], bs) };
                    out[j..j + 4].copy_from_slice(&r[0]);
                }
                for j in quads..m {
                    out[j] = dot(a0, brow(j));
                }
            }
            [a0, a1] => {
                let (a0, a1) = (&cast(a0)[..n], &cast(a1)[..n]);
                let (o0, o1) = out.split_at_mut(m);
                for j in (0..quads).step_by(4) {
                    let bs = [brow(j), brow(j + 1), brow(j + 2), brow(j + 3)];
                    // SAFETY: AVX support checked above.
                    let r = unsafe { kernel::<2>([a0, a1], bs) };
                    o0[j..j + 4].copy_from_slice(&r[0]);
                    o1[j..j + 4].copy_from_slice(&r[1]);
                }
                for j in quads..m {
                    o0[j] = dot(a0, brow(j));
                    o1[j] = dot(a1, brow(j));
                }
            }
            _ => return None,
        }
        Some(())
    }

    #[target_feature(enable = "avx")]
    unsafe fn kernel<const R: usize>(a: [&[f32]; R], b: [&[f32]; 4]) -> [[f32; 4]; R] {
        let n = a[0].len();
        let full = n - n % LANES;
        let mut acc = [[_mm256_setzero_ps(); 4]; R];
        let mut i = 0;
        while i < full {
            let y = [
                _mm256_loadu_ps(b[0].as_ptr().add(i)),
                _mm256_loadu_ps(b[1].as_ptr().add(i)),
                _mm256_loadu_ps(b[2].as_ptr().add(i)),
                _mm256_loadu_ps(b[3].as_ptr().add(i)),
            ];
            for p in 0..R {
                let x = _mm256_loadu_ps(a[p].as_ptr().add(i));
                for q in 0..4 {
                    acc[p][q] = _mm256_add_ps(acc[p][q], _mm256_mul_ps(x, y[q]));
                }
            }
            i += LANES;
        }
        let mut out = [[0.0f32; 4]; R];
        for p in 0..R {
            for q in 0..4 {
                let mut lanes = [0.0f32; LANES];
                _mm256_storeu_ps(lanes.as_mut_ptr(), acc[p][q]);
                let mut sum = reduce(&lanes);
                for j in full..n {
                    sum += a[p][j] * b[q][j];
                }
                out[p][q] = sum;
            }
        }
        out
    }
}

/// Dense transpose of a matrix region into `rows = src.cols`, `cols = src.rows`.
pub fn transpose<T: Scalar>(src: MatRef<'_, T>) -> Vec<T> {
    let mut out = vec![T::zero(); src.rows * src.cols];
    for r in 0..src.rows {
        for (c, v) in src.row(r).iter().enumerate() {
            out[c * src.rows + r] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..19).map(|i| 1.0 - i as f64 * 0.25).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn strided_region_and_dense_copy_agree_bitwise() {
        let full: Vec<f32> = (0..36).map(|i| (i as f32 * 0.37).sin()).collect();
        let region = MatRef::new(&full, 3, 4, 6);
        let copy: Vec<f32> = (0..3).flat_map(|r| region.row(r).to_vec()).collect();
        let x: Vec<f32> = (0..8).map(|i| i as f32 * 0.1 - 0.3).collect();
        let xs = MatRef::dense(&x, 2, 4);
        let mut o1 = vec![0.0; 6];
        let mut o2 = vec![0.0; 6];
        gemm_nt(xs, region, &mut o1);
        gemm_nt(xs, MatRef::dense(&copy, 3, 4), &mut o2);
        assert_eq!(o1, o2);
    }

    #[test]
    fn blocked_kernel_matches_dot_bitwise() {
        for (n, k, m) in [(3, 19, 7), (5, 8, 4), (2, 3, 9), (4, 64, 13)] {
            let a: Vec<f32> = (0..n * k).map(|i| (i as f32 * 0.731).sin()).collect();
            let b: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.377).cos()).collect();
            let mut out = vec![0.0; n * m];
            gemm_nt(MatRef::dense(&a, n, k), MatRef::dense(&b, m, k), &mut out);
            for i in 0..n {
                for j in 0..m {
                    let d = dot(&a[i * k..(i + 1) * k], &b[j * k..(j + 1) * k]);
                    assert_eq!(out[i * m + j].to_bits(), d.to_bits());
                }
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let m: Vec<f64> = (0..12).map(f64::from).collect();
        let t = transpose(MatRef::dense(&m, 3, 4));
        assert_eq!(transpose(MatRef::dense(&t, 4, 3)), m);
    }
}
