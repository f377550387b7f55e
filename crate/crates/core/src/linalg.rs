//! Thin safe wrappers over the two dense kernels the pipeline needs:
//! a symmetric rank-k update (for squaring a symmetric matrix) and the
//! divide-and-conquer symmetric eigensolver.
//!
//! All matrices are dense, square, row-major. For symmetric inputs row- and
//! column-major layouts coincide, which lets us hand buffers straight to
//! LAPACK.

use std::os::raw::{c_char, c_int};
use std::sync::Once;

use cblas_sys::{CBLAS_LAYOUT, CBLAS_TRANSPOSE, CBLAS_UPLO};

use crate::error::{Error, Result};

extern "C" {
    fn openblas_set_num_threads(num_threads: c_int);
}

static BLAS_INIT: Once = Once::new();

/// Pins OpenBLAS to one thread. Parallelism lives at the rayon level, and
/// threaded BLAS reductions would make results depend on the thread count.
fn init_blas() {
    BLAS_INIT.call_once(|| unsafe { openblas_set_num_threads(1) });
}

fn as_int(n: usize) -> Result<c_int> {
    c_int::try_from(n).map_err(|_| Error::invalid(format!("matrix dimension {n} exceeds BLAS range")))
}

/// Returns `A * A` for a symmetric `n x n` matrix `a`. The result is exactly
/// symmetric: only the upper triangle is computed and then mirrored.
pub(crate) fn symmetric_square(a: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n, "buffer does not hold an {n}x{n} matrix");
    init_blas();
    let mut c = vec![0.0; n * n];
    if n == 0 {
        return Ok(c);
    }
    let ni = as_int(n)?;
    // A symmetric => A^T A = A^2.
    unsafe {
        cblas_sys::cblas_dsyrk(
            CBLAS_LAYOUT::CblasRowMajor,
            CBLAS_UPLO::CblasUpper,
            CBLAS_TRANSPOSE::CblasTrans,
            ni,
            ni,
            1.0,
            a.as_ptr(),
            ni,
            0.0,
            c.as_mut_ptr(),
            ni,
        );
    }
    for i in 0..n {
        for j in (i + 1)..n {
            c[j * n + i] = c[i * n + j];
        }
    }
    Ok(c)
}

/// Full eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the eigenvectors stored
/// column-major: entry `i` of eigenvector `k` is `vectors[k * n + i]`.
pub(crate) fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n, "buffer does not hold an {n}x{n} matrix");
    init_blas();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut vectors = a.to_vec();
    let mut values = vec![0.0; n];
    let ni = as_int(n)?;
    let jobz = b'V' as c_char;
    let uplo = b'U' as c_char;
    let mut info: c_int = 0;

    // Workspace query.
    let mut work_query = [0.0f64];
    let mut iwork_query = [0 as c_int];
    let query: c_int = -1;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &ni,
            vectors.as_mut_ptr(),
            &ni,
            values.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &query,
            iwork_query.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    let lwork = work_query[0].ceil() as c_int;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &ni,
            vectors.as_mut_ptr(),
            &ni,
            values.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack { routine: "dsyevd", info });
    }
    Ok((values, vectors))
}
