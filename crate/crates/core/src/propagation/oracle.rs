//! Dense reference walk: `P = T^iters` by repeated squaring, then `m <- P m`.
//! Shares no code with the sparse path.

use ndarray::{Array2, Array3, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::ResponseStack;

pub const ORACLE_MAX_PIXELS: usize = 4096;

fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for k in 0..n {
            let aik = a[[i, k]];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[[i, j]] += aik * b[[k, j]];
            }
        }
    }
    out
}

fn matrix_power(t: ArrayView2<'_, f64>, mut e: usize) -> Array2<f64> {
    let n = t.nrows();
    let mut result = Array2::<f64>::eye(n);
    let mut base = t.to_owned();
    while e > 0 {
        if e & 1 == 1 {
            result = matmul(&result, &base);
        }
        e >>= 1;
        if e > 0 {
            base = matmul(&base, &base);
        }
    }
    result
}

pub fn dense_oracle_walk(t: ArrayView2<'_, f64>, responses: &ResponseStack, iters: usize) -> Result<ResponseStack> {
    let n = responses.num_pixels();
    if n > ORACLE_MAX_PIXELS {
        return Err(Error::arg(format!(
            "dense oracle limited to {ORACLE_MAX_PIXELS} pixels, got {n}"
        )));
    }
    if t.dim() != (n, n) {
        return Err(Error::arg(format!(
            "transition matrix {:?} does not match {n} pixels",
            t.dim()
        )));
    }
    let p = matrix_power(t, iters);
    let (c, h, w) = (responses.channels(), responses.height(), responses.width());
    let mut out = Array3::<f64>::zeros((c, h, w));
    for k in 0..c {
        let m = responses.channel_slice(k);
        let dst = out.as_slice_mut().expect("standard layout");
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += p[[i, j]] * m[j];
            }
            dst[k * n + i] = acc;
        }
    }
    Ok(ResponseStack::new(out))
}
