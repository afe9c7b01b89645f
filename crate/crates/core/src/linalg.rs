//! Dense row-major linear solves for the small bordered KKT systems.

/// The elimination hit a pivot below the singularity threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub column: usize,
    pub pivot: f64,
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
///
/// `a` is `n × n` row-major and is destroyed; on success `b` holds `x`.
/// A pivot with magnitude at most `threshold` is reported as singular.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], threshold: f64) -> Result<(), Singular> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if !(best > threshold) {
            return Err(Singular { column: col, pivot: best });
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col * n + k] * b[k];
        }
        b[col] = s / a[col * n + col];
    }
    Ok(())
}
