//! Bessel functions of the first kind of integer order.

/// `J_0(x), …, J_{nmax}(x)` by Miller's backward recurrence, normalised with
/// `J_0 + 2 Σ_k J_{2k} = 1`. Accurate to a few ulps of `max_k |J_k(x)|`.
pub fn bessel_j_all(nmax: usize, x: f64) -> Vec<f64> {
    let ax = x.abs();
    if ax == 0.0 {
        let mut v = vec![0.0; nmax + 1];
        v[0] = 1.0;
        return v;
    }
    let top = (nmax as f64).max(ax);
    let mut m = (top + 30.0 + (40.0 * top).sqrt()) as usize;
    m += m % 2;
    let mut j = vec![0.0; m + 2];
    j[m + 1] = 0.0;
    j[m] = 1e-300;
    for k in (1..=m).rev() {
        j[k - 1] = 2.0 * k as f64 / ax * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in j[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let mut norm = j[0];
    for k in (2..=m).step_by(2) {
        norm += 2.0 * j[k];
    }
    let mut out: Vec<f64> = j[..=nmax].iter().map(|v| v / norm).collect();
    if x < 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// `J_n(x)` for any integer `n`.
pub fn bessel_j(n: i64, x: f64) -> f64 {
    let v = bessel_j_all(n.unsigned_abs() as usize, x)[n.unsigned_abs() as usize];
    if n < 0 && n % 2 != 0 {
        -v
    } else {
        v
    }
}
