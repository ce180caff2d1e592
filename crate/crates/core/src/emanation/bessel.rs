/// Bessel function of the first kind `J_n(x)` for integer order.
///
/// Power series for |x| <= 1; Miller's backward recurrence normalized by
/// `J_0 + 2 sum_k J_2k = 1` beyond that.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = bessel_j(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    let n = n as u32;
    if x.abs() <= 1.0 {
        return series(n, x);
    }
    let v = miller(n, x.abs());
    if x < 0.0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

fn series(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    // leading term (x/2)^n / n!
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let q = half * half;
    let mut sum = term;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= -q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) && k > 2 {
            break;
        }
        if k > 500 {
            break;
        }
    }
    sum
}

fn miller(n: u32, x: f64) -> f64 {
    let top = n.max(x.ceil() as u32);
    let mut m = top + 20 + (40.0 * top as f64).sqrt() as u32;
    m += m % 2;
    // j = J_k, jp = J_(k+1), up to a common scale
    let (mut jp, mut j) = (0.0f64, 1e-30f64);
    let (mut norm, mut result) = (0.0f64, 0.0f64);
    for k in (1..=m).rev() {
        let jm = 2.0 * k as f64 / x * j - jp;
        jp = j;
        j = jm;
        let order = k - 1;
        if j.abs() > 1e250 {
            j *= 1e-250;
            jp *= 1e-250;
            norm *= 1e-250;
            result *= 1e-250;
        }
        if order == n {
            result = j;
        }
        if order > 0 && order % 2 == 0 {
            norm += 2.0 * j;
        }
    }
    norm += j;
    result / norm
}
