//! Integer-order Bessel functions of the first kind.

/// `J_0(x), ..., J_max_order(x)` by Miller's backward recurrence, normalized
/// with `J_0 + 2 sum_k J_2k = 1`.
pub fn bessel_j_sequence(max_order: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if x < 0.0 {
        let mut pos = bessel_j_sequence(max_order, -x);
        for (n, v) in pos.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
        return pos;
    }
    if x < 1e-8 {
        // Two-term power series; the recurrence would overflow here.
        let h = 0.5 * x;
        let mut term = 1.0;
        for (n, v) in out.iter_mut().enumerate() {
            if n > 0 {
                term *= h / n as f64;
            }
            *v = term * (1.0 - h * h / (n as f64 + 1.0));
        }
        return out;
    }

    let top = max_order.max(x.ceil() as usize);
    let mut start = top + 20 + (40.0 * top as f64).sqrt() as usize;
    start += start % 2;

    let mut j_next = 0.0;
    let mut j_cur = 1e-300;
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        let j_prev = 2.0 * k as f64 / x * j_cur - j_next;
        if k - 1 <= max_order {
            out[k - 1] = j_prev;
        }
        if k <= max_order {
            out[k] = j_cur;
        }
        if (k - 1) % 2 == 0 && k > 1 {
            norm += 2.0 * j_prev;
        }
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    norm += j_cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

pub fn bessel_j(order: usize, x: f64) -> f64 {
    bessel_j_sequence(order, x)[order]
}
