//! Finite-difference stencils on uniform grids.

/// Fornberg's algorithm: weights `w[m][k]` such that
/// `f^(m)(z) ~ sum_k w[m][k] f(x[k])` for `m = 0..=max_order`.
pub fn fornberg(z: f64, x: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Number of stencil points for a derivative of order `order` with formal
/// accuracy `accuracy` (even) on a centered uniform stencil.
pub fn stencil_width(order: usize, accuracy: usize) -> usize {
    2 * order.div_ceil(2) - 1 + accuracy
}

/// `order`-th derivative of uniformly sampled values with spacing `h`,
/// centered in the interior and shifted one-sided near the ends.
pub fn derivative(values: &[f64], h: f64, order: usize, accuracy: usize) -> Vec<f64> {
    let n = values.len();
    if order == 0 {
        return values.to_vec();
    }
    let width = stencil_width(order, accuracy).min(n);
    let half = (width / 2) as i64;
    // weights depend only on the position of the evaluation node inside the
    // stencil; cache by start offset
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; width];
    let scale = h.powi(-(order as i32));
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let start = (i as i64 - half).clamp(0, (n - width) as i64) as usize;
        let pos = i - start;
        let w = cache[pos].get_or_insert_with(|| {
            let locs: Vec<f64> = (0..width).map(|k| k as f64).collect();
            fornberg(pos as f64, &locs, order).swap_remove(order)
        });
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            acc += wk * values[start + k];
        }
        *o = acc * scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_five_point_second_derivative() {
        let w = fornberg(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expected = [-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w[2].iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_of_smooth_function() {
        let h = 0.01;
        let xs: Vec<f64> = (0..401).map(|i| -2.0 + i as f64 * h).collect();
        let v: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let d1 = derivative(&v, h, 1, 6);
        let d4 = derivative(&v, h, 4, 6);
        for i in 0..xs.len() {
            assert!((d1[i] - xs[i].cos()).abs() < 1e-10, "d1 at {i}");
            assert!((d4[i] - xs[i].sin()).abs() < 2e-3, "d4 at {i}");
        }
        for i in 10..390 {
            assert!((d4[i] - xs[i].sin()).abs() < 1e-5, "interior d4 at {i}");
        }
    }
}
