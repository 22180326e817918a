//! Small numerical helpers shared across modules.

/// Log-sum-exp of `values[j] + offsets[j]` over all `j != skip`.
///
/// Reduction order is fixed (ascending `j`), so results do not depend on how
/// rows are distributed over threads.
#[inline]
pub fn lse_excluding(values: &[f64], offsets: &[f64], skip: Option<usize>) -> f64 {
    debug_assert_eq!(values.len(), offsets.len());
    let mut max = f64::NEG_INFINITY;
    for (j, (v, o)) in values.iter().zip(offsets).enumerate() {
        if Some(j) == skip {
            continue;
        }
        let t = v + o;
        if t > max {
            max = t;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for (j, (v, o)) in values.iter().zip(offsets).enumerate() {
        if Some(j) == skip {
            continue;
        }
        sum += (v + o - max).exp();
    }
    max + sum.ln()
}

/// Log-sum-exp of `scale * values[j]` over `j != skip`.
#[inline]
pub fn lse_scaled_excluding(values: &[f64], scale: f64, skip: Option<usize>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (j, v) in values.iter().enumerate() {
        if Some(j) != skip && scale * v > max {
            max = scale * v;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let mut sum = 0.0;
    for (j, v) in values.iter().enumerate() {
        if Some(j) != skip {
            sum += (scale * v - max).exp();
        }
    }
    max + sum.ln()
}

/// Plain log-sum-exp over a slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    lse_scaled_excluding(values, 1.0, None)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (1-based), ties receive the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            out[k] = avg;
        }
        start = end;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Median; NaN for an empty slice.
pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let v: [f64; 4] = [0.1, -2.0, 3.5, 0.0];
        let o = [0.5, 0.25, -1.0, 2.0];
        let naive: f64 = (0..4)
            .filter(|&j| j != 2)
            .map(|j| (v[j] + o[j]).exp())
            .sum::<f64>()
            .ln();
        assert!((lse_excluding(&v, &o, Some(2)) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_survives_huge_negative_logs() {
        let v = [-1e5, -1e5 - 1.0];
        let got = log_sum_exp(&v);
        let want = -1e5 + (1.0 + (-1.0f64).exp()).ln();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
