/// Pairwise (cascade) summation.
///
/// Deterministic for a fixed input order and insensitive to thread count,
/// since reductions always happen over an index-ordered slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Nearest-rank quantile; mutates the scratch slice via selection.
pub fn quantile_nearest(scratch: &mut [f64], p: f64) -> f64 {
    assert!(!scratch.is_empty());
    let idx = ((scratch.len() - 1) as f64 * p).round() as usize;
    let (_, v, _) = scratch.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *v
}
