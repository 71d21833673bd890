use crate::grid::TimeGrid;

/// Linear blend between two samples with weight `w` in `[0, 1]`.
pub fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + w * (b - a)
}

/// Stencil indices and Lagrange weights for 4-point interpolation at `t`.
///
/// Returns `([i0, i1, i2, i3], [w0, w1, w2, w3])`; the interpolant is
/// `sum_k w_k * values[i_k]`. Uses the four nearest grid points (shifted
/// one-sided near the ends), which keeps the interpolation error at O(h^4)
/// on uniform grids. Exact at grid points.
pub fn cubic4_weights(grid: &TimeGrid, t: f64) -> ([usize; 4], [f64; 4]) {
    let n = grid.n_steps();
    if n < 3 {
        // Degenerate small grids: fall back to linear weights on the bracket.
        let (i, w) = grid.locate(t);
        return ([i, i + 1, i + 1, i + 1], [1.0 - w, w, 0.0, 0.0]);
    }
    let i = grid.interval_of(t);
    let first = i.saturating_sub(1).min(n - 3);
    let idx = [first, first + 1, first + 2, first + 3];
    let ts = [
        grid.t(idx[0]),
        grid.t(idx[1]),
        grid.t(idx[2]),
        grid.t(idx[3]),
    ];
    let mut w = [0.0; 4];
    for k in 0..4 {
        let mut p = 1.0;
        for j in 0..4 {
            if j != k {
                p *= (t - ts[j]) / (ts[k] - ts[j]);
            }
        }
        w[k] = p;
    }
    (idx, w)
}

/// Cubic Hermite value at the midpoint of an interval from endpoint values
/// and endpoint derivatives.
///
/// For samples of a smooth trajectory this midpoint value is O(h^4) accurate,
/// which preserves the order of Runge-Kutta stages built on top of it.
pub fn hermite_mid(h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    0.5 * (y0 + y1) + 0.125 * h * (d0 - d1)
}

/// Derivative of the cubic Hermite interpolant at the interval midpoint.
pub fn hermite_mid_deriv(h: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    1.5 * (y1 - y0) / h - 0.25 * (d0 + d1)
}

/// Cubic Hermite interpolant at relative position `w` in `[0, 1]` of an
/// interval of width `h`, from endpoint values and derivatives.
pub fn hermite(h: f64, w: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * y0
        + (w3 - 2.0 * w2 + w) * h * d0
        + (-2.0 * w3 + 3.0 * w2) * y1
        + (w3 - w2) * h * d1
}
