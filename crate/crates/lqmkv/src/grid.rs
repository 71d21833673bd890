/// Uniform time grid with an exactly pinned endpoint.
///
/// Times are generated as `t0 + i * step` so that repeated runs produce
/// bit-identical grids; the final point is pinned to `t_end` to protect
/// terminal conditions from rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Self {
        assert!(t_end > t0, "grid must have positive extent");
        assert!(n_steps >= 1, "grid needs at least one step");
        TimeGrid { t0, t_end, n_steps }
    }

    /// Grid over `[0, t_end]` with a fixed number of steps per unit of time.
    pub fn per_unit(t_end: f64, steps_per_unit: usize) -> Self {
        let n = ((t_end * steps_per_unit as f64).round() as usize).max(1);
        TimeGrid::new(0.0, t_end, n)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points (`n_steps + 1`).
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i >= self.n_steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.t(i))
    }

    /// Twice-refined grid over the same interval.
    pub fn refined(&self) -> TimeGrid {
        TimeGrid::new(self.t0, self.t_end, 2 * self.n_steps)
    }

    /// Index of the interval containing `t`, clamped to the grid.
    pub fn interval_of(&self, t: f64) -> usize {
        if t <= self.t0 {
            return 0;
        }
        let i = ((t - self.t0) / self.step()).floor() as usize;
        i.min(self.n_steps - 1)
    }

    /// Interval index and blending weight in `[0, 1]` for interpolation at `t`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let i = self.interval_of(t);
        let w = ((t - self.t(i)) / self.step()).clamp(0.0, 1.0);
        (i, w)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 - 1e-12 && t <= self.t_end + 1e-12
    }
}
