//! The performance-constraint function g(xi; F) and the dwell-time
//! maximization: find the longest grid prefix on which the interval cost
//! stays within the budgeted Lyapunov decrease.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::plant::{self, Benchmark, LtiSystem};
use crate::tables::IntegralTable;

/// One evaluation of g at a grid point.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintEval {
    /// Offset into the hold interval.
    pub xi: f64,
    /// g value: interval cost minus alpha times the Lyapunov decrease.
    pub value: f64,
    /// Whether the value is within the floating-point slack of zero.
    pub satisfied: bool,
}

/// Result of the dwell-time search.
#[derive(Debug, Clone, Copy)]
pub struct InterExecResult {
    /// Certified dwell time, exactly `grid_index * h`.
    pub delta: f64,
    /// Last grid index of the maximal satisfied prefix (0 means no
    /// positive dwell time could be certified).
    pub grid_index: usize,
    /// True when the whole table horizon is satisfied; the dwell time is
    /// then capped at the horizon.
    pub exhausted_horizon: bool,
}

/// Slack under which g <= 0 is accepted. The slack is relative to the
/// magnitudes entering g, so the test stays meaningful as the state (and
/// with it every term, quadratically) decays toward zero; an absolute
/// floor would silently accept infeasible dwell times once the Lyapunov
/// value drops below it. At xi = 0 the evaluation is exactly zero, so no
/// absolute term is needed there either.
pub fn slack_tolerance(cost: f64, alpha: f64, v_now: f64, v_next: f64) -> f64 {
    1e-9 * (cost.abs() + alpha * (v_now.abs() + v_next.abs()))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(Error::InvalidInput(format!(
            "performance budget alpha must exceed 1, got {alpha}"
        )));
    }
    Ok(())
}

/// Evaluates g(xi; F) = J(F, xi; x) + alpha (V(x(xi)) - V(x)) at a grid
/// index. Index 0 returns exactly zero.
pub fn eval_g(
    sys: &LtiSystem,
    bench: &Benchmark,
    table: &IntegralTable,
    f: &Matrix,
    x: &Vector,
    alpha: f64,
    index: usize,
) -> Result<ConstraintEval> {
    check_alpha(alpha)?;
    let cost = plant::interval_cost(table, f, x, index)?;
    let x_next = plant::propagate(sys, table, f, x, index)?;
    let v_now = bench.lyapunov(x);
    let v_next = bench.lyapunov(&x_next);
    let value = cost + alpha * (v_next - v_now);
    Ok(ConstraintEval {
        xi: table.grid().point(index),
        value,
        satisfied: value <= slack_tolerance(cost, alpha, v_now, v_next),
    })
}

/// Maximizes the dwell time for a fixed gain by scanning the grid: returns
/// the last index i such that g is satisfied at every grid point in
/// [0, i]. A result of 0 signals that even one step violates the
/// constraint and the caller must fall back.
pub fn inter_exec(
    sys: &LtiSystem,
    bench: &Benchmark,
    table: &IntegralTable,
    f: &Matrix,
    x: &Vector,
    alpha: f64,
) -> Result<InterExecResult> {
    check_alpha(alpha)?;
    let mut last = 0usize;
    for index in 1..table.count() {
        let eval = eval_g(sys, bench, table, f, x, alpha, index)?;
        if !eval.satisfied {
            return Ok(InterExecResult {
                delta: table.grid().point(last),
                grid_index: last,
                exhausted_horizon: false,
            });
        }
        last = index;
    }
    Ok(InterExecResult {
        delta: table.grid().point(last),
        grid_index: last,
        exhausted_horizon: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{build_benchmark, LtiSystem};
    use crate::tables::{build_table, TimeGrid};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scalar_system(a: f64, b: f64, q: f64, r: f64) -> LtiSystem {
        LtiSystem::new(
            Matrix::from_row_slice(1, 1, &[a]),
            Matrix::from_row_slice(1, 1, &[b]),
            Matrix::from_row_slice(1, 1, &[q]),
            Matrix::from_row_slice(1, 1, &[r]),
        )
        .unwrap()
    }

    // Closed-form scalar tables for a system (a, b, q, r).
    struct ScalarKernels {
        a: f64,
        b: f64,
        q: f64,
        r: f64,
    }

    impl ScalarKernels {
        fn e(&self, xi: f64) -> f64 {
            (self.a * xi).exp()
        }

        fn g(&self, xi: f64) -> f64 {
            ((self.a * xi).exp() - 1.0) / self.a
        }

        fn h0(&self, xi: f64) -> f64 {
            self.q * ((2.0 * self.a * xi).exp() - 1.0) / (2.0 * self.a)
        }

        fn h1(&self, xi: f64) -> f64 {
            let a = self.a;
            self.q * self.b / a
                * (((2.0 * a * xi).exp() - 1.0) / (2.0 * a) - ((a * xi).exp() - 1.0) / a)
        }

        fn h2(&self, xi: f64) -> f64 {
            let a = self.a;
            self.q * self.b * self.b / (a * a)
                * (((2.0 * a * xi).exp() - 1.0) / (2.0 * a)
                    - 2.0 * ((a * xi).exp() - 1.0) / a
                    + xi)
                + xi * self.r
        }

        fn g_value(&self, f: f64, x: f64, xi: f64, alpha: f64, p_tilde: f64) -> f64 {
            let y = self.h0(xi) + 2.0 * self.h1(xi) * f + self.h2(xi) * f * f;
            let m = self.e(xi) + self.g(xi) * self.b * f;
            x * x * (y + alpha * (m * m - 1.0) * p_tilde)
        }
    }

    #[test]
    fn g_is_exactly_zero_at_origin() {
        let sys = scalar_system(-1.0, 1.0, 1.0, 2.0);
        let bench = build_benchmark(&sys).unwrap();
        let table = build_table(&sys, &TimeGrid::new(0.01, 101).unwrap());
        let x = Vector::from_vec(vec![3.0]);
        let eval = eval_g(&sys, &bench, &table, bench.gain(), &x, 1.15, 0).unwrap();
        assert_eq!(eval.value, 0.0);
        assert!(eval.satisfied);
    }

    #[test]
    fn g_is_negative_near_zero_for_benchmark_gain() {
        let sys = scalar_system(-1.0, 1.0, 1.0, 2.0);
        let bench = build_benchmark(&sys).unwrap();
        let table = build_table(&sys, &TimeGrid::new(0.01, 101).unwrap());
        let x = Vector::from_vec(vec![1.0]);
        for index in [1, 2, 5] {
            let eval = eval_g(&sys, &bench, &table, bench.gain(), &x, 1.15, index).unwrap();
            assert!(eval.value < 0.0, "g should dip below zero for alpha > 1");
        }
    }

    #[test]
    fn g_matches_scalar_closed_form() {
        let (a, b, q, r) = (-1.0, 1.0, 1.0, 2.0);
        let sys = scalar_system(a, b, q, r);
        let bench = build_benchmark(&sys).unwrap();
        let table = build_table(&sys, &TimeGrid::new(0.01, 151).unwrap());
        let kernels = ScalarKernels { a, b, q, r };
        let f = bench.gain()[(0, 0)];
        let p = bench.value()[(0, 0)];
        let x = Vector::from_vec(vec![1.7]);
        let alpha = 1.15;
        for index in [1, 10, 60, 150] {
            let eval = eval_g(&sys, &bench, &table, bench.gain(), &x, alpha, index).unwrap();
            let oracle = kernels.g_value(f, x[0], table.grid().point(index), alpha, p);
            assert_relative_eq!(eval.value, oracle, epsilon = 1e-9, max_relative = 1e-7);
        }
    }

    #[test]
    fn benchmark_gain_certifies_positive_dwell_time() {
        let sys = scalar_system(1.0, 1.0, 1.0, 2.0);
        let bench = build_benchmark(&sys).unwrap();
        let table = build_table(&sys, &TimeGrid::new(0.01, 501).unwrap());
        let x = Vector::from_vec(vec![1.0]);
        let result = inter_exec(&sys, &bench, &table, bench.gain(), &x, 1.15).unwrap();
        assert!(result.grid_index >= 1, "dwell time must be positive at the benchmark gain");
        assert_relative_eq!(
            result.delta,
            table.grid().point(result.grid_index),
            max_relative = 1e-15
        );
    }

    #[test]
    fn destabilizing_gain_gets_cut_short() {
        // Closed loop a + b f = 3 with alpha barely above 1; the Lyapunov
        // decrease is negative from the start.
        let sys = scalar_system(1.0, 1.0, 1.0, 2.0);
        let bench = build_benchmark(&sys).unwrap();
        let table = build_table(&sys, &TimeGrid::new(0.01, 501).unwrap());
        let x = Vector::from_vec(vec![1.0]);
        let bad = Matrix::from_row_slice(1, 1, &[2.0]);
        let result = inter_exec(&sys, &bench, &table, &bad, &x, 1.05).unwrap();
        assert_eq!(result.grid_index, 0);
        assert_eq!(result.delta, 0.0);
    }

    #[test]
    fn fast_stable_plant_exhausts_horizon_open_loop() {
        // a = -5 with F = 0: g stays negative over the whole horizon, so
        // the dwell time caps at the horizon.
        let sys = scalar_system(-5.0, 1.0, 1.0, 2.0);
        let bench = build_benchmark(&sys).unwrap();
        let grid = TimeGrid::new(0.01, 301).unwrap();
        let table = build_table(&sys, &grid);
        let x = Vector::from_vec(vec![1.0]);
        let zero = Matrix::zeros(1, 1);
        let result = inter_exec(&sys, &bench, &table, &zero, &x, 1.3).unwrap();
        assert!(result.exhausted_horizon);
        assert_relative_eq!(result.delta, grid.horizon(), max_relative = 1e-15);

        // Fine quadrature of both sides of the performance inequality
        // confirms the sign over the horizon.
        let kernels = ScalarKernels {
            a: -5.0,
            b: 1.0,
            q: 1.0,
            r: 2.0,
        };
        let p = bench.value()[(0, 0)];
        for k in 1..=60 {
            let xi = k as f64 * 0.05;
            assert!(kernels.g_value(0.0, 1.0, xi, 1.3, p) < 0.0);
        }
    }

    #[test]
    fn prefix_property_holds() {
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..5 {
            let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let sys = LtiSystem::new(a, b, Matrix::identity(3, 3), Matrix::identity(2, 2)).unwrap();
            let bench = build_benchmark(&sys).unwrap();
            let table = build_table(&sys, &TimeGrid::new(0.02, 201).unwrap());
            let x = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            // Perturbed gain: not optimal, still often feasible for a while.
            let f = bench.gain() + Matrix::from_fn(2, 3, |_, _| rng.random_range(-0.05..0.05));
            let result = inter_exec(&sys, &bench, &table, &f, &x, 1.2).unwrap();
            for j in 0..=result.grid_index {
                let eval = eval_g(&sys, &bench, &table, &f, &x, 1.2, j).unwrap();
                assert!(eval.satisfied, "prefix violated at {j} of {}", result.grid_index);
            }
        }
    }

    #[test]
    fn grid_refinement_is_consistent() {
        // Halving the step never lengthens the certified dwell time by
        // more than one coarse step.
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..5 {
            let a = Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0));
            let sys = LtiSystem::new(a, b, Matrix::identity(2, 2), Matrix::identity(1, 1)).unwrap();
            let bench = build_benchmark(&sys).unwrap();
            let h = 0.02;
            let coarse = build_table(&sys, &TimeGrid::new(h, 201).unwrap());
            let fine = build_table(&sys, &TimeGrid::new(h / 2.0, 401).unwrap());
            let x = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let d_coarse = inter_exec(&sys, &bench, &coarse, bench.gain(), &x, 1.1)
                .unwrap()
                .delta;
            let d_fine = inter_exec(&sys, &bench, &fine, bench.gain(), &x, 1.1)
                .unwrap()
                .delta;
            assert!(
                d_fine <= d_coarse + h + 1e-12,
                "refinement moved delta from {d_coarse} to {d_fine}"
            );
        }
    }
}
