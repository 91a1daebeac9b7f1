//! Levenberg–Marquardt for small dense nonlinear least-squares problems.
//!
//! The engine minimizes `‖r(x)‖²` using forward-difference Jacobians and the
//! Marquardt-scaled normal equations
//! `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr`, solved by SVD so that rank-deficient
//! directions (for example the scale gauge of a quaternion) get a
//! minimum-norm step instead of blowing up.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative finite-difference step.
pub const FD_EPSILON: f64 = 1e-7;

const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MIN: f64 = 1e-20;

/// Anything that maps a parameter vector to a residual vector.
///
/// Non-finite residual entries signal an infeasible point; the solver treats
/// such a step as rejected.
pub trait ResidualFn {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;
}

impl<F> ResidualFn for F
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        self(params)
    }
}

pub struct LeastSquaresProblem<F> {
    pub residual_fn: F,
    pub initial_params: DVector<f64>,
}

impl<F: ResidualFn> LeastSquaresProblem<F> {
    pub fn new(residual_fn: F, initial_params: DVector<f64>) -> Self {
        Self {
            residual_fn,
            initial_params,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by at most this fraction.
    pub fn_tolerance: f64,
    /// Stop when `‖δ‖ ≤ tol · (‖x‖ + tol)`.
    pub param_tolerance: f64,
    /// Stop when `‖Jᵀr‖∞ ≤ tol · max(1, ‖Jᵀr‖∞ at the start)`.
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            fn_tolerance: 1e-12,
            param_tolerance: 1e-12,
            gradient_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            self.fn_tolerance,
            self.param_tolerance,
            self.gradient_tolerance,
            self.initial_damping,
        ];
        if self.max_iterations == 0 || tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config(
                "solver tolerances and damping must be positive and max_iterations >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    FnTol,
    ParamTol,
    GradTol,
    MaxIter,
    /// Damping escalated past its ceiling without finding a better point.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    pub initial_cost: f64,
    /// Sum of squared residuals at the returned parameters.
    pub final_cost: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    pub termination: Termination,
    /// Initial cost followed by the cost after each accepted step.
    pub cost_trace: Vec<f64>,
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Forward-difference Jacobian with step `1e-7 · max(|xᵢ|, 1)`.
///
/// A column whose forward perturbation is not finite is retried with a
/// backward difference.
pub fn jacobian<F: ResidualFn>(residual_fn: &F, params: &DVector<f64>) -> Result<DMatrix<f64>> {
    let r0 = residual_fn.residuals(params);
    if !all_finite(&r0) {
        return Err(Error::InvalidStart);
    }
    jacobian_at(residual_fn, params, &r0)
}

fn jacobian_at<F: ResidualFn>(residual_fn: &F, params: &DVector<f64>, r0: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(r0.len(), params.len());
    let mut x = params.clone();
    for i in 0..params.len() {
        let xi = params[i];
        let h = FD_EPSILON * xi.abs().max(1.0);
        x[i] = xi + h;
        let fwd = residual_fn.residuals(&x);
        let col = if all_finite(&fwd) {
            (fwd - r0) / ((xi + h) - xi)
        } else {
            x[i] = xi - h;
            let bwd = residual_fn.residuals(&x);
            if !all_finite(&bwd) {
                return Err(Error::NonFiniteJacobian { column: i });
            }
            (r0 - bwd) / (xi - (xi - h))
        };
        jac.set_column(i, &col);
        x[i] = xi;
    }
    Ok(jac)
}

fn solve_damped(h: &DMatrix<f64>, scale: &DVector<f64>, lambda: f64, g: &DVector<f64>) -> Option<DVector<f64>> {
    let mut a = h.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * scale[i];
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return None;
    }
    let eps = smax * f64::EPSILON * h.nrows() as f64;
    let delta = svd.solve(&(-g), eps).ok()?;
    all_finite(&delta).then_some(delta)
}

/// Minimizes `‖r(x)‖²` starting from `problem.initial_params`.
///
/// Accepted steps strictly lower the cost, so the returned cost never exceeds
/// the initial one. Damping is divided by 10 after an accepted step and
/// multiplied by 10 after a rejected one; escalation past 1e12 ends the run
/// with [`Termination::Stalled`].
pub fn solve_lm<F: ResidualFn>(
    problem: &LeastSquaresProblem<F>,
    options: &SolverOptions,
) -> Result<(DVector<f64>, SolverReport)> {
    options.validate()?;
    let f = &problem.residual_fn;
    let mut x = problem.initial_params.clone();
    let mut r = f.residuals(&x);
    if !all_finite(&r) {
        return Err(Error::InvalidStart);
    }
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = options.initial_damping;
    let mut iterations = 0;
    // Gradient test is relative to the starting gradient (floored at 1).
    let mut grad_tol = None;

    let termination = 'outer: loop {
        if iterations >= options.max_iterations {
            break Termination::MaxIter;
        }
        if cost == 0.0 {
            break Termination::GradTol;
        }
        let jac = jacobian_at(f, &x, &r)?;
        let g = jac.tr_mul(&r);
        let grad_tol = *grad_tol.get_or_insert(options.gradient_tolerance * g.amax().max(1.0));
        if g.amax() <= grad_tol {
            break Termination::GradTol;
        }
        let h = jac.tr_mul(&jac);
        let dmax = h.diagonal().max();
        let floor = (dmax * 1e-12).max(f64::MIN_POSITIVE);
        let scale = h.diagonal().map(|d| d.max(floor));

        loop {
            if let Some(delta) = solve_damped(&h, &scale, lambda, &g) {
                let x_new = &x + &delta;
                let r_new = f.residuals(&x_new);
                if all_finite(&r_new) {
                    let cost_new = r_new.norm_squared();
                    if cost_new < cost {
                        let decrease = cost - cost_new;
                        let old_cost = cost;
                        x = x_new;
                        r = r_new;
                        cost = cost_new;
                        trace.push(cost);
                        iterations += 1;
                        lambda = (lambda / 10.0).max(LAMBDA_MIN);
                        if decrease <= options.fn_tolerance * old_cost {
                            break 'outer Termination::FnTol;
                        }
                        if delta.norm() <= options.param_tolerance * (x.norm() + options.param_tolerance) {
                            break 'outer Termination::ParamTol;
                        }
                        // Gradient at the new point, linearized with the current Jacobian.
                        if cost == 0.0 || jac.tr_mul(&r).amax() <= grad_tol {
                            break 'outer Termination::GradTol;
                        }
                        continue 'outer;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break 'outer Termination::Stalled;
            }
        }
    };

    Ok((
        x,
        SolverReport {
            initial_cost,
            final_cost: cost,
            iterations,
            termination,
            cost_trace: trace,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_scalar_converges_in_three_steps() {
        let p = LeastSquaresProblem::new(
            |x: &DVector<f64>| DVector::from_element(1, x[0] - 3.0),
            DVector::zeros(1),
        );
        let (x, report) = solve_lm(&p, &SolverOptions::default()).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-10, "x = {}", x[0]);
        assert!(report.iterations <= 3, "{report:?}");
    }

    #[test]
    fn rosenbrock() {
        let p = LeastSquaresProblem::new(
            |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            DVector::from_vec(vec![-1.2, 1.0]),
        );
        let (x, report) = solve_lm(&p, &SolverOptions::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x} {report:?}");
    }

    #[test]
    fn cost_trace_is_monotone() {
        let p = LeastSquaresProblem::new(
            |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[0] + x[1] - 11.0, x[0] + x[1] * x[1] - 7.0, 0.1 * x[0]]),
            DVector::from_vec(vec![0.0, 0.0]),
        );
        let (_, report) = solve_lm(&p, &SolverOptions::default()).unwrap();
        assert!(report.cost_trace.windows(2).all(|w| w[1] < w[0]));
        assert!(report.final_cost <= report.initial_cost);
        assert_eq!(report.cost_trace.len(), report.iterations + 1);
    }

    #[test]
    fn jacobian_examples() {
        let f = |x: &DVector<f64>| DVector::from_element(1, x[0] * x[0]);
        let j = jacobian(&f, &DVector::from_element(1, 2.0)).unwrap();
        assert_relative_eq!(j[(0, 0)], 4.0, epsilon = 1e-6);

        let a = DMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let a2 = a.clone();
        let f = move |x: &DVector<f64>| &a2 * x;
        let j = jacobian(&f, &DVector::from_vec(vec![0.5, -2.0, 3.0])).unwrap();
        assert!((j - a).amax() < 1e-6);
    }

    #[test]
    fn jacobian_falls_back_to_backward_difference() {
        // sqrt(1 - x) is NaN for x > 1; at x = 1 the forward step fails.
        let f = |x: &DVector<f64>| DVector::from_element(1, if x[0] > 1.0 { f64::NAN } else { 2.0 * x[0] });
        let j = jacobian(&f, &DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(j[(0, 0)], 2.0, epsilon = 1e-6);

        let g = |x: &DVector<f64>| DVector::from_element(1, if x[0] != 1.0 { f64::NAN } else { 0.0 });
        assert!(matches!(
            jacobian(&g, &DVector::from_element(1, 1.0)),
            Err(Error::NonFiniteJacobian { column: 0 })
        ));
    }

    #[test]
    fn invalid_start() {
        let p = LeastSquaresProblem::new(|_: &DVector<f64>| DVector::from_element(1, f64::NAN), DVector::zeros(1));
        assert!(matches!(
            solve_lm(&p, &SolverOptions::default()),
            Err(Error::InvalidStart)
        ));
    }

    #[test]
    fn bad_options_rejected() {
        let p = LeastSquaresProblem::new(|x: &DVector<f64>| x.clone(), DVector::zeros(1));
        let opts = SolverOptions {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(solve_lm(&p, &opts).is_err());
    }

    #[test]
    fn deterministic() {
        let p = LeastSquaresProblem::new(
            |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]),
            DVector::from_vec(vec![-1.2, 1.0]),
        );
        let a = solve_lm(&p, &SolverOptions::default()).unwrap();
        let b = solve_lm(&p, &SolverOptions::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn gauge_freedom_does_not_break_the_solve() {
        // Only the direction of x matters: r = x/‖x‖ − target.
        let target = DVector::from_vec(vec![0.6, 0.8]);
        let p = LeastSquaresProblem::new(
            move |x: &DVector<f64>| x / x.norm() - &target,
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let (x, report) = solve_lm(&p, &SolverOptions::default()).unwrap();
        let dir = &x / x.norm();
        assert!((dir[0] - 0.6).abs() < 1e-8 && (dir[1] - 0.8).abs() < 1e-8, "{report:?}");
    }
}
