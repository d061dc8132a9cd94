//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{EgatError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per parameter; `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    /// `(parameter index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Compares the tape gradient of `f` against central differences.
///
/// `f` builds a scalar on a fresh tape from the bound parameters. The
/// error at each coordinate is `|analytic - numeric| / max(1, |analytic|)`
/// and the report carries the maximum over the checked coordinates.
pub fn finite_diff_check<'a, F>(params: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        tape.ensure_finite()?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item();
    let grads = tape.backward(out)?;
    let again = eval(params)?;
    if base.to_bits() != again.to_bits() {
        return Err(EgatError::NonDeterministic {
            first: base,
            second: again,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates_checked: 0,
        worst: None,
    };
    for (pi, (p, v)) in params.iter().zip(&vars).enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let n = p.value().len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let analytic = grads.get(*v).map_or(0.0, |g| g.as_slice()[c]);
            let orig = p.value().as_slice()[c];
            work[pi].value_mut().as_mut_slice()[c] = orig + opts.epsilon;
            let up = eval(&work)?;
            work[pi].value_mut().as_mut_slice()[c] = orig - opts.epsilon;
            let down = eval(&work)?;
            work[pi].value_mut().as_mut_slice()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.epsilon);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            report.coordinates_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((pi, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    #[test]
    fn sum_of_squares_is_exact() {
        let params = vec![
            Tensor::new(Matrix::from_rows(&[[0.3, -1.2], [2.5, 0.0]]).unwrap()),
            Tensor::new(Matrix::column(&[4.0, -0.5, 1e-3])),
        ];
        let report = finite_diff_check(
            &params,
            |tape, vars| {
                let a = tape.sum_squares(vars[0]);
                let b = tape.sum_squares(vars[1]);
                tape.add(a, b)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.coordinates_checked, 7);
        assert!(report.max_relative_error < 1e-9, "{report:?}");
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let params = vec![Tensor::new(Matrix::column(&[0.7, -0.4]))];
        let report = finite_diff_check(
            &params,
            |tape, vars| {
                let y = tape.leaky_relu(vars[0], 0.2);
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8);
    }

    #[test]
    fn sampling_limits_coordinates() {
        let params = vec![Tensor::new(Matrix::filled(10, 10, 0.5))];
        let opts = GradCheckOptions {
            max_coords_per_param: Some(7),
            ..Default::default()
        };
        let report = finite_diff_check(&params, |tape, vars| Ok(tape.sum_squares(vars[0])), &opts).unwrap();
        assert_eq!(report.coordinates_checked, 7);
    }

    #[test]
    fn nondeterminism_is_an_error() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let params = vec![Tensor::new(Matrix::scalar(1.0))];
        let result = finite_diff_check(
            &params,
            |tape, vars| {
                calls.set(calls.get() + 1.0);
                let c = tape.constant(Matrix::scalar(calls.get()));
                let s = tape.sum(vars[0]);
                tape.add(s, c)
            },
            &GradCheckOptions::default(),
        );
        assert!(matches!(result, Err(EgatError::NonDeterministic { .. })));
    }
}
