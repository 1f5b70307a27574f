use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Coordinates compared against the finite-difference estimate.
    pub coordinates_checked: usize,
    /// Coordinates left out because the loss is not smooth inside the
    /// stencil (see [`GradCheckOptions::smoothness_tol`]).
    pub unresolved: usize,
}

/// Second differences below this size are dominated by round-off.
const CURVATURE_FLOOR: f64 = 1e-2;
/// A smooth loss has `C(h) ≈ C(h/2) ≈ f''`; a kink makes `C` grow like
/// `1/h` and a jump like `1/h²`, so the two differ by half or more. A
/// smaller gap still flags losses whose curvature changes on the scale of
/// the step, where the Taylor expansion behind the stencil breaks down.
const CURVATURE_TOL: f64 = 0.1;

fn smooth(a: f64, b: f64, floor: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

/// Denominator floor used by [`gradient_check`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Compares tape gradients against central differences
/// `(f(x+eps) - f(x-eps)) / 2eps` on every coordinate of every parameter.
///
/// `loss_fn` receives a fresh tape, the parameter handles and an RNG reseeded
/// from `seed` on every evaluation, so seeded dropout is allowed. A loss that
/// changes between two evaluations at the same point is rejected.
pub fn gradient_check<'g, F>(
    loss_fn: F,
    params: &[Array2<f64>],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'g>, &[Var], &mut ChaCha8Rng) -> Result<Var>,
{
    gradient_check_with_options(
        loss_fn,
        params,
        &GradCheckOptions {
            eps,
            seed,
            floor: DEFAULT_FLOOR,
            richardson: false,
            smoothness_tol: None,
        },
    )
}

/// Settings of [`gradient_check_with_options`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub seed: u64,
    /// Lower bound of the relative-error denominator
    /// `max(|a|, |n|, floor)`. Gradients smaller than `floor` are thus judged
    /// on absolute error, which keeps round-off in `f(x±eps)` from
    /// dominating coordinates whose true derivative is (nearly) zero.
    pub floor: f64,
    /// Use the Richardson combination `(4·D(eps/2) - D(eps)) / 3` of two
    /// central differences, which cancels the `O(eps²)` truncation term.
    pub richardson: bool,
    /// When set, differences at `eps` and `eps/2` are both evaluated. A
    /// coordinate is counted as unresolved instead of compared when the two
    /// first differences differ by more than this fraction of their size, or
    /// when the two second differences disagree: the loss has a kink or a
    /// near-discontinuity within `eps`, so no difference quotient is a valid
    /// reference there. A wrong analytic gradient at a smooth point still
    /// yields mutually consistent estimates and is caught.
    pub smoothness_tol: Option<f64>,
}

pub fn gradient_check_with_options<'g, F>(
    mut loss_fn: F,
    params: &[Array2<f64>],
    options: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<'g>, &[Var], &mut ChaCha8Rng) -> Result<Var>,
{
    let GradCheckOptions {
        eps,
        seed,
        floor,
        richardson,
        smoothness_tol,
    } = *options;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("step {eps} must be positive")));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidArgument(format!("floor {floor} must be positive")));
    }
    let mut evaluate = |values: &[Array2<f64>], want_grads: bool| -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loss = loss_fn(&mut tape, &vars, &mut rng)?;
        let value = tape.scalar(loss);
        let grads = if want_grads {
            let mut g = tape.backward(loss)?;
            vars.iter()
                .zip(values)
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Array2::zeros(p.dim())))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (first, analytic) = evaluate(params, true)?;
    let (second, _) = evaluate(params, false)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
        unresolved: 0,
    };
    for p in 0..work.len() {
        let cols = work[p].ncols();
        for k in 0..work[p].len() {
            let at = (k / cols, k % cols);
            let original = work[p][at];
            let mut shifted = |h: f64| -> Result<(f64, f64)> {
                work[p][at] = original + h;
                let (plus, _) = evaluate(&work, false)?;
                work[p][at] = original - h;
                let (minus, _) = evaluate(&work, false)?;
                work[p][at] = original;
                Ok((plus, minus))
            };
            let (plus, minus) = shifted(eps)?;
            let coarse = (plus - minus) / (2.0 * eps);
            let numeric = if richardson || smoothness_tol.is_some() {
                let half = eps / 2.0;
                let (plus_half, minus_half) = shifted(half)?;
                let fine = (plus_half - minus_half) / (2.0 * half);
                if let Some(tol) = smoothness_tol {
                    let curvature = (plus - 2.0 * first + minus) / (eps * eps);
                    let curvature_half = (plus_half - 2.0 * first + minus_half) / (half * half);
                    if !smooth(coarse, fine, floor, tol)
                        || !smooth(curvature, curvature_half, CURVATURE_FLOOR, CURVATURE_TOL)
                    {
                        report.unresolved += 1;
                        continue;
                    }
                }
                if richardson {
                    (4.0 * fine - coarse) / 3.0
                } else {
                    coarse
                }
            } else {
                coarse
            };
            let exact = analytic[p][at];
            let denom = exact.abs().max(numeric.abs()).max(floor);
            let rel = (exact - numeric).abs() / denom;
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((p, k));
            }
        }
    }
    Ok(report)
}
