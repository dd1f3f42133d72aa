//! Reverse-mode differentiation.
//!
//! A [`Tape`] implements [`crate::backend::Ops`], so every geometry kernel
//! and layer can be recorded and differentiated. Gradients are taken with
//! respect to ambient coordinates; the optimizer converts ball gradients to
//! Riemannian ones.

mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::backend::Matrix;
use crate::error::Result;
use crate::params::ParamId;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Checks the gradient of `f` at `params` against central differences of
/// step `step`, over every coordinate.
///
/// `f` builds a scalar on the supplied tape from one leaf per parameter;
/// parameter `i` is registered as `ParamId(i)`.
pub fn finite_diff_check<F>(f: F, params: &[Matrix], step: f64) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, m)| (0..m.data().len()).map(move |c| (p, c)))
        .collect();
    finite_diff_check_at(f, params, step, &all)
}

/// How numeric derivatives are formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// `(f(x+h) − f(x−h)) / 2h`.
    Central { step: f64 },
    /// Richardson extrapolation over central differences at `h`, `h/2` and
    /// `h/4`; truncation error is O(h⁶), so a large step keeps roundoff small.
    Richardson { step: f64 },
    /// Ridders' method: central differences at steps shrinking from `step`
    /// by 1.4, extrapolated in a Neville tableau; the entry with the
    /// smallest error estimate wins.
    Ridders { step: f64 },
}

/// [`finite_diff_check`] restricted to the listed `(parameter, coordinate)`
/// pairs.
pub fn finite_diff_check_at<F>(f: F, params: &[Matrix], step: f64, coords: &[(usize, usize)]) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    check_gradients(f, params, coords, Scheme::Central { step })
}

pub fn check_gradients<F>(f: F, params: &[Matrix], coords: &[(usize, usize)], scheme: Scheme) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let (Scheme::Central { step } | Scheme::Richardson { step } | Scheme::Ridders { step }) = scheme;
    assert!(step > 0.0, "finite-difference step must be positive");
    let tape = Tape::default();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, m)| tape.param(ParamId(i), m.data(), m.cols()))
        .collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut tape = Tape::default();
    let mut eval_at = |p: usize, c: usize, delta: f64| -> Result<f64> {
        tape.clear();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if i == p {
                    let mut data = m.data().to_vec();
                    data[c] += delta;
                    tape.param(ParamId(i), &data, m.cols())
                } else {
                    tape.param(ParamId(i), m.data(), m.cols())
                }
            })
            .collect();
        let out = f(&tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut central = |p: usize, c: usize, h: f64| -> Result<f64> { Ok((eval_at(p, c, h)? - eval_at(p, c, -h)?) / (2.0 * h)) };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coordinates: coords.len(),
    };
    for &(p, c) in coords {
        let analytic = grads.get(ParamId(p)).map_or(0.0, |g| g[c]);
        let numeric = match scheme {
            Scheme::Central { step } => central(p, c, step)?,
            Scheme::Richardson { step } => {
                let (d1, d2, d4) = (central(p, c, step)?, central(p, c, step / 2.0)?, central(p, c, step / 4.0)?);
                let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d4 - d2) / 3.0);
                (16.0 * r2 - r1) / 15.0
            }
            Scheme::Ridders { step } => ridders(|h| central(p, c, h), step)?,
        };
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((p, c));
        }
    }
    Ok(report)
}

fn ridders(mut d: impl FnMut(f64) -> Result<f64>, step: f64) -> Result<f64> {
    const SHRINK: f64 = 1.4;
    const ROWS: usize = 5;
    let shrink2 = SHRINK * SHRINK;
    let mut h = step;
    let mut prev: Vec<f64> = vec![d(h)?];
    let mut best = prev[0];
    let mut err = f64::INFINITY;
    for _ in 1..ROWS {
        h /= SHRINK;
        let mut row = vec![d(h)?];
        let mut fac = shrink2;
        for j in 1..=prev.len() {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        prev = row;
    }
    Ok(best)
}
