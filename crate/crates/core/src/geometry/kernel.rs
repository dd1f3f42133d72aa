//! Poincaré-ball operations (curvature −1), generic over the arithmetic
//! backend so the same code runs in plain `f64` and on the tape.
//!
//! Every operation that produces a point ends with [`project`]. Divisions
//! by a norm use the norm clamped below by `eps_zero`.

use std::cell::Cell;

use crate::backend::{Ops, Unary};
use crate::error::{Error, Result};

thread_local! {
    static KERNEL_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of kernel operations executed on the current thread.
pub fn kernel_calls() -> u64 {
    KERNEL_CALLS.with(Cell::get)
}

fn tick() {
    KERNEL_CALLS.with(|c| c.set(c.get() + 1));
}

fn clamped_norm<O: Ops>(o: &O, v: &O::V) -> O::S {
    let eps = o.stability().eps_zero;
    o.unary(Unary::ClampMin(eps), &o.norm(v))
}

/// Rescales `v` onto the sphere of radius `1 − eps_boundary` when it lies
/// outside; interior points are returned untouched.
pub fn project<O: Ops>(o: &O, v: &O::V) -> O::V {
    tick();
    let max = 1.0 - o.stability().eps_boundary;
    let n = o.norm(v);
    if o.val(&n) > max {
        o.scale(v, &o.div(&o.lit(max), &n))
    } else {
        v.clone()
    }
}

/// λ_x = 2 / (1 − ‖x‖²).
pub fn conformal_factor<O: Ops>(o: &O, x: &O::V) -> O::S {
    tick();
    o.div(&o.lit(2.0), &o.sub(&o.lit(1.0), &o.norm_sq(x)))
}

/// γ(x) = 1 / √(1 − ‖x‖²).
pub fn lorentz_factor<O: Ops>(o: &O, x: &O::V) -> O::S {
    tick();
    let s = o.unary(Unary::Sqrt, &o.sub(&o.lit(1.0), &o.norm_sq(x)));
    o.unary(Unary::Recip, &s)
}

pub fn mobius_add<O: Ops>(o: &O, x: &O::V, y: &O::V) -> O::V {
    tick();
    let one = o.lit(1.0);
    let xy2 = o.mul(&o.lit(2.0), &o.dot(x, y));
    let x2 = o.norm_sq(x);
    let y2 = o.norm_sq(y);
    let cx = o.add(&o.add(&one, &xy2), &y2);
    let cy = o.sub(&one, &x2);
    let den = o.add(&o.add(&one, &xy2), &o.mul(&x2, &y2));
    let den = o.unary(Unary::ClampMin(o.stability().eps_zero), &den);
    let num = o.vadd(&o.scale(x, &cx), &o.scale(y, &cy));
    project(o, &o.scale(&num, &o.unary(Unary::Recip, &den)))
}

/// `r ⊗ x = tanh(r · atanh‖x‖) · x / ‖x‖`; the origin maps to itself.
pub fn mobius_scalar_mul<O: Ops>(o: &O, r: &O::S, x: &O::V) -> O::V {
    tick();
    let n = clamped_norm(o, x);
    let t = o.unary(Unary::Tanh, &o.mul(r, &o.unary(Unary::Atanh, &n)));
    project(o, &o.scale(x, &o.div(&t, &n)))
}

/// Closed-form `M ⊗ x`. Returns the origin of the output space when `x` or
/// `Mx` is below `eps_zero`.
pub fn mobius_matvec<O: Ops>(o: &O, m: &O::M, x: &O::V) -> O::V {
    tick();
    let rows = o.mat_shape(m).0;
    linear_image(o, x, rows, |o| o.matvec(m, x))
}

/// `(M diag(d)) ⊗ x`, the reset-gated product of the GRU candidate state.
pub fn mobius_matvec_gated<O: Ops>(o: &O, m: &O::M, d: &O::V, x: &O::V) -> O::V {
    tick();
    let rows = o.mat_shape(m).0;
    linear_image(o, x, rows, |o| o.matvec(m, &o.hadamard(d, x)))
}

// tanh(‖Mx‖/‖x‖ · atanh‖x‖) · Mx/‖Mx‖ given a way to form Mx.
fn linear_image<O: Ops>(o: &O, x: &O::V, rows: usize, image: impl FnOnce(&O) -> O::V) -> O::V {
    let eps = o.stability().eps_zero;
    let xn = o.norm(x);
    if o.val(&xn) < eps {
        return o.zeros(rows);
    }
    let mx = image(o);
    let mxn = o.norm(&mx);
    if o.val(&mxn) < eps {
        return o.zeros(rows);
    }
    let arg = o.mul(&o.div(&mxn, &xn), &o.unary(Unary::Atanh, &xn));
    let t = o.unary(Unary::Tanh, &arg);
    project(o, &o.scale(&mx, &o.div(&t, &mxn)))
}

/// `diag(d) ⊗ x`, realised as `exp₀(d ⊙ log₀(x))`.
pub fn mobius_diag_mul<O: Ops>(o: &O, d: &O::V, x: &O::V) -> O::V {
    tick();
    exp0(o, &o.hadamard(d, &log0(o, x)))
}

/// Möbius version of a pointwise function: `exp₀(φ(log₀(x)))`.
pub fn mobius_pointwise<O: Ops>(o: &O, phi: Unary, x: &O::V) -> O::V {
    tick();
    exp0(o, &o.vmap(phi, &log0(o, x)))
}

/// Hyperbolic distance, evaluated as `2 asinh(‖x − y‖ / √((1−‖x‖²)(1−‖y‖²)))`,
/// which equals `acosh(1 + 2‖x−y‖² / ((1−‖x‖²)(1−‖y‖²)))` but stays
/// differentiable at `x = y`.
pub fn distance<O: Ops>(o: &O, x: &O::V, y: &O::V) -> O::S {
    tick();
    let one = o.lit(1.0);
    let diff = o.norm(&o.vsub(x, y));
    let den = o.mul(&o.sub(&one, &o.norm_sq(x)), &o.sub(&one, &o.norm_sq(y)));
    let ratio = o.div(&diff, &o.unary(Unary::Sqrt, &den));
    o.mul(&o.lit(2.0), &o.unary(Unary::Asinh, &ratio))
}

/// Distance from the origin: `2 atanh‖x‖`.
pub fn distance_from_origin<O: Ops>(o: &O, x: &O::V) -> O::S {
    tick();
    o.mul(&o.lit(2.0), &o.unary(Unary::Atanh, &o.norm(x)))
}

pub fn exp0<O: Ops>(o: &O, v: &O::V) -> O::V {
    tick();
    let n = clamped_norm(o, v);
    let t = o.unary(Unary::Tanh, &n);
    project(o, &o.scale(v, &o.div(&t, &n)))
}

pub fn log0<O: Ops>(o: &O, y: &O::V) -> O::V {
    tick();
    let n = clamped_norm(o, y);
    let t = o.unary(Unary::Atanh, &n);
    o.scale(y, &o.div(&t, &n))
}

/// `exp_x(v) = x ⊕ tanh(λ_x ‖v‖ / 2) v / ‖v‖`.
pub fn exp_x<O: Ops>(o: &O, x: &O::V, v: &O::V) -> O::V {
    tick();
    let lambda = conformal_factor(o, x);
    let n = clamped_norm(o, v);
    let arg = o.mul(&o.mul(&o.lit(0.5), &lambda), &n);
    let t = o.unary(Unary::Tanh, &arg);
    let step = o.scale(v, &o.div(&t, &n));
    mobius_add(o, x, &step)
}

/// `log_x(y) = (2/λ_x) atanh‖−x ⊕ y‖ · (−x ⊕ y)/‖−x ⊕ y‖`; zero when `y = x`.
pub fn log_x<O: Ops>(o: &O, x: &O::V, y: &O::V) -> O::V {
    tick();
    let w = mobius_add(o, &o.vneg(x), y);
    let lambda = conformal_factor(o, x);
    let n = clamped_norm(o, &w);
    let coef = o.div(
        &o.mul(&o.div(&o.lit(2.0), &lambda), &o.unary(Unary::Atanh, &n)),
        &n,
    );
    o.scale(&w, &coef)
}

/// Transport of `v ∈ T₀` to `T_x`: `(λ₀/λ_x) v = (1 − ‖x‖²) v`.
pub fn parallel_transport_from_origin<O: Ops>(o: &O, x: &O::V, v: &O::V) -> O::V {
    tick();
    o.scale(v, &o.sub(&o.lit(1.0), &o.norm_sq(x)))
}

/// Weighted Möbius midpoint
/// `½ ⊗ (Σ αᵢ γᵢ² xᵢ) / (Σ αᵢ (γᵢ² − ½))`.
pub fn mobius_midpoint<O: Ops>(o: &O, points: &[O::V], weights: &[O::S]) -> Result<O::V> {
    tick();
    if points.is_empty() {
        return Err(Error::InvalidArgument("midpoint of an empty set".into()));
    }
    if points.len() != weights.len() {
        return Err(Error::dims(points.len(), weights.len()));
    }
    let mut total = 0.0;
    for w in weights {
        let w = o.val(w);
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("midpoint weight {w} is not a nonnegative real")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument("midpoint weights are all zero".into()));
    }
    let one = o.lit(1.0);
    let half = o.lit(0.5);
    let mut num: Option<O::V> = None;
    let mut den: Option<O::S> = None;
    for (x, w) in points.iter().zip(weights) {
        let gamma_sq = o.unary(Unary::Recip, &o.sub(&one, &o.norm_sq(x)));
        let term = o.scale(x, &o.mul(w, &gamma_sq));
        let dterm = o.mul(w, &o.sub(&gamma_sq, &half));
        num = Some(match num {
            None => term,
            Some(acc) => o.vadd(&acc, &term),
        });
        den = Some(match den {
            None => dterm,
            Some(acc) => o.add(&acc, &dterm),
        });
    }
    let (num, den) = (num.expect("nonempty"), den.expect("nonempty"));
    let inner = o.scale(&num, &o.unary(Unary::Recip, &den));
    Ok(mobius_scalar_mul(o, &half, &inner))
}

/// Hyperbolic MLR logit with the tangent normal parameterised at the origin:
/// `2‖a‖ asinh(2⟨−p ⊕ x, a⟩ / ((1 − ‖−p ⊕ x‖²) ‖a‖))`.
pub fn mlr_logit<O: Ops>(o: &O, p: &O::V, a: &O::V, x: &O::V) -> O::S {
    tick();
    let z = mobius_add(o, &o.vneg(p), x);
    let an = clamped_norm(o, a);
    let two = o.lit(2.0);
    let den = o.mul(&o.sub(&o.lit(1.0), &o.norm_sq(&z)), &an);
    let arg = o.div(&o.mul(&two, &o.dot(&z, a)), &den);
    o.mul(&o.mul(&two, &an), &o.unary(Unary::Asinh, &arg))
}
