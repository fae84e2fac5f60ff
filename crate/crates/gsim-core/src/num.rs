//! Total-function arithmetic and argument-clipping helpers shared by the
//! interpreter and the hand-coded reference environments. Keeping both on
//! one layer is what makes twin equivalence bit-exact.

/// Hard caps applied to sampler arguments so that wide-prior exploration
/// stays total and bounded.
pub(crate) const MAX_COUNT: f64 = 9.0e15;
pub(crate) const MAX_RATE: f64 = 1.0e9;
pub(crate) const LOG_SENTINEL: f64 = -1.0e9;

#[inline]
pub(crate) fn total_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[inline]
pub(crate) fn total_log(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        LOG_SENTINEL
    }
}

#[inline]
pub(crate) fn total_pow(base: f64, exp: f64) -> f64 {
    if base < 0.0 && exp.fract() != 0.0 {
        0.0
    } else {
        base.powf(exp)
    }
}

#[inline]
pub(crate) fn clip3(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

#[inline]
pub(crate) fn clip01(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// Rounds to a nonnegative count, mapping NaN to 0 and capping overflow.
#[inline]
pub(crate) fn to_count(x: f64) -> i64 {
    if x.is_nan() {
        0
    } else {
        x.round().clamp(0.0, MAX_COUNT) as i64
    }
}

#[inline]
pub(crate) fn to_rate(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, MAX_RATE)
    }
}

use crate::rng::RngStream;

/// Binomial count with clipped arguments.
#[inline]
pub(crate) fn draw_binomial(rng: &mut RngStream, n: f64, p: f64) -> i64 {
    let n = to_count(n);
    let p = clip01(p);
    rng.binomial(n, p).expect("clamped binomial args") as i64
}

/// Poisson count with a clipped rate.
#[inline]
pub(crate) fn draw_poisson(rng: &mut RngStream, rate: f64) -> i64 {
    rng.poisson(to_rate(rate)).expect("clamped poisson rate") as i64
}

/// Negative-binomial count with clipped mean and dispersion.
#[inline]
pub(crate) fn draw_neg_binomial(rng: &mut RngStream, mean: f64, dispersion: f64) -> i64 {
    let mean = to_rate(mean);
    let disp = if dispersion.is_nan() {
        1e-6
    } else {
        dispersion.clamp(1e-6, MAX_RATE)
    };
    rng.negative_binomial(mean, disp)
        .expect("clamped negative binomial args") as i64
}

/// Rounded normal draw floored at `floor`.
#[inline]
pub(crate) fn draw_normal_count(rng: &mut RngStream, mean: f64, stdev: f64, floor: i64) -> i64 {
    let m = if mean.is_finite() {
        mean.clamp(-MAX_COUNT, MAX_COUNT)
    } else {
        0.0
    };
    let s = if stdev.is_nan() {
        0.0
    } else {
        stdev.clamp(0.0, MAX_RATE)
    };
    let v = rng.normal(m, s).expect("clamped normal args");
    to_count(v).max(floor)
}
