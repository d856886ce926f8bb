//! Closed interval arithmetic over `f64` with outward rounding.
//!
//! Every operation returns an interval that encloses the exact real-valued
//! range of the operation over its inputs. Since the primitive `f64`
//! operations round to nearest, each computed endpoint is pushed outward by
//! one unit in the last place plus a relative slack of `1e-14`, which
//! dominates the worst-case libm error for the transcendental functions on
//! the magnitudes this crate works with.
//!
//! Division by an interval containing zero and `tan` over an interval
//! containing a pole return the whole extended real line rather than an
//! error; the enclosure stays sound and the caller decides what to do with
//! an unbounded range.

/// Relative outward slack applied to every inexact endpoint.
const REL_SLACK: f64 = 1e-14;

/// A closed interval `[lo, hi]`. Endpoints may be infinite; `lo <= hi`
/// always holds and neither endpoint is NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn widen_lo(v: f64) -> f64 {
    if v.is_finite() {
        (v - v.abs() * REL_SLACK).next_down()
    } else {
        v
    }
}

fn widen_hi(v: f64) -> f64 {
    if v.is_finite() {
        (v + v.abs() * REL_SLACK).next_up()
    } else {
        v
    }
}

/// Product of two endpoint values under the convention `0 * inf = 0`,
/// which is correct for interval endpoints (a zero factor collapses the
/// whole product set to zero).
fn emul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

/// True when some `offset + k * period` (integer `k`) lies in `[lo, hi]`.
/// Used to detect trig extrema and poles. The test errs toward `true`
/// near boundaries only within floating-point error of the endpoints,
/// where the detected extremum differs from the endpoint value by far
/// less than the outward slack.
fn contains_grid_point(lo: f64, hi: f64, offset: f64, period: f64) -> bool {
    let k = ((lo - offset) / period).ceil();
    offset + k * period <= hi
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Self::entire();
        }
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self::new(v, v)
    }

    pub fn entire() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        if self.lo.is_infinite() && self.hi.is_infinite() {
            return 0.0;
        }
        if self.lo.is_infinite() {
            return self.hi;
        }
        if self.hi.is_infinite() {
            return self.lo;
        }
        let m = 0.5 * (self.lo + self.hi);
        // Guard against overflow on huge finite endpoints.
        if m.is_finite() {
            m
        } else {
            0.5 * self.lo + 0.5 * self.hi
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn neg(&self) -> Interval {
        // Negation is exact in IEEE arithmetic: no widening.
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::new(widen_lo(self.lo + o.lo), widen_hi(self.hi + o.hi))
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval::new(widen_lo(self.lo - o.hi), widen_hi(self.hi - o.lo))
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [
            emul(self.lo, o.lo),
            emul(self.lo, o.hi),
            emul(self.hi, o.lo),
            emul(self.hi, o.hi),
        ];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(widen_lo(lo), widen_hi(hi))
    }

    pub fn div(&self, o: &Interval) -> Interval {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Interval::entire();
        }
        let recip = Interval::new(widen_lo(1.0 / o.hi), widen_hi(1.0 / o.lo));
        self.mul(&recip)
    }

    pub fn sin(&self) -> Interval {
        use std::f64::consts::{FRAC_PI_2, TAU};
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= TAU {
            return Interval { lo: -1.0, hi: 1.0 };
        }
        let mut lo = self.lo.sin().min(self.hi.sin());
        let mut hi = self.lo.sin().max(self.hi.sin());
        if contains_grid_point(self.lo, self.hi, FRAC_PI_2, TAU) {
            hi = 1.0;
        } else {
            hi = widen_hi(hi).min(1.0);
        }
        if contains_grid_point(self.lo, self.hi, -FRAC_PI_2, TAU) {
            lo = -1.0;
        } else {
            lo = widen_lo(lo).max(-1.0);
        }
        Interval::new(lo, hi)
    }

    pub fn cos(&self) -> Interval {
        use std::f64::consts::{PI, TAU};
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= TAU {
            return Interval { lo: -1.0, hi: 1.0 };
        }
        let mut lo = self.lo.cos().min(self.hi.cos());
        let mut hi = self.lo.cos().max(self.hi.cos());
        if contains_grid_point(self.lo, self.hi, 0.0, TAU) {
            hi = 1.0;
        } else {
            hi = widen_hi(hi).min(1.0);
        }
        if contains_grid_point(self.lo, self.hi, PI, TAU) {
            lo = -1.0;
        } else {
            lo = widen_lo(lo).max(-1.0);
        }
        Interval::new(lo, hi)
    }

    pub fn tan(&self) -> Interval {
        use std::f64::consts::{FRAC_PI_2, PI};
        if !self.lo.is_finite() || !self.hi.is_finite() || self.width() >= PI {
            return Interval::entire();
        }
        if contains_grid_point(self.lo, self.hi, FRAC_PI_2, PI) {
            return Interval::entire();
        }
        let lo = widen_lo(self.lo.tan());
        let hi = widen_hi(self.hi.tan());
        if lo > hi {
            // A pole slipped past the grid test (endpoint within one ulp of
            // a pole); fall back to the sound answer.
            return Interval::entire();
        }
        Interval::new(lo, hi)
    }
}
