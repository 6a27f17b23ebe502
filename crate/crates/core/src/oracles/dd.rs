//! Double-double arithmetic: an unevaluated sum `hi + lo` carrying about
//! 106 bits of significand.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale(self, s: f64) -> Self {
        Dd { hi: self.hi * s, lo: self.lo * s }
    }

    /// `exp(x) - 1`, accurate near zero.
    pub fn expm1(self) -> Self {
        let mut r = self;
        let mut halvings = 0;
        while r.hi.abs() > 1e-3 {
            r = r.scale(0.5);
            halvings += 1;
        }
        let mut term = r;
        let mut sum = r;
        for n in 2..14 {
            term = term * r / Dd::new(n as f64);
            sum = sum + term;
        }
        for _ in 0..halvings {
            sum = sum * (sum + Dd::new(2.0));
        }
        sum
    }

    pub fn exp(self) -> Self {
        self.expm1() + Dd::new(1.0)
    }

    /// Natural log of a positive value: one Newton step on `exp` from the
    /// `f64` estimate.
    pub fn ln(self) -> Self {
        let y = Dd::new(self.hi.ln());
        y + self * (-y).exp() - Dd::new(1.0)
    }

    pub fn tanh(self) -> Self {
        if !self.hi.is_finite() {
            return Dd::new(self.hi.tanh());
        }
        if self.hi.abs() > 40.0 {
            return Dd::new(self.hi.signum());
        }
        let neg = self.hi < 0.0;
        let ax = if neg { -self } else { self };
        let t = (ax.scale(-2.0)).expm1();
        let v = -t / (t + Dd::new(2.0));
        if neg {
            -v
        } else {
            v
        }
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd::new(v)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}
