//! Forward-mode dual numbers. Nesting `Dual<Dual<f64>>` yields exact second
//! derivatives without any graph machinery.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar types the evaluation tape can run on: plain `f64` or (nested) duals.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Primal value, used for domain checks.
    fn primal(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn primal(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value plus derivative along one seeded direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub v: T,
    pub d: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn constant(v: T) -> Self {
        Dual {
            v,
            d: T::from_f64(0.0),
        }
    }
    #[inline]
    pub fn seeded(v: T) -> Self {
        Dual {
            v,
            d: T::from_f64(1.0),
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::from_f64(1.0) / o.v;
        Dual {
            v: self.v * inv,
            d: (self.d - self.v * inv * o.d) * inv,
        }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual {
            v: -self.v,
            d: -self.d,
        }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }
    #[inline]
    fn primal(self) -> f64 {
        self.v.primal()
    }
    #[inline]
    fn sin(self) -> Self {
        Dual {
            v: self.v.sin(),
            d: self.d * self.v.cos(),
        }
    }
    #[inline]
    fn cos(self) -> Self {
        Dual {
            v: self.v.cos(),
            d: -(self.d * self.v.sin()),
        }
    }
    #[inline]
    fn tan(self) -> Self {
        let t = self.v.tan();
        Dual {
            v: t,
            d: self.d * (T::from_f64(1.0) + t * t),
        }
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual {
            v: e,
            d: self.d * e,
        }
    }
    #[inline]
    fn ln(self) -> Self {
        Dual {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual {
            v: t,
            d: self.d * (T::from_f64(1.0) - t * t),
        }
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Dual {
            v: s,
            d: self.d / (T::from_f64(2.0) * s),
        }
    }
    #[inline]
    fn abs(self) -> Self {
        let sign = T::from_f64(if self.v.primal() < 0.0 { -1.0 } else { 1.0 });
        Dual {
            v: self.v.abs(),
            d: self.d * sign,
        }
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Dual::constant(T::from_f64(1.0));
        }
        Dual {
            v: self.v.powi(n),
            d: self.d * T::from_f64(n as f64) * self.v.powi(n - 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_derivative_of_product() {
        // d/dx [x * sin(x)] = sin(x) + x cos(x)
        let x = 0.8;
        let d = Dual::seeded(x);
        let y = d * d.sin();
        assert!((y.v - x * x.sin()).abs() < 1e-15);
        assert!((y.d - (x.sin() + x * x.cos())).abs() < 1e-15);
    }

    #[test]
    fn nested_duals_give_second_derivative() {
        // f = exp(2x), f'' = 4 exp(2x)
        let x = 0.3;
        let inner = Dual::seeded(x);
        let outer: Dual<Dual<f64>> = Dual::seeded(inner);
        let y = (outer * Dual::from_f64(2.0)).exp();
        let expect = 4.0 * (2.0 * x).exp();
        assert!((y.d.d - expect).abs() < 1e-12);
    }
}
