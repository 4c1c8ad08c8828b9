//! Forward-mode dual numbers `value + tangent * eps`, `eps^2 = 0`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{gelu_derivatives, DomainError};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub value: f64,
    pub tangent: f64,
}

impl Dual {
    pub const fn new(value: f64, tangent: f64) -> Self {
        Self { value, tangent }
    }

    /// A quantity that does not depend on the differentiation variable.
    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// The differentiation variable itself.
    pub const fn variable(value: f64) -> Self {
        Self::new(value, 1.0)
    }

    fn chain(self, value: f64, derivative: f64) -> Self {
        Self::new(value, derivative * self.tangent)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn ln(self) -> Result<Self, DomainError> {
        if !(self.value > 0.0) {
            return Err(DomainError::new("ln", self.value));
        }
        Ok(self.chain(self.value.ln(), 1.0 / self.value))
    }

    pub fn sqrt(self) -> Result<Self, DomainError> {
        if !(self.value > 0.0) {
            return Err(DomainError::new("sqrt", self.value));
        }
        let s = self.value.sqrt();
        Ok(self.chain(s, 0.5 / s))
    }

    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.chain(t, 1.0 - t * t)
    }

    pub fn gelu(self) -> Self {
        let (g, d1, _) = gelu_derivatives(self.value);
        self.chain(g, d1)
    }

    /// `|x|` with derivative `sign(x)`, taking `+1` at zero.
    pub fn abs(self) -> Self {
        let s = if self.value < 0.0 { -1.0 } else { 1.0 };
        self.chain(self.value.abs(), s)
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        self.chain(self.value.powi(n), n as f64 * self.value.powi(n - 1))
    }
}

impl From<f64> for Dual {
    fn from(v: f64) -> Self {
        Self::constant(v)
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.value + o.value, self.tangent + o.tangent)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.value - o.value, self.tangent - o.tangent)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.value * o.value, self.tangent * o.value + self.value * o.tangent)
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let v = self.value / o.value;
        Self::new(v, (self.tangent - v * o.tangent) / o.value)
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.value, -self.tangent)
    }
}

impl Add<f64> for Dual {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Self::new(self.value + o, self.tangent)
    }
}

impl Mul<f64> for Dual {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        Self::new(self.value * o, self.tangent * o)
    }
}

/// Numbers a network forward pass can run on: plain `f64` or [`Dual`].
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> + Add<f64, Output = Self> + Mul<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn gelu(self) -> Self;
    fn ln(self) -> Result<Self, DomainError>;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }

    fn value(self) -> f64 {
        self
    }

    fn gelu(self) -> Self {
        gelu_derivatives(self).0
    }

    fn ln(self) -> Result<Self, DomainError> {
        if !(self > 0.0) {
            return Err(DomainError::new("ln", self));
        }
        Ok(f64::ln(self))
    }
}

impl Scalar for Dual {
    fn constant(v: f64) -> Self {
        Dual::constant(v)
    }

    fn value(self) -> f64 {
        self.value
    }

    fn gelu(self) -> Self {
        Dual::gelu(self)
    }

    fn ln(self) -> Result<Self, DomainError> {
        Dual::ln(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spec_examples() {
        let t = Dual::variable(3.0);
        assert_eq!(t * t, Dual::new(9.0, 6.0));
        assert_eq!(Dual::constant(5.0).tangent, 0.0);
        assert_eq!(Dual::variable(4.0).sqrt().unwrap(), Dual::new(2.0, 0.25));
    }

    #[test]
    fn domain_errors() {
        assert!(Dual::variable(0.0).ln().is_err());
        assert!(Dual::variable(-1.0).sqrt().is_err());
        assert!(Scalar::ln(-2.0f64).is_err());
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn kernels_match_finite_differences(x in 0.1f64..5.0, y in -3.0f64..3.0) {
            let check = |got: f64, want: f64| (got - want).abs() <= 1e-6 * want.abs().max(1.0);
            let d = Dual::variable(x);
            prop_assert!(check(d.exp().tangent, fd(f64::exp, x)));
            prop_assert!(check(d.ln().unwrap().tangent, fd(f64::ln, x)));
            prop_assert!(check(d.sqrt().unwrap().tangent, fd(f64::sqrt, x)));
            prop_assert!(check(Dual::variable(y).tanh().tangent, fd(f64::tanh, y)));
            prop_assert!(check(Dual::variable(y).gelu().tangent, fd(|v| gelu_derivatives(v).0, y)));
            prop_assert!(check((d / (d * d + 1.0)).tangent, fd(|v| v / (v * v + 1.0), x)));
            prop_assert!(check(d.powi(3).tangent, fd(|v| v.powi(3), x)));
            prop_assert!(check(Dual::variable(y).abs().tangent, fd(f64::abs, y)) || y.abs() < 1e-5);
        }
    }
}
