//! First-order forward-mode dual numbers.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A value together with its derivative along one seeded direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    pub const fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }

    pub fn sin(self) -> Self {
        Self::new(self.re.sin(), self.eps * self.re.cos())
    }

    pub fn cos(self) -> Self {
        Self::new(self.re.cos(), -self.eps * self.re.sin())
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }

    /// Caller guarantees `re > 0`.
    pub fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }

    /// Caller guarantees `re > 0`.
    pub fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.eps / (2.0 * s))
    }

    pub fn tanh(self) -> Self {
        let th = self.re.tanh();
        Self::new(th, self.eps * (1.0 - th * th))
    }

    /// `self^k` for a constant exponent `k`.
    pub fn powf_const(self, k: f64) -> Self {
        if self.eps == 0.0 {
            return Self::constant(self.re.powf(k));
        }
        Self::new(self.re.powf(k), self.eps * k * self.re.powf(k - 1.0))
    }

    /// `self^other` with both sides varying. Caller guarantees `self.re > 0`.
    pub fn pow(self, other: Self) -> Self {
        let value = self.re.powf(other.re);
        let d = other.re * self.re.powf(other.re - 1.0) * self.eps + value * self.re.ln() * other.eps;
        Self::new(value, d)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, rhs: Dual) -> Dual {
        Dual::new(
            self.re / rhs.re,
            (self.eps * rhs.re - self.re * rhs.eps) / (rhs.re * rhs.re),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::variable(3.0);
        let y = x * x;
        assert_eq!(y, Dual::new(9.0, 6.0));
    }

    #[test]
    fn quotient_rule() {
        let x = Dual::variable(2.0);
        let y = Dual::constant(1.0) / x;
        assert_eq!(y.re, 0.5);
        assert_eq!(y.eps, -0.25);
    }

    #[test]
    fn general_power_matches_log_derivative() {
        let x = Dual::variable(2.0);
        let y = x.pow(x);
        // d/dx x^x = x^x (ln x + 1)
        assert!((y.eps - 4.0 * (2f64.ln() + 1.0)).abs() < 1e-12);
    }
}
