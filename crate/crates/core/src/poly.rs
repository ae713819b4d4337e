//! Sparse multivariate polynomials with symbolic differentiation.

use std::fmt;

/// A polynomial in `V` variables, stored as a list of monomials.
#[derive(Clone, PartialEq, Default)]
pub struct Poly<const V: usize> {
    terms: Vec<(f64, [u8; V])>,
}

impl<const V: usize> Poly<V> {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(c, [0; V]);
        p
    }

    /// Adds `coef * prod(vars[v]^exps[v])`, merging with an existing monomial.
    pub fn add_term(&mut self, coef: f64, exps: [u8; V]) {
        if coef == 0.0 {
            return;
        }
        if let Some(t) = self.terms.iter_mut().find(|t| t.1 == exps) {
            t.0 += coef;
        } else {
            self.terms.push((coef, exps));
        }
        self.terms.retain(|t| t.0 != 0.0);
    }

    pub fn with_term(mut self, coef: f64, exps: [u8; V]) -> Self {
        self.add_term(coef, exps);
        self
    }

    pub fn terms(&self) -> &[(f64, [u8; V])] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, vars: [f64; V]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut term = *c;
            for v in 0..V {
                if e[v] > 0 {
                    term *= vars[v].powi(e[v] as i32);
                }
            }
            acc += term;
        }
        acc
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero();
        for (c, e) in &self.terms {
            if e[var] > 0 {
                let mut e2 = *e;
                e2[var] -= 1;
                out.add_term(c * e[var] as f64, e2);
            }
        }
        out
    }

    /// Highest power of `var` appearing in any monomial.
    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms.iter().map(|t| t.1[var] as u32).max().unwrap_or(0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = Self::zero();
        for (k, e) in &self.terms {
            out.add_term(k * c, *e);
        }
        out
    }
}

impl<const V: usize> fmt::Debug for Poly<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (c, e)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (v, p) in e.iter().enumerate() {
                if *p > 0 {
                    write!(f, "*v{v}^{p}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eval_and_derive() {
        // 3 + 2 x y^2
        let p = Poly::<2>::constant(3.0).with_term(2.0, [1, 2]);
        assert_eq!(p.eval([2.0, 3.0]), 39.0);
        let dy = p.derivative(1);
        assert_eq!(dy.eval([2.0, 3.0]), 24.0);
        assert!(p.derivative(0).derivative(0).is_zero());
        assert_eq!(p.degree_in(1), 2);
    }

    #[test]
    fn merging_cancels() {
        let p = Poly::<1>::zero().with_term(1.0, [2]).with_term(-1.0, [2]);
        assert!(p.is_zero());
    }

    proptest! {
        #[test]
        fn derivative_matches_difference(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -1.5f64..1.5) {
            let p = Poly::<1>::constant(a).with_term(b, [3]).with_term(0.5, [1]);
            let h = 1e-5;
            let fd = (p.eval([x + h]) - p.eval([x - h])) / (2.0 * h);
            prop_assert!((fd - p.derivative(0).eval([x])).abs() < 1e-7);
        }
    }
}
