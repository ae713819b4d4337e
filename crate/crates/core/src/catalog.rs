//! Benchmark problems.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::poly::Poly;
use crate::problem::{ControlBounds, PolyKernel, PolyReward, PolyTerminal, ProblemError, ProblemSpec};

pub type Params = BTreeMap<String, f64>;

pub const PROBLEMS: [&str; 4] = ["LQ1", "LQ2", "QUAD_TERM", "CUSTOM_POLY"];

/// Maps unicode and alternative spellings onto canonical parameter names.
pub fn canonical_key(key: &str) -> String {
    match key.trim() {
        "κ" => "kappa".into(),
        "σ₀" | "σ0" | "sigma_0" | "σ" => "sigma0".into(),
        "α" => "alpha".into(),
        other => other.to_string(),
    }
}

struct Reader<'a> {
    problem: &'a str,
    params: BTreeMap<String, f64>,
    used: Vec<String>,
}

impl<'a> Reader<'a> {
    fn new(problem: &'a str, params: &Params) -> Self {
        Self {
            problem,
            params: params.iter().map(|(k, v)| (canonical_key(k), *v)).collect(),
            used: Vec::new(),
        }
    }

    fn required(&mut self, name: &str) -> Result<f64, ProblemError> {
        self.optional(name).ok_or_else(|| ProblemError::MissingParameter {
            problem: self.problem.into(),
            name: name.into(),
        })
    }

    fn optional(&mut self, name: &str) -> Option<f64> {
        self.used.push(name.into());
        self.params.get(name).copied()
    }

    fn finish(self) -> Result<(), ProblemError> {
        for key in self.params.keys() {
            if !self.used.contains(key) {
                return Err(ProblemError::UnknownParameter {
                    problem: self.problem.into(),
                    name: key.clone(),
                });
            }
        }
        Ok(())
    }

    fn bounds(&mut self) -> Result<ControlBounds, ProblemError> {
        let d = ControlBounds::default();
        let min = self.optional("u_min").unwrap_or(d.min());
        let max = self.optional("u_max").unwrap_or(d.max());
        ControlBounds::new(min, max)
    }
}

fn finite(name: &str, v: f64) -> Result<f64, ProblemError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ProblemError::InvalidParameter {
            name: name.into(),
            reason: "must be finite".into(),
        })
    }
}

fn linear_problem(name: &str, alpha: f64, reader: &mut Reader<'_>) -> Result<ProblemSpec, ProblemError> {
    let a = finite("a", reader.required("a")?)?;
    let kappa = finite("kappa", reader.required("kappa")?)?;
    let sigma0 = finite("sigma0", reader.required("sigma0")?)?;
    let c = finite("c", reader.optional("c").unwrap_or(0.0))?;
    let bounds = reader.bounds()?;
    let b = Poly::zero().with_term(1.0, [0, 0, 0, 1]).with_term(alpha, [0, 0, 1, 0]);
    Ok(ProblemSpec {
        name: name.into(),
        x0: Arc::new(Poly::<1>::constant(c)),
        b: Arc::new(PolyKernel::new(b)),
        sigma: Arc::new(PolyKernel::new(Poly::constant(sigma0))),
        f: Arc::new(PolyReward::new(Poly::zero().with_term(-0.5 * kappa, [0, 0, 2]))),
        g: Arc::new(PolyTerminal::new(Poly::zero().with_term(a, [1]))),
        bounds,
        reward_scale: 1.0,
    })
}

fn parse_monomial<const V: usize>(key: &str, mono: &str, vars: [char; V]) -> Result<[u8; V], ProblemError> {
    let mut exps = [0u8; V];
    if mono == "1" {
        return Ok(exps);
    }
    if mono.is_empty() {
        return Err(ProblemError::InvalidParameter {
            name: key.into(),
            reason: "empty monomial; use `1` for the constant term".into(),
        });
    }
    for ch in mono.chars() {
        let Some(v) = vars.iter().position(|c| *c == ch) else {
            return Err(ProblemError::InvalidParameter {
                name: key.into(),
                reason: format!("variable `{ch}` not allowed; expected letters from {vars:?} or `1`"),
            });
        };
        if exps[v] >= 8 {
            return Err(ProblemError::InvalidParameter {
                name: key.into(),
                reason: "exponent above 8".into(),
            });
        }
        exps[v] += 1;
    }
    Ok(exps)
}

fn custom_poly(params: &Params) -> Result<ProblemSpec, ProblemError> {
    let mut b = Poly::<4>::zero();
    let mut sigma = Poly::<4>::zero();
    let mut f = Poly::<3>::zero();
    let mut g = Poly::<1>::zero();
    let mut x0 = Poly::<1>::zero();
    let mut min = ControlBounds::default().min();
    let mut max = ControlBounds::default().max();
    let mut any_kernel = false;
    for (raw, &v) in params {
        let key = canonical_key(raw);
        let v = finite(&key, v)?;
        match key.as_str() {
            "u_min" => min = v,
            "u_max" => max = v,
            _ => {
                let Some((target, mono)) = key.split_once('.') else {
                    return Err(ProblemError::UnknownParameter {
                        problem: "CUSTOM_POLY".into(),
                        name: key,
                    });
                };
                match target {
                    "b" => {
                        b.add_term(v, parse_monomial(&key, mono, ['t', 's', 'x', 'u'])?);
                        any_kernel = true;
                    }
                    "sigma" => {
                        sigma.add_term(v, parse_monomial(&key, mono, ['t', 's', 'x', 'u'])?);
                        any_kernel = true;
                    }
                    "f" => f.add_term(v, parse_monomial(&key, mono, ['t', 'x', 'u'])?),
                    "g" => g.add_term(v, parse_monomial(&key, mono, ['x'])?),
                    "x0" => x0.add_term(v, parse_monomial(&key, mono, ['t'])?),
                    _ => {
                        return Err(ProblemError::UnknownParameter {
                            problem: "CUSTOM_POLY".into(),
                            name: key,
                        })
                    }
                }
            }
        }
    }
    if !any_kernel {
        return Err(ProblemError::MissingParameter {
            problem: "CUSTOM_POLY".into(),
            name: "b.<monomial> or sigma.<monomial>".into(),
        });
    }
    Ok(ProblemSpec {
        name: "CUSTOM_POLY".into(),
        x0: Arc::new(x0),
        b: Arc::new(PolyKernel::new(b)),
        sigma: Arc::new(PolyKernel::new(sigma)),
        f: Arc::new(PolyReward::new(f)),
        g: Arc::new(PolyTerminal::new(g)),
        bounds: ControlBounds::new(min, max)?,
        reward_scale: 1.0,
    })
}

/// Builds a benchmark problem from its name and parameters.
///
/// * `LQ1`: `b = u`, `sigma = sigma0`, `f = -(kappa/2) u^2`, `g = a x`, `x0 = c`.
/// * `LQ2`: as `LQ1` with `b = alpha x + u`.
/// * `QUAD_TERM`: `b = u`, `sigma = sigma0`, `f = 0`, `g = x^2`, `x0 = c`.
/// * `CUSTOM_POLY`: monomial coefficients such as `b.tx = -0.3`, `sigma.1 = 0.25`,
///   `f.uu = -0.5`, `g.xx = -0.25`, `x0.t = 0.5` (letters repeat for powers).
///
/// Every problem accepts `u_min` and `u_max` (default `[-5, 5]`).
pub fn catalog_problem(name: &str, params: &Params) -> Result<ProblemSpec, ProblemError> {
    match name {
        "LQ1" => {
            let mut r = Reader::new(name, params);
            let spec = linear_problem(name, 0.0, &mut r)?;
            r.finish()?;
            Ok(spec)
        }
        "LQ2" => {
            let mut r = Reader::new(name, params);
            let alpha = finite("alpha", r.required("alpha")?)?;
            let spec = linear_problem(name, alpha, &mut r)?;
            r.finish()?;
            Ok(spec)
        }
        "QUAD_TERM" => {
            let mut r = Reader::new(name, params);
            let sigma0 = finite("sigma0", r.required("sigma0")?)?;
            let c = finite("c", r.optional("c").unwrap_or(0.0))?;
            let bounds = r.bounds()?;
            r.finish()?;
            Ok(ProblemSpec {
                name: name.into(),
                x0: Arc::new(Poly::<1>::constant(c)),
                b: Arc::new(PolyKernel::new(Poly::zero().with_term(1.0, [0, 0, 0, 1]))),
                sigma: Arc::new(PolyKernel::new(Poly::constant(sigma0))),
                f: Arc::new(PolyReward::new(Poly::zero())),
                g: Arc::new(PolyTerminal::new(Poly::zero().with_term(1.0, [2]))),
                bounds,
                reward_scale: 1.0,
            })
        }
        "CUSTOM_POLY" => custom_poly(params),
        other => Err(ProblemError::UnknownProblem(other.into())),
    }
}

/// A Volterra problem whose kernels depend on both time arguments, the
/// delayed state and the control, with a concave reward.
pub fn custom_poly_demo() -> Params {
    [
        ("b.u", 1.0),
        ("b.x", 0.4),
        ("b.tx", -0.3),
        ("b.sx", 0.3),
        ("b.tu", 0.2),
        ("b.su", -0.2),
        ("sigma.1", 0.25),
        ("sigma.x", 0.1),
        ("sigma.t", 0.15),
        ("sigma.s", -0.15),
        ("sigma.tx", 0.05),
        ("sigma.sx", -0.05),
        ("sigma.u", 0.1),
        ("f.uu", -0.5),
        ("f.xx", -0.2),
        ("f.tx", 0.1),
        ("g.x", 1.0),
        ("g.xx", -0.25),
        ("x0.1", 1.0),
        ("x0.t", 0.5),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Default parameters for each catalog problem.
pub fn default_params(name: &str) -> Params {
    let pairs: &[(&str, f64)] = match name {
        "LQ1" => &[("a", 1.0), ("kappa", 1.0), ("sigma0", 0.3), ("c", 0.0)],
        "LQ2" => &[("alpha", 0.5), ("a", 1.0), ("kappa", 1.0), ("sigma0", 0.3), ("c", 0.0)],
        "QUAD_TERM" => &[("sigma0", 1.0)],
        "CUSTOM_POLY" => return custom_poly_demo(),
        _ => &[],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> Params {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn lq1_structure() {
        let spec = catalog_problem("LQ1", &params(&[("a", 1.0), ("κ", 1.0), ("σ₀", 0.3), ("c", 0.0)])).unwrap();
        for &(t, s, x, u) in &[(0.5, 0.1, 0.3, -1.0), (1.0, 0.0, 2.0, 4.0)] {
            assert_eq!(spec.b.d_u(t, s, x, u), 1.0);
            assert_eq!(spec.b.d_x(t, s, x, u), 0.0);
        }
    }

    #[test]
    fn lq2_structure() {
        let spec = catalog_problem("LQ2", &default_params("LQ2")).unwrap();
        assert_eq!(spec.b.d_x(0.3, 0.1, 7.0, 1.0), 0.5);
    }

    #[test]
    fn missing_and_unknown() {
        let err = catalog_problem("LQ1", &params(&[("a", 1.0)])).unwrap_err();
        assert_eq!(
            err,
            ProblemError::MissingParameter {
                problem: "LQ1".into(),
                name: "kappa".into()
            }
        );
        assert!(matches!(catalog_problem("LQ9", &Params::new()), Err(ProblemError::UnknownProblem(_))));
        let mut p = default_params("LQ1");
        p.insert("alpha".into(), 1.0);
        assert!(matches!(catalog_problem("LQ1", &p), Err(ProblemError::UnknownParameter { .. })));
        assert!(catalog_problem("CUSTOM_POLY", &params(&[("b.q", 1.0)])).is_err());
        assert!(catalog_problem("CUSTOM_POLY", &params(&[("g.x", 1.0)])).is_err());
    }

    #[test]
    fn custom_poly_evaluates_monomials() {
        let spec = catalog_problem("CUSTOM_POLY", &custom_poly_demo()).unwrap();
        let (t, s, x, u) = (0.7, 0.2, 1.5, -0.4);
        let b = u + 0.4 * x - 0.3 * t * x + 0.3 * s * x + 0.2 * t * u - 0.2 * s * u;
        assert!((spec.b.value(t, s, x, u) - b).abs() < 1e-14);
        assert!((spec.sigma.d_tx(t, s, x, u) - 0.05).abs() < 1e-14);
        assert!((spec.b.d_tu(t, s, x, u) - 0.2).abs() < 1e-14);
        assert!((spec.g.d_x(x) - (1.0 - 0.5 * x)).abs() < 1e-14);
        assert_eq!(spec.x0.value(-0.5), 0.75);
        assert_eq!(spec.sigma.structure().t_degree, Some(1));
    }

    #[test]
    fn derivative_suite_for_every_catalog_problem() {
        for name in PROBLEMS {
            let spec = catalog_problem(name, &default_params(name)).unwrap();
            let worst = spec.check_derivatives(1.0, 100, 11).unwrap();
            assert!(worst <= 1e-5, "{name}: {worst}");
        }
    }
}
