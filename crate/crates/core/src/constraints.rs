//! Discretized-dynamics residuals with a diagonal linear error-correction term.
//!
//! For a prediction `F(z)` of the state one step after `z`,
//!
//! ```text
//! res_j = F_j(z) - z_j - dt * step_j(z) + dt * a_j * z_j
//! ```
//!
//! where `step` is `f(z)` (forward Euler) or the RK4 increment. The last term
//! is the correction `f^C(x) = -a ⊙ x` moved to the residual side; it is
//! dropped when the scheme does not include correction.

use std::fmt;
use std::str::FromStr;

use crate::dynamics::{rk4_increment, VectorField};
use crate::error::{check_len, Error, Result};

/// Diagonal coefficients `a` of the linear correction term.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCorrection {
    pub a: Vec<f64>,
    pub learnable: bool,
}

impl ErrorCorrection {
    /// Starts at zero, so the constraint is the plain scheme until trained.
    pub fn zeros(dim: usize, learnable: bool) -> Self {
        Self {
            a: vec![0.0; dim],
            learnable,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeVariant {
    None,
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintScheme {
    pub variant: SchemeVariant,
    pub include_correction: bool,
}

impl ConstraintScheme {
    pub const NONE: Self = Self {
        variant: SchemeVariant::None,
        include_correction: false,
    };
    pub const EULER: Self = Self {
        variant: SchemeVariant::Euler,
        include_correction: false,
    };
    pub const EULER_EC: Self = Self {
        variant: SchemeVariant::Euler,
        include_correction: true,
    };
    pub const RK4: Self = Self {
        variant: SchemeVariant::Rk4,
        include_correction: false,
    };
    pub const RK4_EC: Self = Self {
        variant: SchemeVariant::Rk4,
        include_correction: true,
    };

    pub fn is_active(&self) -> bool {
        self.variant != SchemeVariant::None
    }

    /// Whether `a` takes part in the residual (and so can be trained).
    pub fn uses_correction(&self) -> bool {
        self.is_active() && self.include_correction
    }
}

impl FromStr for ConstraintScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::NONE),
            "euler" => Ok(Self::EULER),
            "euler-ec" => Ok(Self::EULER_EC),
            "rk4" => Ok(Self::RK4),
            "rk4-ec" => Ok(Self::RK4_EC),
            other => Err(Error::InvalidArgument(format!(
                "unknown constraint scheme `{other}` (expected none, euler, euler-ec, rk4 or rk4-ec)"
            ))),
        }
    }
}

impl fmt::Display for ConstraintScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.variant {
            SchemeVariant::None => return f.write_str("none"),
            SchemeVariant::Euler => "euler",
            SchemeVariant::Rk4 => "rk4",
        };
        if self.include_correction {
            write!(f, "{base}-ec")
        } else {
            f.write_str(base)
        }
    }
}

/// The per-sample pieces of the residual that do not depend on `F(z)` or `a`:
/// `update = z + dt * step(z)` and `corr_coeff = dt * z` (zero without
/// correction), so `res = F - update + a ⊙ corr_coeff`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBase {
    pub update: Vec<f64>,
    pub corr_coeff: Vec<f64>,
}

impl ResidualBase {
    pub fn new<F: VectorField + ?Sized>(
        z: &[f64],
        dt: f64,
        scheme: ConstraintScheme,
        field: &F,
    ) -> Result<Self> {
        check_len("constraint state", field.dim(), z.len())?;
        let inc = match scheme.variant {
            SchemeVariant::None => {
                return Err(Error::Misuse(
                    "residual requested with constraint scheme `none`".into(),
                ))
            }
            SchemeVariant::Euler => field.eval(z),
            SchemeVariant::Rk4 => rk4_increment(field, z, dt),
        };
        let update = z.iter().zip(&inc).map(|(zj, k)| zj + dt * k).collect();
        let corr_coeff = if scheme.include_correction {
            z.iter().map(|zj| dt * zj).collect()
        } else {
            vec![0.0; z.len()]
        };
        Ok(Self { update, corr_coeff })
    }

    pub fn residual(&self, fz: &[f64], a: &[f64]) -> Vec<f64> {
        (0..fz.len())
            .map(|j| fz[j] - self.update[j] + a[j] * self.corr_coeff[j])
            .collect()
    }
}

pub fn residual<F: VectorField + ?Sized>(
    z: &[f64],
    fz: &[f64],
    ec: &ErrorCorrection,
    dt: f64,
    scheme: ConstraintScheme,
    field: &F,
) -> Result<Vec<f64>> {
    check_len("prediction", z.len(), fz.len())?;
    check_len("correction coefficients", z.len(), ec.dim())?;
    let base = ResidualBase::new(z, dt, scheme, field)?;
    Ok(base.residual(fz, &ec.a))
}

/// Diagonals of `d res / d F` and `d res / d a` (off-diagonals are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualJacobians {
    pub d_output: Vec<f64>,
    pub d_correction: Vec<f64>,
}

pub fn residual_grads<F: VectorField + ?Sized>(
    z: &[f64],
    fz: &[f64],
    ec: &ErrorCorrection,
    dt: f64,
    scheme: ConstraintScheme,
    field: &F,
) -> Result<ResidualJacobians> {
    check_len("prediction", z.len(), fz.len())?;
    check_len("correction coefficients", z.len(), ec.dim())?;
    let base = ResidualBase::new(z, dt, scheme, field)?;
    Ok(ResidualJacobians {
        d_output: vec![1.0; z.len()],
        d_correction: base.corr_coeff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{euler_step, LinearField, LorenzField};
    use crate::oracles::fd_jacobian;
    use proptest::prelude::*;

    #[test]
    fn euler_update_has_zero_residual() {
        let f = LorenzField::default();
        let z = [1.3, -2.2, 20.5];
        let fz = euler_step(&f, &z, 0.015);
        let ec = ErrorCorrection::zeros(3, true);
        assert_eq!(residual(&z, &fz, &ec, 0.015, ConstraintScheme::EULER_EC, &f).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn lorenz_hand_example() {
        let f = LorenzField::default();
        let ec = ErrorCorrection {
            a: vec![1.0; 3],
            learnable: true,
        };
        let r = residual(
            &[0.0, 1.0, 0.0],
            &[0.15, 0.985, 0.0],
            &ec,
            0.015,
            ConstraintScheme::EULER_EC,
            &f,
        )
        .unwrap();
        let expected = [0.0, 0.015, 0.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{r:?}");
        }
    }

    #[test]
    fn corrected_update_has_zero_residual() {
        let f = LorenzField::default();
        let z = [3.0, -4.0, 15.0];
        let dt = 0.015;
        let ec = ErrorCorrection {
            a: vec![0.7, -2.0, 5.5],
            learnable: true,
        };
        let fx = f.eval(&z);
        let fz: Vec<f64> = (0..3).map(|j| z[j] + dt * fx[j] - dt * ec.a[j] * z[j]).collect();
        for r in residual(&z, &fz, &ec, dt, ConstraintScheme::EULER_EC, &f).unwrap() {
            assert!(r.abs() < 1e-14);
        }
    }

    #[test]
    fn scheme_none_is_misuse() {
        let f = LorenzField::default();
        let ec = ErrorCorrection::zeros(3, false);
        let err = residual(&[1.0; 3], &[1.0; 3], &ec, 0.1, ConstraintScheme::NONE, &f).unwrap_err();
        assert!(matches!(err, Error::Misuse(_)));
    }

    #[test]
    fn correction_off_is_plain_defect() {
        let f = LorenzField::default();
        let z = [1.0, 2.0, 3.0];
        let fz = [1.5, 1.0, 2.0];
        let ec = ErrorCorrection {
            a: vec![9.0; 3],
            learnable: false,
        };
        let r = residual(&z, &fz, &ec, 0.01, ConstraintScheme::EULER, &f).unwrap();
        let e = euler_step(&f, &z, 0.01);
        for j in 0..3 {
            assert_eq!(r[j], fz[j] - e[j]);
        }
    }

    #[test]
    fn rk4_variant_uses_rk4_update() {
        let f = LinearField::diagonal(&[1.0]);
        let ec = ErrorCorrection::zeros(1, false);
        let fz = crate::dynamics::rk4_step(&f, &[1.0], 0.1);
        let r = residual(&[1.0], &fz, &ec, 0.1, ConstraintScheme::RK4, &f).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn jacobian_examples() {
        let f = LorenzField::default();
        let ec = ErrorCorrection::zeros(3, true);
        let j = residual_grads(&[0.0, 1.0, 0.0], &[0.0; 3], &ec, 0.015, ConstraintScheme::EULER_EC, &f)
            .unwrap();
        assert_eq!(j.d_output, vec![1.0; 3]);
        assert_eq!(j.d_correction, vec![0.0, 0.015, 0.0]);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in ["none", "euler", "euler-ec", "rk4", "rk4-ec"] {
            assert_eq!(s.parse::<ConstraintScheme>().unwrap().to_string(), s);
        }
        assert!("midpoint".parse::<ConstraintScheme>().is_err());
    }

    proptest! {
        #[test]
        fn jacobians_match_finite_differences(
            z in prop::array::uniform3(-20.0f64..20.0),
            fz in prop::array::uniform3(-20.0f64..20.0),
            a in prop::array::uniform3(-3.0f64..3.0),
            rk in any::<bool>(),
        ) {
            let f = LorenzField::default();
            let dt = 0.015;
            let scheme = if rk { ConstraintScheme::RK4_EC } else { ConstraintScheme::EULER_EC };
            let ec = ErrorCorrection { a: a.to_vec(), learnable: true };
            let jac = residual_grads(&z, &fz, &ec, dt, scheme, &f).unwrap();

            let d_f = fd_jacobian(|p| residual(&z, p, &ec, dt, scheme, &f).unwrap(), &fz, 1e-5);
            let d_a = fd_jacobian(
                |p| residual(&z, &fz, &ErrorCorrection { a: p.to_vec(), learnable: true }, dt, scheme, &f).unwrap(),
                &a,
                1e-5,
            );
            for r in 0..3 {
                for c in 0..3 {
                    let (ef, ea) = if r == c { (jac.d_output[r], jac.d_correction[r]) } else { (0.0, 0.0) };
                    prop_assert!((d_f[r][c] - ef).abs() <= 1e-8 * ef.abs().max(1.0));
                    prop_assert!((d_a[r][c] - ea).abs() <= 1e-8 * ea.abs().max(1.0));
                }
            }
        }

        #[test]
        fn residual_is_affine_in_prediction_and_correction(
            z in prop::array::uniform3(-20.0f64..20.0),
            f1 in prop::array::uniform3(-20.0f64..20.0),
            f2 in prop::array::uniform3(-20.0f64..20.0),
            a1 in prop::array::uniform3(-3.0f64..3.0),
            a2 in prop::array::uniform3(-3.0f64..3.0),
            t in 0.0f64..1.0,
        ) {
            let f = LorenzField::default();
            let s = ConstraintScheme::EULER_EC;
            let mix = |u: &[f64; 3], v: &[f64; 3]| -> Vec<f64> { (0..3).map(|j| t * u[j] + (1.0 - t) * v[j]).collect() };
            let ec = |a: Vec<f64>| ErrorCorrection { a, learnable: true };
            let r1 = residual(&z, &f1, &ec(a1.to_vec()), 0.015, s, &f).unwrap();
            let r2 = residual(&z, &f2, &ec(a2.to_vec()), 0.015, s, &f).unwrap();
            let rm = residual(&z, &mix(&f1, &f2), &ec(mix(&a1, &a2)), 0.015, s, &f).unwrap();
            for j in 0..3 {
                let lin = t * r1[j] + (1.0 - t) * r2[j];
                prop_assert!((rm[j] - lin).abs() < 1e-12 * (1.0 + lin.abs()) * 100.0);
            }
        }
    }
}
