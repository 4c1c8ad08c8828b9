//! Mass-action reaction mechanisms.
//!
//! A [`Mechanism`] is a list of named species plus irreversible mass-action
//! reactions of total order one or two. It is the single source of the
//! kinetic right-hand side `dy/dt = f(y)`, its analytic Jacobian and the
//! production/consumption split used by the quasi-steady-state closure.

mod builtin;
mod parse;

use ndarray::Array2;
use thiserror::Error;

pub use builtin::{builtin, builtin_pollu, builtin_rober};
pub use parse::parse_mechanism;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown species {name}")]
    UnknownSpecies { line: usize, name: String },
    #[error("line {line}: duplicate species {name}")]
    DuplicateSpecies { line: usize, name: String },
    #[error("line {line}: rate constant must be positive, got {value}")]
    NonPositiveRate { line: usize, value: f64 },
    #[error("line {line}: reactant order {order} is not supported (expected 1 or 2)")]
    UnsupportedOrder { line: usize, order: u32 },
    #[error("state has {found} components but the mechanism has {expected} species")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid mechanism: {0}")]
    Invalid(String),
    #[error("unknown builtin mechanism `{0}`")]
    UnknownBuiltin(String),
}

/// Stoichiometric terms as `(species index, coefficient)`, one entry per species.
pub type Stoichiometry = Vec<(usize, u32)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    reactants: Stoichiometry,
    products: Stoichiometry,
    rate_constant: f64,
}

impl Reaction {
    pub fn new(
        reactants: Stoichiometry,
        products: Stoichiometry,
        rate_constant: f64,
    ) -> Result<Self, MechanismError> {
        if !(rate_constant > 0.0) || !rate_constant.is_finite() {
            return Err(MechanismError::NonPositiveRate {
                line: 0,
                value: rate_constant,
            });
        }
        let order: u32 = reactants.iter().map(|&(_, s)| s).sum();
        if !(1..=2).contains(&order) {
            return Err(MechanismError::UnsupportedOrder { line: 0, order });
        }
        if reactants.iter().chain(&products).any(|&(_, s)| s == 0) {
            return Err(MechanismError::Invalid(
                "stoichiometric coefficients must be positive".into(),
            ));
        }
        Ok(Self {
            reactants,
            products,
            rate_constant,
        })
    }

    pub fn reactants(&self) -> &[(usize, u32)] {
        &self.reactants
    }

    pub fn products(&self) -> &[(usize, u32)] {
        &self.products
    }

    pub fn rate_constant(&self) -> f64 {
        self.rate_constant
    }

    pub fn order(&self) -> u32 {
        self.reactants.iter().map(|&(_, s)| s).sum()
    }

    /// Reaction rate `k * prod_j y_j^nu_j`.
    #[inline]
    pub fn rate(&self, y: &[f64]) -> f64 {
        self.reactants
            .iter()
            .fold(self.rate_constant, |acc, &(j, s)| acc * y[j].powi(s as i32))
    }

    /// Partial derivative of [`Reaction::rate`] with respect to `y[j]`.
    fn rate_partial(&self, y: &[f64], j: usize) -> f64 {
        let mut partial = self.rate_constant;
        let mut found = false;
        for &(l, s) in &self.reactants {
            if l == j {
                found = true;
                partial *= s as f64 * y[l].powi(s as i32 - 1);
            } else {
                partial *= y[l].powi(s as i32);
            }
        }
        if found {
            partial
        } else {
            0.0
        }
    }
}

/// Time and concentrations at one point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub y: Vec<f64>,
}

impl StateVector {
    pub fn new(t: f64, y: Vec<f64>) -> Self {
        Self { t, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    initial: Vec<f64>,
    t_span: (f64, f64),
}

impl Mechanism {
    pub fn new(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        initial: Vec<f64>,
        t_span: (f64, f64),
    ) -> Result<Self, MechanismError> {
        for (i, name) in species.iter().enumerate() {
            if species[..i].contains(name) {
                return Err(MechanismError::DuplicateSpecies {
                    line: 0,
                    name: name.clone(),
                });
            }
        }
        let n = species.len();
        for r in &reactions {
            if let Some(&(j, _)) = r.reactants.iter().chain(&r.products).find(|(j, _)| *j >= n) {
                return Err(MechanismError::Invalid(format!(
                    "reaction references species index {j} but only {n} species exist"
                )));
            }
        }
        if initial.len() != n {
            return Err(MechanismError::DimensionMismatch {
                expected: n,
                found: initial.len(),
            });
        }
        if initial.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(MechanismError::Invalid(
                "initial concentrations must be finite and non-negative".into(),
            ));
        }
        if !(t_span.0 < t_span.1) || !t_span.0.is_finite() || !t_span.1.is_finite() {
            return Err(MechanismError::Invalid(format!(
                "time span start {} must be below end {}",
                t_span.0, t_span.1
            )));
        }
        Ok(Self {
            species,
            reactions,
            initial,
            t_span,
        })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn initial_concentrations(&self) -> &[f64] {
        &self.initial
    }

    pub fn t_span(&self) -> (f64, f64) {
        self.t_span
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    fn check_dim(&self, y: &[f64]) -> Result<(), MechanismError> {
        if y.len() != self.species.len() {
            return Err(MechanismError::DimensionMismatch {
                expected: self.species.len(),
                found: y.len(),
            });
        }
        Ok(())
    }

    /// Production and consumption rates `(omega_plus, omega_minus)` per species.
    pub fn production_consumption_split(
        &self,
        y: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), MechanismError> {
        self.check_dim(y)?;
        let n = self.n_species();
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        self.accumulate_split(y, &mut plus, &mut minus);
        Ok((plus, minus))
    }

    fn accumulate_split(&self, y: &[f64], plus: &mut [f64], minus: &mut [f64]) {
        for r in &self.reactions {
            let w = r.rate(y);
            for &(j, s) in &r.products {
                plus[j] += s as f64 * w;
            }
            for &(j, s) in &r.reactants {
                minus[j] += s as f64 * w;
            }
        }
    }

    /// Mass-action right-hand side, defined as `omega_plus - omega_minus`.
    pub fn rhs(&self, y: &[f64]) -> Result<Vec<f64>, MechanismError> {
        let mut out = vec![0.0; self.n_species()];
        self.rhs_into(y, &mut out)?;
        Ok(out)
    }

    pub fn rhs_into(&self, y: &[f64], out: &mut [f64]) -> Result<(), MechanismError> {
        self.check_dim(y)?;
        self.check_dim(out)?;
        let n = self.n_species();
        let mut minus = vec![0.0; n];
        out.iter_mut().for_each(|v| *v = 0.0);
        self.accumulate_split(y, out, &mut minus);
        for (o, m) in out.iter_mut().zip(&minus) {
            *o -= m;
        }
        Ok(())
    }

    /// Right-hand side evaluated at a [`StateVector`].
    pub fn mass_action_rhs(&self, s: &StateVector) -> Result<Vec<f64>, MechanismError> {
        self.rhs(&s.y)
    }

    /// Analytic Jacobian `J[i][j] = d f_i / d y_j`.
    pub fn jacobian(&self, y: &[f64]) -> Result<Array2<f64>, MechanismError> {
        let n = self.n_species();
        let mut jac = Array2::zeros((n, n));
        self.jacobian_into(y, jac.as_slice_mut().expect("standard layout"))?;
        Ok(jac)
    }

    /// Writes the Jacobian row-major into `out` (length `n * n`).
    pub fn jacobian_into(&self, y: &[f64], out: &mut [f64]) -> Result<(), MechanismError> {
        self.check_dim(y)?;
        let n = self.n_species();
        if out.len() != n * n {
            return Err(MechanismError::DimensionMismatch {
                expected: n * n,
                found: out.len(),
            });
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in &self.reactions {
            for &(j, _) in &r.reactants {
                let dw = r.rate_partial(y, j);
                if dw == 0.0 {
                    continue;
                }
                for &(i, s) in &r.products {
                    out[i * n + j] += s as f64 * dw;
                }
                for &(i, s) in &r.reactants {
                    out[i * n + j] -= s as f64 * dw;
                }
            }
        }
        Ok(())
    }

    pub fn mass_action_jacobian(&self, s: &StateVector) -> Result<Array2<f64>, MechanismError> {
        self.jacobian(&s.y)
    }

    /// Serializes to the line-oriented mechanism text format.
    pub fn to_text(&self) -> String {
        parse::serialize(self)
    }
}
