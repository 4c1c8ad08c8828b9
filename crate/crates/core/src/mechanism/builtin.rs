use super::{parse_mechanism, Mechanism, MechanismError};

const ROBER: &str = include_str!("../../data/rober.mech");
const POLLU: &str = include_str!("../../data/pollu.mech");

/// Robertson's three-species network on `t in [0, 1e5]`.
pub fn builtin_rober() -> Mechanism {
    parse_mechanism(ROBER).expect("embedded ROBER mechanism is valid")
}

/// The 20-species, 25-reaction POLLU atmospheric model on `t in [0, 60]`.
pub fn builtin_pollu() -> Mechanism {
    parse_mechanism(POLLU).expect("embedded POLLU mechanism is valid")
}

/// Looks up a built-in mechanism by name (`rober` or `pollu`).
pub fn builtin(name: &str) -> Result<Mechanism, MechanismError> {
    match name.to_ascii_lowercase().as_str() {
        "rober" => Ok(builtin_rober()),
        "pollu" => Ok(builtin_pollu()),
        _ => Err(MechanismError::UnknownBuiltin(name.to_string())),
    }
}
