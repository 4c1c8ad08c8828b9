//! Line-oriented mechanism text format.
//!
//! ```text
//! # comment
//! SPECIES: A B C
//! INIT: 1 0 0
//! TSPAN: 0 1e5
//! A -> B : 0.04
//! 2 B -> B + C : 3e7
//! ```
//!
//! `INIT` defaults to all zeros and `TSPAN` to `0 1` when omitted.

use super::{Mechanism, MechanismError, Reaction, Stoichiometry};

pub fn parse_mechanism(source: &str) -> Result<Mechanism, MechanismError> {
    let mut species: Option<Vec<String>> = None;
    let mut initial: Option<Vec<f64>> = None;
    let mut t_span: Option<(f64, f64)> = None;
    let mut reactions = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: String| MechanismError::Syntax {
            line: line_no,
            message,
        };

        if let Some(rest) = line.strip_prefix("SPECIES:") {
            if species.is_some() {
                return Err(syntax("SPECIES declared twice".into()));
            }
            let mut names: Vec<String> = Vec::new();
            for name in rest.split_whitespace() {
                if !is_valid_name(name) {
                    return Err(syntax(format!("invalid species name `{name}`")));
                }
                if names.iter().any(|n| n == name) {
                    return Err(MechanismError::DuplicateSpecies {
                        line: line_no,
                        name: name.to_string(),
                    });
                }
                names.push(name.to_string());
            }
            species = Some(names);
            continue;
        }

        let Some(names) = species.as_ref() else {
            return Err(syntax("expected `SPECIES:` as the first directive".into()));
        };

        if let Some(rest) = line.strip_prefix("INIT:") {
            if initial.is_some() || !reactions.is_empty() {
                return Err(syntax("INIT must follow SPECIES and precede reactions".into()));
            }
            let values = parse_reals(rest).map_err(syntax)?;
            if values.len() != names.len() {
                return Err(syntax(format!(
                    "INIT has {} values for {} species",
                    values.len(),
                    names.len()
                )));
            }
            if values.iter().any(|&v| v < 0.0) {
                return Err(syntax("initial concentrations must be non-negative".into()));
            }
            initial = Some(values);
            continue;
        }

        if let Some(rest) = line.strip_prefix("TSPAN:") {
            if t_span.is_some() || !reactions.is_empty() {
                return Err(syntax("TSPAN must follow SPECIES and precede reactions".into()));
            }
            let values = parse_reals(rest).map_err(syntax)?;
            match values[..] {
                [a, b] if a < b => t_span = Some((a, b)),
                [_, _] => return Err(syntax("TSPAN start must be below its end".into())),
                _ => return Err(syntax("TSPAN expects two values".into())),
            }
            continue;
        }

        reactions.push(parse_reaction(line, line_no, names)?);
    }

    let species = species.ok_or(MechanismError::Syntax {
        line: 0,
        message: "missing `SPECIES:` line".into(),
    })?;
    let n = species.len();
    Mechanism::new(
        species,
        reactions,
        initial.unwrap_or_else(|| vec![0.0; n]),
        t_span.unwrap_or((0.0, 1.0)),
    )
}

fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || "_()'[]".contains(c))
}

fn parse_reals(text: &str) -> Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid number `{tok}`"))
        })
        .collect()
}

fn parse_reaction(line: &str, line_no: usize, names: &[String]) -> Result<Reaction, MechanismError> {
    let syntax = |message: String| MechanismError::Syntax {
        line: line_no,
        message,
    };
    let (equation, rate) = line
        .rsplit_once(':')
        .ok_or_else(|| syntax("expected `<reactants> -> <products> : <rate>`".into()))?;
    let (lhs, rhs) = equation
        .split_once("->")
        .ok_or_else(|| syntax("missing `->` in reaction".into()))?;
    let rate_constant: f64 = rate
        .trim()
        .parse()
        .map_err(|_| syntax(format!("invalid rate constant `{}`", rate.trim())))?;
    if !(rate_constant > 0.0) || !rate_constant.is_finite() {
        return Err(MechanismError::NonPositiveRate {
            line: line_no,
            value: rate_constant,
        });
    }
    let reactants = parse_side(lhs, line_no, names)?;
    if reactants.is_empty() {
        return Err(syntax("reaction has no reactants".into()));
    }
    let products = parse_side(rhs, line_no, names)?;
    Reaction::new(reactants, products, rate_constant).map_err(|e| match e {
        MechanismError::UnsupportedOrder { order, .. } => MechanismError::UnsupportedOrder {
            line: line_no,
            order,
        },
        other => other,
    })
}

fn parse_side(text: &str, line_no: usize, names: &[String]) -> Result<Stoichiometry, MechanismError> {
    let mut terms: Stoichiometry = Vec::new();
    let text = text.trim();
    if text.is_empty() {
        return Ok(terms);
    }
    for term in text.split('+') {
        let term = term.trim();
        let split = term
            .find(|c: char| !c.is_ascii_digit())
            .unwrap_or(term.len());
        let (coeff, name) = term.split_at(split);
        let name = name.trim();
        let coeff: u32 = if coeff.is_empty() {
            1
        } else {
            coeff.parse().map_err(|_| MechanismError::Syntax {
                line: line_no,
                message: format!("invalid stoichiometric coefficient in `{term}`"),
            })?
        };
        if name.is_empty() || coeff == 0 {
            return Err(MechanismError::Syntax {
                line: line_no,
                message: format!("malformed term `{term}`"),
            });
        }
        let index = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| MechanismError::UnknownSpecies {
                line: line_no,
                name: name.to_string(),
            })?;
        match terms.iter_mut().find(|(j, _)| *j == index) {
            Some((_, s)) => *s += coeff,
            None => terms.push((index, coeff)),
        }
    }
    Ok(terms)
}

fn format_side(terms: &[(usize, u32)], names: &[String]) -> String {
    terms
        .iter()
        .map(|&(j, s)| {
            if s == 1 {
                names[j].clone()
            } else {
                format!("{s} {}", names[j])
            }
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

pub(super) fn serialize(m: &Mechanism) -> String {
    let names = m.species();
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let mut out = format!("SPECIES: {}\n", names.join(" "));
    out.push_str(&format!("INIT: {}\n", join(m.initial_concentrations())));
    let (t0, t1) = m.t_span();
    out.push_str(&format!("TSPAN: {t0:e} {t1:e}\n"));
    for r in m.reactions() {
        out.push_str(&format!(
            "{} -> {} : {:e}\n",
            format_side(r.reactants(), names),
            format_side(r.products(), names),
            r.rate_constant()
        ));
    }
    out
}
