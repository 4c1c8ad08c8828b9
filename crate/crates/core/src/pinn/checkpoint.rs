//! Plain-text network checkpoints.
//!
//! ```text
//! widths=1,128,128,128,2
//! activation=gelu
//! seed=0
//! transform=hard-ic
//! species=A,C
//! y0=1.0000000000000000e0,0.0000000000000000e0
//! scale=1.0000000000000000e0,1.0000000000000000e0
//! <one parameter per line, 17 significant digits>
//! ```

use std::io::{BufRead, Write};

use super::{MlpModel, OutputTransform, Pinn, PinnError};

fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(",")
}

pub fn write_checkpoint<W: Write>(pinn: &Pinn, mut out: W) -> Result<(), PinnError> {
    let widths: Vec<String> = pinn.model.widths().iter().map(|w| w.to_string()).collect();
    writeln!(out, "widths={}", widths.join(","))?;
    writeln!(out, "activation=gelu")?;
    writeln!(out, "seed={}", pinn.model.seed())?;
    writeln!(out, "transform={}", pinn.model.transform())?;
    writeln!(out, "species={}", pinn.species.join(","))?;
    writeln!(out, "y0={}", join_reals(&pinn.y0))?;
    writeln!(out, "scale={}", join_reals(&pinn.scale))?;
    for p in pinn.model.params() {
        writeln!(out, "{p:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Pinn, PinnError> {
    let err = |line: usize, message: String| PinnError::Checkpoint { line, message };
    let parse_reals = |line: usize, v: &str| -> Result<Vec<f64>, PinnError> {
        v.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| err(line, format!("bad number `{x}`: {e}"))))
            .collect()
    };
    let (mut widths, mut seed, mut transform, mut species, mut y0, mut scale) = (None, None, None, None, None, None);
    let mut params = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            if !params.is_empty() {
                return Err(err(lineno, "header line after parameters".into()));
            }
            let value = value.trim();
            match key.trim() {
                "widths" => {
                    let w = value
                        .split(',')
                        .map(|x| x.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| err(lineno, format!("bad widths: {e}")))?;
                    widths = Some(w);
                }
                "activation" if value == "gelu" => {}
                "activation" => return Err(err(lineno, format!("unsupported activation `{value}`"))),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| err(lineno, format!("bad seed: {e}")))?),
                "transform" => transform = Some(value.parse::<OutputTransform>().map_err(|e| err(lineno, e))?),
                "species" => species = Some(value.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>()),
                "y0" => y0 = Some(parse_reals(lineno, value)?),
                "scale" => scale = Some(parse_reals(lineno, value)?),
                other => return Err(err(lineno, format!("unknown header key `{other}`"))),
            }
        } else {
            params.push(line.parse::<f64>().map_err(|e| err(lineno, format!("bad parameter `{line}`: {e}")))?);
        }
    }
    let need = |what: &str| err(0, format!("missing `{what}` header"));
    let widths = widths.ok_or_else(|| need("widths"))?;
    let model = MlpModel::from_params(
        &widths,
        params,
        seed.ok_or_else(|| need("seed"))?,
        transform.ok_or_else(|| need("transform"))?,
    )
    .map_err(|e| err(0, e.to_string()))?;
    let n_out = model.output_width();
    let species = species.ok_or_else(|| need("species"))?;
    let y0 = y0.ok_or_else(|| need("y0"))?;
    let scale = scale.unwrap_or_else(|| vec![1.0; n_out]);
    Pinn::from_parts(model, species, y0, scale)
}
