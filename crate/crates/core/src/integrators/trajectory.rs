//! Trajectory CSV: header `t,<names...>`, one row per output time at 17
//! significant digits, followed by `# key=value` step statistics.

use std::io::{BufRead, Write};

use ndarray::Array2;
use thiserror::Error;

use super::{SolutionTrajectory, StepStats};

#[derive(Debug, Error)]
pub enum TrajectoryCsvError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn write_trajectory_csv<W: Write>(traj: &SolutionTrajectory, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,{}", traj.names.join(","))?;
    for (r, t) in traj.times.iter().enumerate() {
        write!(w, "{t:.16e}")?;
        for v in traj.states.row(r) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    let s = traj.stats;
    writeln!(w, "# accepted_steps={}", s.accepted_steps)?;
    writeln!(w, "# rejected_steps={}", s.rejected_steps)?;
    writeln!(w, "# rhs_evaluations={}", s.rhs_evaluations)?;
    writeln!(w, "# jacobian_evaluations={}", s.jacobian_evaluations)?;
    writeln!(w, "# newton_iterations={}", s.newton_iterations)?;
    Ok(())
}

pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<SolutionTrajectory, TrajectoryCsvError> {
    let mut names: Option<Vec<String>> = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut stats = StepStats::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let malformed = |message: String| TrajectoryCsvError::Malformed { line: line_no, message };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = comment.trim().split_once('=') {
                let v: usize = v.trim().parse().unwrap_or(0);
                match k.trim() {
                    "accepted_steps" => stats.accepted_steps = v,
                    "rejected_steps" => stats.rejected_steps = v,
                    "rhs_evaluations" => stats.rhs_evaluations = v,
                    "jacobian_evaluations" => stats.jacobian_evaluations = v,
                    "newton_iterations" => stats.newton_iterations = v,
                    _ => {}
                }
            }
            continue;
        }
        match &names {
            None => {
                let mut cols = trimmed.split(',').map(|s| s.trim().to_string());
                if cols.next().as_deref() != Some("t") {
                    return Err(malformed("header must start with `t`".into()));
                }
                names = Some(cols.collect());
            }
            Some(n) => {
                let row: Vec<f64> = trimmed
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| malformed(e.to_string()))?;
                if row.len() != n.len() + 1 {
                    return Err(malformed(format!("expected {} columns, found {}", n.len() + 1, row.len())));
                }
                times.push(row[0]);
                values.extend_from_slice(&row[1..]);
            }
        }
    }
    let names = names.ok_or(TrajectoryCsvError::Malformed {
        line: 0,
        message: "missing header".into(),
    })?;
    let states = Array2::from_shape_vec((times.len(), names.len()), values)
        .expect("row lengths checked while parsing");
    Ok(SolutionTrajectory { names, times, states, stats })
}
