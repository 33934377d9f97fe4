//! TOML problem files.
//!
//! ```toml
//! [system]
//! n = 1
//! r = 1
//! dynamics = ["u1"]
//! time = { mode = "fixed", t0 = 0.0, t1 = 1.0 }
//!
//! [controls]
//! box = [[-1.0, 1.0]]   # or: samples = [[-1.0], [0.0], [1.0]]
//! grid = 5
//!
//! [endpoint]
//! F0 = "x1_1"
//! F = []
//! K = ["x0_1"]
//!
//! [candidate]
//! breakpoints = [0.0, 1.0]
//! values = [[-1.0]]
//! x0 = [0.0]
//! ```
//!
//! Without explicit `grid`/`states` in `[candidate]` the states are obtained
//! by integrating from `x0`.

use std::ops::Range;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr, ExprError};
use crate::problem::{box_samples, CandidateProcess, ControlProblem, EndpointData, PiecewiseControl, TimeMode};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    system: SystemRepr,
    controls: ControlsRepr,
    endpoint: EndpointRepr,
    candidate: CandidateRepr,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SystemRepr {
    n: usize,
    r: usize,
    dynamics: Vec<Spanned<String>>,
    time: TimeMode,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ControlsRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<usize>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct EndpointRepr {
    #[serde(rename = "F0")]
    f0: Spanned<String>,
    #[serde(rename = "F", default)]
    f: Vec<Spanned<String>>,
    #[serde(rename = "K", default)]
    k: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CandidateRepr {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
    x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: ControlProblem,
    pub candidate: CandidateProcess,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn expression(text: &str, field: String, src: &Spanned<String>) -> Result<Expr> {
    parse(src.get_ref()).map_err(|e| {
        let span: Range<usize> = src.span();
        let pos = match &e {
            ExprError::Syntax { pos, .. } | ExprError::UnknownFunction { pos, .. } => *pos,
            _ => 0,
        };
        // skip the opening quote
        let (line, column) = line_col(text, span.start + 1);
        Error::ProblemFile {
            line,
            column: column + pos,
            message: format!("in {field}: {e}"),
        }
    })
}

pub fn parse_problem(text: &str, steps_per_unit: usize) -> Result<ProblemFile> {
    let repr: FileRepr = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        Error::ProblemFile {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let dynamics = repr
        .system
        .dynamics
        .iter()
        .enumerate()
        .map(|(i, s)| expression(text, format!("system.dynamics[{i}]"), s))
        .collect::<Result<Vec<_>>>()?;
    let endpoint = EndpointData {
        f0: expression(text, "endpoint.F0".into(), &repr.endpoint.f0)?,
        f: repr
            .endpoint
            .f
            .iter()
            .enumerate()
            .map(|(i, s)| expression(text, format!("endpoint.F[{i}]"), s))
            .collect::<Result<_>>()?,
        k: repr
            .endpoint
            .k
            .iter()
            .enumerate()
            .map(|(i, s)| expression(text, format!("endpoint.K[{i}]"), s))
            .collect::<Result<_>>()?,
    };

    let controls = &repr.controls;
    let samples = match (&controls.samples, &controls.bounds) {
        (Some(s), None) => {
            if controls.grid.is_some() {
                return Err(Error::invalid("controls.grid", "only valid together with controls.box"));
            }
            s.iter().map(|v| DVector::from_column_slice(v)).collect()
        }
        (None, Some(b)) => {
            if b.len() != repr.system.r {
                return Err(Error::Dimension {
                    field: "controls.box".into(),
                    expected: repr.system.r,
                    found: b.len(),
                });
            }
            box_samples(b, controls.grid.unwrap_or(2))?
        }
        _ => return Err(Error::invalid("controls", "give exactly one of `samples` or `box`")),
    };

    let problem = ControlProblem::new(repr.system.n, repr.system.r, dynamics, samples, endpoint, repr.system.time)?;

    let c = &repr.candidate;
    for (i, v) in c.values.iter().enumerate() {
        if v.len() != problem.r() {
            return Err(Error::Dimension {
                field: format!("candidate.values[{i}]"),
                expected: problem.r(),
                found: v.len(),
            });
        }
    }
    if c.x0.len() != problem.n() {
        return Err(Error::Dimension {
            field: "candidate.x0".into(),
            expected: problem.n(),
            found: c.x0.len(),
        });
    }
    let control = PiecewiseControl::new(
        c.breakpoints.clone(),
        c.values.iter().map(|v| DVector::from_column_slice(v)).collect(),
    )?;
    let (t0, t1) = problem.time_mode().interval();
    if !problem.time_mode().is_free() && (control.t0() != t0 || control.t1() != t1) {
        return Err(Error::invalid(
            "candidate.breakpoints",
            format!("must span the fixed interval [{t0}, {t1}]"),
        ));
    }
    let x0 = DVector::from_column_slice(&c.x0);
    let candidate = match (&c.grid, &c.states) {
        (None, None) => CandidateProcess::simulate(&problem, control, x0, steps_per_unit)?,
        (Some(grid), Some(states)) => {
            let states: Vec<DVector<f64>> = states.iter().map(|s| DVector::from_column_slice(s)).collect();
            if states.first() != Some(&x0) {
                return Err(Error::invalid("candidate.states", "first state differs from x0"));
            }
            CandidateProcess::from_states(control, grid.clone(), states)?
        }
        _ => return Err(Error::invalid("candidate", "`grid` and `states` must be given together")),
    };
    candidate.check_dims(&problem)?;
    Ok(ProblemFile { problem, candidate })
}

pub fn load_problem(path: &Path, steps_per_unit: usize) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_problem(&text, steps_per_unit)
}

/// Problem and candidate as a problem file; the candidate is stored by its
/// control and initial state.
pub fn write_problem(problem: &ControlProblem, candidate: &CandidateProcess) -> Result<String> {
    let s = |e: &Expr| Spanned::new(0..0, e.to_string());
    let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    let endpoint = problem.endpoint();
    let repr = FileRepr {
        system: SystemRepr {
            n: problem.n(),
            r: problem.r(),
            dynamics: problem.dynamics().iter().map(s).collect(),
            time: problem.time_mode(),
        },
        controls: ControlsRepr {
            samples: Some(problem.control_samples().iter().map(vec).collect()),
            bounds: None,
            grid: None,
        },
        endpoint: EndpointRepr {
            f0: s(&endpoint.f0),
            f: endpoint.f.iter().map(s).collect(),
            k: endpoint.k.iter().map(s).collect(),
        },
        candidate: CandidateRepr {
            breakpoints: candidate.control().breakpoints().to_vec(),
            values: candidate.control().values().iter().map(vec).collect(),
            x0: vec(candidate.initial_state()),
            grid: None,
            states: None,
        },
    };
    toml::to_string(&repr).map_err(|e| Error::invalid("problem file", e.to_string()))
}
