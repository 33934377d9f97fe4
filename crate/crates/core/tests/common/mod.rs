#![allow(dead_code)]

use nalgebra::DVector;
use pmpcert_core::problem::box_samples;
use pmpcert_core::{parse, CandidateProcess, ControlProblem, EndpointData, PiecewiseControl, TimeMode};

pub fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn exprs(list: &[&str]) -> Vec<pmpcert_core::Expr> {
    list.iter().map(|s| parse(s).unwrap()).collect()
}

pub fn fixed(dynamics: &[&str], bounds: &[(f64, f64)], f0: &str, k: &[&str], t1: f64) -> ControlProblem {
    ControlProblem::new(
        dynamics.len(),
        bounds.len(),
        exprs(dynamics),
        box_samples(bounds, 5).unwrap(),
        EndpointData {
            f0: parse(f0).unwrap(),
            f: vec![],
            k: exprs(k),
        },
        TimeMode::Fixed { t0: 0.0, t1 },
    )
    .unwrap()
}

/// Minimize `x(1)` for `ẋ = u`, `|u| <= 1`, `x(0) = 0`.
pub fn e1() -> ControlProblem {
    fixed(&["u1"], &[(-1.0, 1.0)], "x1_1", &["x0_1"], 1.0)
}

pub fn constant_candidate(prob: &ControlProblem, u: f64, x0: f64, steps: usize) -> CandidateProcess {
    let (t0, t1) = prob.time_mode().interval();
    let c = PiecewiseControl::constant(t0, t1, scalar(u)).unwrap();
    CandidateProcess::simulate(prob, c, scalar(x0), steps).unwrap()
}

/// Time-optimal transfer of the double integrator from `(1, 0)` to the origin.
pub fn double_integrator(t1: f64) -> ControlProblem {
    ControlProblem::new(
        2,
        1,
        exprs(&["x2", "u1"]),
        box_samples(&[(-1.0, 1.0)], 3).unwrap(),
        EndpointData {
            f0: parse("t1 - t0").unwrap(),
            f: vec![],
            k: exprs(&["x0_1 - 1", "x0_2", "x1_1", "x1_2", "t0"]),
        },
        TimeMode::Free { t0: 0.0, t1 },
    )
    .unwrap()
}

/// Alternating `±1` control on the given breakpoints from `(1, 0)`.
pub fn bang_bang(prob: &ControlProblem, breakpoints: Vec<f64>, first: f64, steps: usize) -> CandidateProcess {
    let values = (0..breakpoints.len() - 1)
        .map(|i| scalar(if i % 2 == 0 { first } else { -first }))
        .collect();
    let control = PiecewiseControl::new(breakpoints, values).unwrap();
    CandidateProcess::simulate(prob, control, DVector::from_vec(vec![1.0, 0.0]), steps).unwrap()
}

pub const OPTIMAL_SWITCH: [f64; 3] = [0.0, 1.0, 2.0];
pub const EARLY_SWITCH: [f64; 3] = [0.0, 0.9, 2.0];
/// Arcs of length 1/2, 3/8, 3/4, 7/8 reach the origin at `T = 2.5`.
pub const THREE_SWITCHES: [f64; 5] = [0.0, 0.5, 0.875, 1.625, 2.5];

/// Systems for the derivative checks, each with a nonlinear endpoint function
/// and a two-piece reference control.
pub struct DerivativeCase {
    pub name: &'static str,
    pub prob: ControlProblem,
    pub cand: CandidateProcess,
    pub g: pmpcert_core::Expr,
}

pub fn derivative_cases(steps: usize) -> Vec<DerivativeCase> {
    let mk = |name, dynamics: &[&str], g: &str, x0: Vec<f64>| {
        let prob = fixed(dynamics, &[(-1.0, 1.0)], "x1_1", &[], 1.0);
        let control = PiecewiseControl::new(vec![0.0, 0.4, 1.0], vec![scalar(0.3), scalar(-0.7)]).unwrap();
        let cand = CandidateProcess::simulate(&prob, control, DVector::from_vec(x0), steps).unwrap();
        DerivativeCase {
            name,
            prob,
            cand,
            g: parse(g).unwrap(),
        }
    };
    vec![
        mk("x' = u", &["u1"], "x1_1^2 + sin(x0_1) * x1_1", vec![0.2]),
        mk("x' = x + u", &["x1 + u1"], "exp(x1_1) - x0_1 * x1_1", vec![0.5]),
        mk("double integrator", &["x2", "u1"], "x1_1 * x1_2 + x0_2^2", vec![1.0, -0.3]),
        mk("x' = sin(x) + u", &["sin(x1) + u1"], "cos(x1_1) + x0_1^2 * x1_1", vec![0.7]),
    ]
}
