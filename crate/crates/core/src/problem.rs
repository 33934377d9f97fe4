//! Optimal control problems, piecewise-constant controls and candidate
//! processes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{jacobian, Bindings, Expr};
use crate::integrate::{integrate_state_on, TimeGrid};

pub const DEFAULT_TOL_FEAS: f64 = 1e-6;

pub fn state_name(i: usize) -> String {
    format!("x{}", i + 1)
}

pub fn control_name(i: usize) -> String {
    format!("u{}", i + 1)
}

pub fn initial_name(i: usize) -> String {
    format!("x0_{}", i + 1)
}

pub fn terminal_name(i: usize) -> String {
    format!("x1_{}", i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TimeMode {
    Fixed { t0: f64, t1: f64 },
    /// Endpoint times are decision variables; the values are initial guesses.
    Free { t0: f64, t1: f64 },
}

impl TimeMode {
    pub fn is_free(&self) -> bool {
        matches!(self, TimeMode::Free { .. })
    }

    pub fn interval(&self) -> (f64, f64) {
        match *self {
            TimeMode::Fixed { t0, t1 } | TimeMode::Free { t0, t1 } => (t0, t1),
        }
    }
}

/// Endpoint functions `F0` (cost), `F <= 0` and `K = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointData {
    pub f0: Expr,
    pub f: Vec<Expr>,
    pub k: Vec<Expr>,
}

/// Which endpoint function a multiplier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum EndpointRole {
    Cost,
    Inequality(usize),
    Equality(usize),
}

impl EndpointData {
    pub fn dim_f(&self) -> usize {
        self.f.len()
    }

    pub fn dim_k(&self) -> usize {
        self.k.len()
    }

    /// Number of multipliers `1 + d(F) + d(K)`.
    pub fn len(&self) -> usize {
        1 + self.f.len() + self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Endpoint functions in multiplier order: `F0, F_1.., K_1..`.
    pub fn functions(&self) -> impl Iterator<Item = (EndpointRole, &Expr)> {
        std::iter::once((EndpointRole::Cost, &self.f0))
            .chain(self.f.iter().enumerate().map(|(i, e)| (EndpointRole::Inequality(i), e)))
            .chain(self.k.iter().enumerate().map(|(i, e)| (EndpointRole::Equality(i), e)))
    }
}

/// Point at which endpoint functions are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointPoint {
    pub x0: DVector<f64>,
    pub x1: DVector<f64>,
    /// `(t0, t1)`; bound only for free-time problems.
    pub times: Option<(f64, f64)>,
}

/// Partial derivatives of one endpoint function.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointGradient {
    pub value: f64,
    pub d_x0: DVector<f64>,
    pub d_x1: DVector<f64>,
    pub d_t0: f64,
    pub d_t1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    n: usize,
    r: usize,
    dynamics: Vec<Expr>,
    autonomous: bool,
    control_samples: Vec<DVector<f64>>,
    endpoint: EndpointData,
    time_mode: TimeMode,
    dyn_vars: Vec<String>,
    endpoint_vars: Vec<String>,
}

impl ControlProblem {
    pub fn new(
        n: usize,
        r: usize,
        dynamics: Vec<Expr>,
        control_samples: Vec<DVector<f64>>,
        endpoint: EndpointData,
        time_mode: TimeMode,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("system.n", "state dimension must be positive"));
        }
        if dynamics.len() != n {
            return Err(Error::Dimension {
                field: "system.dynamics".into(),
                expected: n,
                found: dynamics.len(),
            });
        }
        if control_samples.is_empty() {
            return Err(Error::invalid("controls", "control sample set is empty"));
        }
        for (i, s) in control_samples.iter().enumerate() {
            if s.len() != r {
                return Err(Error::Dimension {
                    field: format!("controls.samples[{i}]"),
                    expected: r,
                    found: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("controls.samples[{i}]"), "non-finite entry"));
            }
        }
        let (t0, t1) = time_mode.interval();
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::invalid("system.time", format!("need t0 < t1, got [{t0}, {t1}]")));
        }

        let mut dyn_vars = vec!["t".to_string()];
        dyn_vars.extend((0..n).map(state_name));
        dyn_vars.extend((0..r).map(control_name));
        for (i, e) in dynamics.iter().enumerate() {
            check_vars(e, &dyn_vars, &format!("system.dynamics[{i}]"))?;
        }

        let mut endpoint_vars: Vec<String> = (0..n).map(initial_name).collect();
        endpoint_vars.extend((0..n).map(terminal_name));
        if time_mode.is_free() {
            endpoint_vars.push("t0".into());
            endpoint_vars.push("t1".into());
        }
        check_vars(&endpoint.f0, &endpoint_vars, "endpoint.F0")?;
        for (i, e) in endpoint.f.iter().enumerate() {
            check_vars(e, &endpoint_vars, &format!("endpoint.F[{i}]"))?;
        }
        for (i, e) in endpoint.k.iter().enumerate() {
            check_vars(e, &endpoint_vars, &format!("endpoint.K[{i}]"))?;
        }

        let autonomous = !dynamics.iter().any(|e| e.references("t"));
        Ok(Self {
            n,
            r,
            dynamics,
            autonomous,
            control_samples,
            endpoint,
            time_mode,
            dyn_vars,
            endpoint_vars,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn control_samples(&self) -> &[DVector<f64>] {
        &self.control_samples
    }

    pub fn endpoint(&self) -> &EndpointData {
        &self.endpoint
    }

    pub fn time_mode(&self) -> TimeMode {
        self.time_mode
    }

    /// Copy of the problem with a different sampled control set.
    pub fn with_control_samples(&self, samples: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(
            self.n,
            self.r,
            self.dynamics.clone(),
            samples,
            self.endpoint.clone(),
            self.time_mode,
        )
    }

    fn dyn_values(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Vec<f64> {
        let mut values = Vec::with_capacity(1 + self.n + self.r);
        values.push(t);
        values.extend(x.iter());
        values.extend(u.iter());
        values
    }

    /// Right-hand side `f(t, x, u)`.
    pub fn rhs(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let values = self.dyn_values(t, x, u);
        let env = Bindings::new(&self.dyn_vars, &values);
        let mut out = DVector::zeros(self.n);
        for (i, e) in self.dynamics.iter().enumerate() {
            out[i] = e.eval(&env).map_err(Error::expr_in(format!("dynamics[{i}] at t = {t}")))?;
        }
        Ok(out)
    }

    /// `f_x(t, x, u)`, an `n x n` matrix.
    pub fn state_jacobian(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let values = self.dyn_values(t, x, u);
        let env = Bindings::new(&self.dyn_vars, &values);
        let vars: Vec<&str> = self.dyn_vars[1..=self.n].iter().map(String::as_str).collect();
        jacobian(&self.dynamics, &vars, &env).map_err(Error::expr_in(format!("f_x at t = {t}")))
    }

    /// `f_t(t, x, u)`.
    pub fn time_partial(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if self.autonomous {
            return Ok(DVector::zeros(self.n));
        }
        let values = self.dyn_values(t, x, u);
        let env = Bindings::new(&self.dyn_vars, &values);
        let j = jacobian(&self.dynamics, &["t"], &env).map_err(Error::expr_in(format!("f_t at t = {t}")))?;
        Ok(j.column(0).into_owned())
    }

    fn endpoint_values(&self, p: &EndpointPoint) -> Vec<f64> {
        let mut values: Vec<f64> = p.x0.iter().chain(p.x1.iter()).copied().collect();
        if self.time_mode.is_free() {
            let (t0, t1) = p.times.unwrap_or_else(|| self.time_mode.interval());
            values.push(t0);
            values.push(t1);
        }
        values
    }

    pub fn endpoint_point(&self, cand: &CandidateProcess) -> EndpointPoint {
        EndpointPoint {
            x0: cand.initial_state().clone(),
            x1: cand.terminal_state().clone(),
            times: self
                .time_mode
                .is_free()
                .then(|| (cand.control().t0(), cand.control().t1())),
        }
    }

    pub fn eval_endpoint(&self, e: &Expr, p: &EndpointPoint) -> Result<f64> {
        let values = self.endpoint_values(p);
        let env = Bindings::new(&self.endpoint_vars, &values);
        e.eval(&env).map_err(Error::expr_in("endpoint function"))
    }

    /// Value and gradient of an endpoint expression at `p`.
    pub fn endpoint_gradient(&self, e: &Expr, p: &EndpointPoint) -> Result<EndpointGradient> {
        let values = self.endpoint_values(p);
        let env = Bindings::new(&self.endpoint_vars, &values);
        let vars: Vec<&str> = self.endpoint_vars.iter().map(String::as_str).collect();
        let row = jacobian(std::slice::from_ref(e), &vars, &env).map_err(Error::expr_in("endpoint gradient"))?;
        let value = e.eval(&env).map_err(Error::expr_in("endpoint function"))?;
        let n = self.n;
        let (d_t0, d_t1) = if self.time_mode.is_free() {
            (row[(0, 2 * n)], row[(0, 2 * n + 1)])
        } else {
            (0.0, 0.0)
        };
        Ok(EndpointGradient {
            value,
            d_x0: DVector::from_iterator(n, (0..n).map(|i| row[(0, i)])),
            d_x1: DVector::from_iterator(n, (0..n).map(|i| row[(0, n + i)])),
            d_t0,
            d_t1,
        })
    }
}

fn check_vars(e: &Expr, allowed: &[String], field: &str) -> Result<()> {
    for v in e.variables() {
        if !allowed.contains(&v) {
            return Err(Error::UnknownVariable {
                field: field.to_string(),
                name: v,
            });
        }
    }
    Ok(())
}

/// Uniform grid over a box, `count` points per axis, last axis fastest.
pub fn box_samples(bounds: &[(f64, f64)], count: usize) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::invalid("controls.grid", "count per axis must be positive"));
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("controls.box[{i}]"), format!("lower {lo} exceeds upper {hi}")));
        }
    }
    let axis = |(lo, hi): (f64, f64), k: usize| {
        if count == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (count - 1) as f64
        }
    };
    let total = count.pow(bounds.len() as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut point = vec![0.0; bounds.len()];
        for d in (0..bounds.len()).rev() {
            point[d] = axis(bounds[d], rem % count);
            rem /= count;
        }
        out.push(DVector::from_vec(point));
    }
    Ok(out)
}

/// Piecewise-constant control, left continuous: segment `j` covers
/// `(b_j, b_{j+1}]`, and the first segment also covers `b_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    breakpoints: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl PiecewiseControl {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::invalid("control.breakpoints", "need at least t0 and t1"));
        }
        if values.len() + 1 != breakpoints.len() {
            return Err(Error::Dimension {
                field: "control.values".into(),
                expected: breakpoints.len() - 1,
                found: values.len(),
            });
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("control.breakpoints", "must be finite and strictly increasing"));
        }
        let r = values[0].len();
        for (j, v) in values.iter().enumerate() {
            if v.len() != r {
                return Err(Error::Dimension {
                    field: format!("control.values[{j}]"),
                    expected: r,
                    found: v.len(),
                });
            }
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(t0: f64, t1: f64, value: DVector<f64>) -> Result<Self> {
        Self::new(vec![t0, t1], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Breakpoints strictly inside `(t0, t1)`.
    pub fn interior_breakpoints(&self) -> &[f64] {
        &self.breakpoints[1..self.breakpoints.len() - 1]
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn t0(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn t1(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let (t0, t1) = (self.t0(), self.t1());
        if !(t0..=t1).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t0, t1 });
        }
        // first breakpoint b_j (j >= 1) with t <= b_j
        let j = self.breakpoints[1..].partition_point(|&b| b < t);
        Ok(j.min(self.values.len() - 1))
    }

    pub fn evaluate(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.values[self.segment_index(t)?])
    }

    /// Value of the segment following `t`, i.e. the right limit.
    pub fn right_limit(&self, t: f64) -> Result<&DVector<f64>> {
        let j = self.segment_index(t)?;
        if j + 1 < self.values.len() && t >= self.breakpoints[j + 1] {
            Ok(&self.values[j + 1])
        } else {
            Ok(&self.values[j])
        }
    }

    /// Constant value on the step `(a, b]`, which must not straddle a breakpoint.
    pub fn value_on_step(&self, a: f64, b: f64) -> &DVector<f64> {
        let mid = 0.5 * (a + b);
        let j = self.breakpoints[1..].partition_point(|&bp| bp < mid);
        &self.values[j.min(self.values.len() - 1)]
    }
}

/// A candidate process `(x̂, û)` sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateProcess {
    control: PiecewiseControl,
    grid: TimeGrid,
    states: Vec<DVector<f64>>,
}

impl CandidateProcess {
    /// Candidate with externally supplied states.
    pub fn from_states(control: PiecewiseControl, grid: Vec<f64>, states: Vec<DVector<f64>>) -> Result<Self> {
        let grid = TimeGrid::from_nodes(grid)?;
        if states.len() != grid.len() {
            return Err(Error::Dimension {
                field: "candidate.states".into(),
                expected: grid.len(),
                found: states.len(),
            });
        }
        if grid.t0() != control.t0() || grid.t1() != control.t1() {
            return Err(Error::invalid("candidate.grid", "must span the control interval"));
        }
        for &b in control.breakpoints() {
            if grid.index_of(b).is_none() {
                return Err(Error::invalid("candidate.grid", format!("breakpoint {b} is not a grid node")));
            }
        }
        let n = states[0].len();
        if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.len() != n) {
            return Err(Error::Dimension {
                field: format!("candidate.states[{i}]"),
                expected: n,
                found: s.len(),
            });
        }
        Ok(Self { control, grid, states })
    }

    /// Candidate whose states are the RK4 solution from `x0` under `control`.
    pub fn simulate(prob: &ControlProblem, control: PiecewiseControl, x0: DVector<f64>, steps_per_unit: usize) -> Result<Self> {
        let grid = TimeGrid::build(control.t0(), control.t1(), steps_per_unit, control.breakpoints())?;
        let traj = integrate_state_on(prob, &control, &x0, &grid)?;
        Ok(Self {
            control,
            grid,
            states: traj.samples,
        })
    }

    pub fn control(&self) -> &PiecewiseControl {
        &self.control
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    pub fn check_dims(&self, prob: &ControlProblem) -> Result<()> {
        if self.states[0].len() != prob.n() {
            return Err(Error::Dimension {
                field: "candidate.x0".into(),
                expected: prob.n(),
                found: self.states[0].len(),
            });
        }
        if self.control.dim() != prob.r() {
            return Err(Error::Dimension {
                field: "candidate.values".into(),
                expected: prob.r(),
                found: self.control.dim(),
            });
        }
        if let TimeMode::Fixed { t0, t1 } = prob.time_mode() {
            if self.control.t0() != t0 || self.control.t1() != t1 {
                return Err(Error::invalid(
                    "candidate.breakpoints",
                    format!("fixed-time problem needs the interval [{t0}, {t1}]"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub dynamics_residual: f64,
    /// `max_k |K_k|`, 0 when there are no equality constraints.
    pub k_residual: f64,
    /// `max_j F_j`, absent when there are no inequality constraints.
    pub f_slack: Option<f64>,
    pub tol_feas: f64,
    pub admissible: bool,
}

/// Re-integrate from `x̂0` under `û` and compare with the candidate's states,
/// then evaluate the endpoint constraints.
pub fn check_admissibility(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    tol_feas: f64,
    steps_per_unit: usize,
) -> Result<AdmissibilityReport> {
    cand.check_dims(prob)?;
    let control = cand.control();
    let grid = TimeGrid::build(control.t0(), control.t1(), steps_per_unit, cand.grid().nodes())?;
    let traj = integrate_state_on(prob, control, cand.initial_state(), &grid)?;
    let mut dynamics_residual: f64 = 0.0;
    for (t, x) in cand.grid().nodes().iter().zip(cand.states()) {
        let k = grid.index_of(*t).ok_or(Error::NotOnGrid { t: *t })?;
        dynamics_residual = dynamics_residual.max((x - &traj.samples[k]).amax());
    }
    let point = prob.endpoint_point(cand);
    let mut k_residual: f64 = 0.0;
    for e in &prob.endpoint().k {
        k_residual = k_residual.max(prob.eval_endpoint(e, &point)?.abs());
    }
    let mut f_slack: Option<f64> = None;
    for e in &prob.endpoint().f {
        let v = prob.eval_endpoint(e, &point)?;
        f_slack = Some(f_slack.map_or(v, |s| s.max(v)));
    }
    let admissible = dynamics_residual <= tol_feas && k_residual <= tol_feas && f_slack.is_none_or(|s| s <= tol_feas);
    Ok(AdmissibilityReport {
        dynamics_residual,
        k_residual,
        f_slack,
        tol_feas,
        admissible,
    })
}
