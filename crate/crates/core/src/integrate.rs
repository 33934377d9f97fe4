//! Fixed-step RK4 for the state equation, the equation in variations and
//! the adjoint equation.
//!
//! Every grid is built so that control breakpoints and needle interval
//! endpoints are nodes; the control is then constant on each step. Linear
//! equations are integrated along a [`Linearization`] of a reference pair,
//! which stores `f_x` at the start, midpoint and end of each step. The
//! midpoint state comes from cubic Hermite interpolation of the stored
//! nodes, which keeps the fourth-order accuracy of the scheme.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{CandidateProcess, ControlProblem, PiecewiseControl};

pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;

/// Relative tolerance for treating two times as the same node.
const NODE_TOL: f64 = 1e-12;

pub(crate) fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= NODE_TOL * (1.0 + a.abs().max(b.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform-ish grid on `[t0, t1]` with roughly `steps_per_unit` steps per
    /// unit time that contains every `required` time inside the interval.
    pub fn build(t0: f64, t1: f64, steps_per_unit: usize, required: &[f64]) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::invalid("steps", "steps per unit must be positive"));
        }
        if t0.is_nan() || t1.is_nan() || t0 >= t1 {
            return Err(Error::invalid("grid", format!("empty interval [{t0}, {t1}]")));
        }
        let mut anchors: Vec<f64> = required
            .iter()
            .copied()
            .filter(|t| *t > t0 && *t < t1 && !same_time(*t, t0) && !same_time(*t, t1))
            .collect();
        anchors.push(t0);
        anchors.push(t1);
        anchors.sort_by(f64::total_cmp);
        anchors.dedup_by(|b, a| same_time(*a, *b));

        let mut nodes = vec![t0];
        for w in anchors.windows(2) {
            let (a, b) = (w[0], w[1]);
            let k = (((b - a) * steps_per_unit as f64) - 1e-9).ceil().max(1.0) as usize;
            for i in 1..k {
                nodes.push(a + (b - a) * i as f64 / k as f64);
            }
            nodes.push(b);
        }
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("grid", "need at least two finite, strictly increasing nodes"));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn t1(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&s| s < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .find(|&j| j < self.nodes.len() && same_time(self.nodes[j], t))
    }

    pub fn require(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or(Error::NotOnGrid { t })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub samples: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.samples[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        self.samples.last().unwrap()
    }

    pub fn at_node(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.samples[self.grid.require(t)?])
    }

    /// Linear interpolation between nodes (O(h²) off-node error).
    pub fn interpolate(&self, t: f64) -> Result<DVector<f64>> {
        let (t0, t1) = (self.grid.t0(), self.grid.t1());
        if t < t0 || t > t1 {
            return Err(Error::TimeOutOfRange { t, t0, t1 });
        }
        if let Some(k) = self.grid.index_of(t) {
            return Ok(self.samples[k].clone());
        }
        let nodes = self.grid.nodes();
        let i = nodes.partition_point(|&s| s < t);
        let (a, b) = (nodes[i - 1], nodes[i]);
        let w = (t - a) / (b - a);
        Ok(&self.samples[i - 1] * (1.0 - w) + &self.samples[i] * w)
    }
}

fn check_finite(x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            reason: "state is not finite".into(),
        })
    }
}

/// RK4 solution of `x' = f(t, x, u(t))`, `x(t0) = a`, on a grid built from
/// the control breakpoints.
pub fn integrate_state(
    prob: &ControlProblem,
    control: &PiecewiseControl,
    a: &DVector<f64>,
    steps_per_unit: usize,
) -> Result<Trajectory> {
    let grid = TimeGrid::build(control.t0(), control.t1(), steps_per_unit, control.breakpoints())?;
    integrate_state_on(prob, control, a, &grid)
}

/// As [`integrate_state`] on a caller-supplied grid that contains every
/// control breakpoint.
pub fn integrate_state_on(
    prob: &ControlProblem,
    control: &PiecewiseControl,
    a: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    if a.len() != prob.n() {
        return Err(Error::Dimension {
            field: "initial state".into(),
            expected: prob.n(),
            found: a.len(),
        });
    }
    for &b in control.breakpoints() {
        grid.require(b)?;
    }
    let nodes = grid.nodes();
    let mut samples = Vec::with_capacity(nodes.len());
    let mut x = a.clone();
    samples.push(x.clone());
    for w in nodes.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let h = t_next - t;
        let u = control.value_on_step(t, t_next);
        let k1 = prob.rhs(t, &x, u)?;
        let k2 = prob.rhs(t + 0.5 * h, &(&x + &k1 * (0.5 * h)), u)?;
        let k3 = prob.rhs(t + 0.5 * h, &(&x + &k2 * (0.5 * h)), u)?;
        let k4 = prob.rhs(t_next, &(&x + &k3 * h), u)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        check_finite(&x, t_next)?;
        samples.push(x.clone());
    }
    Ok(Trajectory {
        grid: grid.clone(),
        samples,
    })
}

/// A control together with its state trajectory on a grid.
#[derive(Debug, Clone)]
pub struct Reference<'p> {
    prob: &'p ControlProblem,
    control: PiecewiseControl,
    traj: Trajectory,
}

impl<'p> Reference<'p> {
    pub fn simulate(prob: &'p ControlProblem, control: PiecewiseControl, x0: &DVector<f64>, grid: &TimeGrid) -> Result<Self> {
        let traj = integrate_state_on(prob, &control, x0, grid)?;
        Ok(Self { prob, control, traj })
    }

    /// Re-simulate a candidate from its initial state on a grid that also
    /// contains `extra_nodes`.
    pub fn from_candidate(
        prob: &'p ControlProblem,
        cand: &CandidateProcess,
        steps_per_unit: usize,
        extra_nodes: &[f64],
    ) -> Result<Self> {
        cand.check_dims(prob)?;
        let control = cand.control();
        let mut required = control.breakpoints().to_vec();
        required.extend_from_slice(extra_nodes);
        let grid = TimeGrid::build(control.t0(), control.t1(), steps_per_unit, &required)?;
        Self::simulate(prob, control.clone(), cand.initial_state(), &grid)
    }

    pub fn problem(&self) -> &'p ControlProblem {
        self.prob
    }

    pub fn control(&self) -> &PiecewiseControl {
        &self.control
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.traj.grid
    }

    pub fn state_at(&self, t: f64) -> Result<&DVector<f64>> {
        self.traj.at_node(t)
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        self.traj.first()
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.traj.last()
    }

    /// `f(x(t), v) - f(x(t), u(t))` with `u(t)` read by left continuity.
    pub fn delta_f(&self, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.state_at(t)?;
        let u = self.control.evaluate(t)?;
        Ok(self.prob.rhs(t, x, v)? - self.prob.rhs(t, x, u)?)
    }

    pub fn linearize(&self) -> Result<Linearization> {
        let nodes = self.traj.grid.nodes();
        let mut steps = Vec::with_capacity(nodes.len() - 1);
        for (k, w) in nodes.windows(2).enumerate() {
            let (t, t_next) = (w[0], w[1]);
            let h = t_next - t;
            let u = self.control.value_on_step(t, t_next);
            let (x, x_next) = (&self.traj.samples[k], &self.traj.samples[k + 1]);
            let f = self.prob.rhs(t, x, u)?;
            let f_next = self.prob.rhs(t_next, x_next, u)?;
            let x_mid = (x + x_next) * 0.5 + (f - f_next) * (h / 8.0);
            steps.push([
                self.prob.state_jacobian(t, x, u)?,
                self.prob.state_jacobian(t + 0.5 * h, &x_mid, u)?,
                self.prob.state_jacobian(t_next, x_next, u)?,
            ]);
        }
        Ok(Linearization {
            grid: self.traj.grid.clone(),
            steps,
        })
    }
}

/// `f_x` along a reference pair at the RK4 stage times of every step.
#[derive(Debug, Clone)]
pub struct Linearization {
    grid: TimeGrid,
    steps: Vec<[DMatrix<f64>; 3]>,
}

impl Linearization {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.steps[0][0].nrows()
    }
}

/// Forward solution of `x̄' = f_x x̄` from `start_time` (a grid node) to `t1`.
pub fn integrate_variational(lin: &Linearization, start_time: f64, xbar0: &DVector<f64>) -> Result<Trajectory> {
    if xbar0.len() != lin.dim() {
        return Err(Error::Dimension {
            field: "variational initial value".into(),
            expected: lin.dim(),
            found: xbar0.len(),
        });
    }
    let start = lin.grid.require(start_time)?;
    let nodes = &lin.grid.nodes()[start..];
    let mut y = xbar0.clone();
    let mut samples = Vec::with_capacity(nodes.len());
    samples.push(y.clone());
    for (k, w) in nodes.windows(2).enumerate() {
        let h = w[1] - w[0];
        let [a0, am, a1] = &lin.steps[start + k];
        let k1 = a0 * &y;
        let k2 = am * (&y + &k1 * (0.5 * h));
        let k3 = am * (&y + &k2 * (0.5 * h));
        let k4 = a1 * (&y + &k3 * h);
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        check_finite(&y, w[1])?;
        samples.push(y.clone());
    }
    Ok(Trajectory {
        // a single node when starting at t1
        grid: TimeGrid { nodes: nodes.to_vec() },
        samples,
    })
}

/// Backward solution of `ψ' = -ψ f_x` from `ψ(t1) = psi_terminal`, stored
/// on the full grid.
pub fn integrate_adjoint(lin: &Linearization, psi_terminal: &DVector<f64>) -> Result<Trajectory> {
    if psi_terminal.len() != lin.dim() {
        return Err(Error::Dimension {
            field: "adjoint terminal value".into(),
            expected: lin.dim(),
            found: psi_terminal.len(),
        });
    }
    let nodes = lin.grid.nodes();
    let mut samples = vec![DVector::zeros(lin.dim()); nodes.len()];
    let mut p = psi_terminal.clone();
    *samples.last_mut().unwrap() = p.clone();
    for k in (0..nodes.len() - 1).rev() {
        let h = nodes[k + 1] - nodes[k];
        let [a0, am, a1] = &lin.steps[k];
        // ψ as a column: p' = -Aᵀ p, integrated from t_{k+1} down to t_k.
        let k1 = -(a1.tr_mul(&p));
        let k2 = -(am.tr_mul(&(&p - &k1 * (0.5 * h))));
        let k3 = -(am.tr_mul(&(&p - &k2 * (0.5 * h))));
        let k4 = -(a0.tr_mul(&(&p - &k3 * h)));
        p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        check_finite(&p, nodes[k])?;
        samples[k] = p.clone();
    }
    Ok(Trajectory {
        grid: lin.grid.clone(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::problem::{EndpointData, TimeMode};
    use std::f64::consts::E;

    fn problem(dynamics: &[&str], r: usize) -> ControlProblem {
        ControlProblem::new(
            dynamics.len(),
            r,
            dynamics.iter().map(|s| parse(s).unwrap()).collect(),
            vec![DVector::zeros(r)],
            EndpointData {
                f0: parse("0").unwrap(),
                f: vec![],
                k: vec![],
            },
            TimeMode::Fixed { t0: 0.0, t1: 1.0 },
        )
        .unwrap()
    }

    fn constant(v: &[f64]) -> PiecewiseControl {
        PiecewiseControl::constant(0.0, 1.0, DVector::from_column_slice(v)).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn grid_contains_required_nodes() {
        let g = TimeGrid::build(0.0, 1.0, 10, &[0.33, 0.5, 0.5 + 1e-16, 2.0]).unwrap();
        assert!(g.index_of(0.33).is_some());
        assert!(g.index_of(0.5).is_some());
        assert_eq!(g.t0(), 0.0);
        assert_eq!(g.t1(), 1.0);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(g.nodes().windows(2).all(|w| w[1] - w[0] <= 0.1 + 1e-12));
    }

    #[test]
    fn state_examples() {
        let p = problem(&["u1"], 1);
        let tr = integrate_state(&p, &constant(&[-1.0]), &v(&[0.0]), 1000).unwrap();
        assert!((tr.last()[0] + 1.0).abs() < 1e-13);

        let p = problem(&["x1"], 1);
        let tr = integrate_state(&p, &constant(&[0.0]), &v(&[1.0]), 1000).unwrap();
        assert!((tr.last()[0] - E).abs() < 1e-10);

        let p = problem(&["x2", "u1"], 1);
        let tr = integrate_state(&p, &constant(&[1.0]), &v(&[0.0, 0.0]), 1000).unwrap();
        assert!((tr.last()[0] - 0.5).abs() < 1e-13);
        assert!((tr.last()[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn blow_up_is_reported() {
        let p = problem(&["x1^2"], 1);
        let ctrl = PiecewiseControl::constant(0.0, 2.0, v(&[0.0])).unwrap();
        let err = integrate_state(&p, &ctrl, &v(&[1.0]), 100).unwrap_err();
        assert!(matches!(err, Error::Integration { .. } | Error::ExprIn { .. }), "{err:?}");
    }

    #[test]
    fn rk4_convergence_order() {
        let p = problem(&["x1"], 1);
        let err = |steps| (integrate_state(&p, &constant(&[0.0]), &v(&[1.0]), steps).unwrap().last()[0] - E).abs();
        let (coarse, fine) = (err(10), err(20));
        assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
    }

    fn linearized<'p>(p: &'p ControlProblem, u: &[f64], x0: &[f64]) -> (Reference<'p>, Linearization) {
        let grid = TimeGrid::build(0.0, 1.0, 1000, &[]).unwrap();
        let r = Reference::simulate(p, constant(u), &v(x0), &grid).unwrap();
        let lin = r.linearize().unwrap();
        (r, lin)
    }

    #[test]
    fn variational_examples() {
        let p = problem(&["u1"], 1);
        let (_, lin) = linearized(&p, &[-1.0], &[0.0]);
        assert_eq!(integrate_variational(&lin, 0.0, &v(&[0.7])).unwrap().last()[0], 0.7);

        let p = problem(&["x1 + u1"], 1);
        let (_, lin) = linearized(&p, &[0.0], &[1.0]);
        assert!((integrate_variational(&lin, 0.0, &v(&[1.0])).unwrap().last()[0] - E).abs() < 1e-10);

        let p = problem(&["x2", "u1"], 1);
        let (_, lin) = linearized(&p, &[1.0], &[0.0, 0.0]);
        let xb = integrate_variational(&lin, 0.0, &v(&[0.0, 1.0])).unwrap();
        assert!((xb.last() - v(&[1.0, 1.0])).amax() < 1e-13);
    }

    #[test]
    fn adjoint_examples() {
        let p = problem(&["u1"], 1);
        let (_, lin) = linearized(&p, &[-1.0], &[0.0]);
        let psi = integrate_adjoint(&lin, &v(&[-1.0])).unwrap();
        assert!(psi.samples.iter().all(|s| s[0] == -1.0));

        let p = problem(&["x1 + u1"], 1);
        let (_, lin) = linearized(&p, &[0.0], &[1.0]);
        let psi = integrate_adjoint(&lin, &v(&[-1.0])).unwrap();
        assert!((psi.first()[0] + E).abs() < 1e-10);

        let p = problem(&["x2", "u1"], 1);
        let (r, lin) = linearized(&p, &[1.0], &[0.0, 0.0]);
        let (pp, q) = (0.3, -1.7);
        let psi = integrate_adjoint(&lin, &v(&[pp, q])).unwrap();
        for (t, s) in r.grid().nodes().iter().zip(&psi.samples) {
            assert!((s[0] - pp).abs() < 1e-13);
            assert!((s[1] - (q + pp * (1.0 - t))).abs() < 1e-12);
        }
    }

    #[test]
    fn pairing_is_constant() {
        let p = problem(&["sin(x1) + x2*u1", "x1*x2 - u1"], 1);
        let (_, lin) = linearized(&p, &[0.5], &[0.2, -0.4]);
        let xb = integrate_variational(&lin, 0.0, &v(&[1.0, -2.0])).unwrap();
        let psi = integrate_adjoint(&lin, &v(&[0.3, 0.8])).unwrap();
        let end = psi.last().dot(xb.last());
        for (a, b) in psi.samples.iter().zip(&xb.samples) {
            assert!((a.dot(b) - end).abs() <= 1e-8);
        }
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let tr = Trajectory {
            grid: TimeGrid::from_nodes(vec![0.0, 1.0]).unwrap(),
            samples: vec![v(&[0.0]), v(&[2.0])],
        };
        assert_eq!(tr.interpolate(0.25).unwrap()[0], 0.5);
        assert!(tr.interpolate(1.5).is_err());
    }
}
