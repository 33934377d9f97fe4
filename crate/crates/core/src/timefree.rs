//! Free-time problems through a change of time `dt/dτ = v`.
//!
//! Time becomes state `x1` of the transformed problem and the original states
//! shift by one; the speed `v` is appended as the last control. On
//! `[τ0, τ1] = [t̂0, t̂1]` the reference `v ≡ 1` reproduces the candidate.

use std::collections::HashMap;

use nalgebra::DVector;
use serde::Serialize;

use crate::certify::Certifier;
use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr};
use crate::multipliers::{MultiplierTuple, Tolerances};
use crate::problem::{
    control_name, initial_name, state_name, terminal_name, CandidateProcess, ControlProblem, EndpointData,
    PiecewiseControl, TimeMode,
};

/// Speeds sampled around the reference value 1.
pub const DEFAULT_V_GRID: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Debug, Clone)]
pub struct TransformedProblem {
    pub original: ControlProblem,
    pub problem: ControlProblem,
    pub candidate: CandidateProcess,
    pub v_grid: Vec<f64>,
    /// A fixed-time input had `t0`, `t1` appended to `K`.
    pub pinned_times: bool,
}

fn renames(n: usize, r: usize) -> (HashMap<String, String>, HashMap<String, String>) {
    let mut dynamics = HashMap::new();
    dynamics.insert("t".to_string(), state_name(0));
    for i in 0..n {
        dynamics.insert(state_name(i), state_name(i + 1));
    }
    for i in 0..r {
        dynamics.insert(control_name(i), control_name(i));
    }
    let mut endpoint = HashMap::new();
    endpoint.insert("t0".to_string(), initial_name(0));
    endpoint.insert("t1".to_string(), terminal_name(0));
    for i in 0..n {
        endpoint.insert(initial_name(i), initial_name(i + 1));
        endpoint.insert(terminal_name(i), terminal_name(i + 1));
    }
    (dynamics, endpoint)
}

fn mul(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b))
}

fn sub(a: Expr, b: Expr) -> Expr {
    Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b))
}

pub fn v_change_transform(prob: &ControlProblem, cand: &CandidateProcess, v_grid: &[f64]) -> Result<TransformedProblem> {
    cand.check_dims(prob)?;
    if v_grid.is_empty() {
        return Err(Error::invalid("v_grid", "no speeds given"));
    }
    if let Some(v) = v_grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid("v_grid", format!("speed {v} is not positive")));
    }
    let (n, r) = (prob.n(), prob.r());
    let (dyn_map, end_map) = renames(n, r);
    let v = Expr::Var(control_name(r));

    let mut dynamics = vec![v.clone()];
    dynamics.extend(prob.dynamics().iter().map(|f| mul(v.clone(), f.rename(&dyn_map))));

    let src = prob.endpoint();
    let mut endpoint = EndpointData {
        f0: src.f0.rename(&end_map),
        f: src.f.iter().map(|e| e.rename(&end_map)).collect(),
        k: src.k.iter().map(|e| e.rename(&end_map)).collect(),
    };
    let (t0, t1) = (cand.control().t0(), cand.control().t1());
    let pinned_times = !prob.time_mode().is_free();
    if pinned_times {
        endpoint.k.push(sub(Expr::Var(initial_name(0)), Expr::Num(t0)));
        endpoint.k.push(sub(Expr::Var(terminal_name(0)), Expr::Num(t1)));
    }

    let mut samples = Vec::with_capacity(prob.control_samples().len() * v_grid.len());
    for u in prob.control_samples() {
        for &s in v_grid {
            samples.push(extend(u, s));
        }
    }
    let problem = ControlProblem::new(n + 1, r + 1, dynamics, samples, endpoint, TimeMode::Fixed { t0, t1 })?;

    let control = PiecewiseControl::new(
        cand.control().breakpoints().to_vec(),
        cand.control().values().iter().map(|u| extend(u, 1.0)).collect(),
    )?;
    let states = cand
        .grid()
        .nodes()
        .iter()
        .zip(cand.states())
        .map(|(&t, x)| {
            let mut s = DVector::zeros(n + 1);
            s[0] = t;
            s.rows_mut(1, n).copy_from(x);
            s
        })
        .collect();
    let candidate = CandidateProcess::from_states(control, cand.grid().nodes().to_vec(), states)?;
    Ok(TransformedProblem {
        original: prob.clone(),
        problem,
        candidate,
        v_grid: v_grid.to_vec(),
        pinned_times,
    })
}

fn extend(u: &DVector<f64>, v: f64) -> DVector<f64> {
    let mut out = DVector::zeros(u.len() + 1);
    out.rows_mut(0, u.len()).copy_from(u);
    out[u.len()] = v;
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiTProfile {
    pub times: Vec<f64>,
    /// First adjoint component of the transformed problem.
    pub psi_t: Vec<f64>,
    /// `ψ_t` rebuilt from `-ψ̇_t = ψ_x f_t` and `ψ_t(τ1) = -l_{t1}`.
    pub psi_t_recovered: Vec<f64>,
    pub consistency_residual: f64,
    /// `|ψ_t(τ0) - l_{t0}|`.
    pub transversality_t0: f64,
    /// `|ψ_t(τ1) + l_{t1}|`.
    pub transversality_t1: f64,
    /// `max |ψ_x f + ψ_t|`.
    pub energy_residual: f64,
    /// `max ψ_t - min ψ_t`.
    pub psi_t_variation: f64,
    /// `H = ψ_x f` of the original problem.
    pub hamiltonian: Vec<f64>,
}

/// `ψ_t` and the energy law for multipliers of the transformed problem.
pub fn recover_psi_t(tp: &TransformedProblem, lambda: &MultiplierTuple, steps_per_unit: usize) -> Result<PsiTProfile> {
    let certifier = Certifier::new(&tp.problem, &tp.candidate, steps_per_unit, &[], Tolerances::default())?;
    let basis = certifier.basis();
    let lv = lambda.to_vector();
    if lv.len() != basis.len() {
        return Err(Error::Dimension {
            field: "lambda".into(),
            expected: basis.len(),
            found: lv.len(),
        });
    }
    let psi = basis.combine(&lv);
    let reference = certifier.sensitivity().reference();
    let traj = reference.trajectory();
    let control = reference.control();
    let n = tp.original.n();
    let r = tp.original.r();
    let nodes = traj.grid.nodes();

    let mut psi_t = Vec::with_capacity(nodes.len());
    let mut hamiltonian = Vec::with_capacity(nodes.len());
    let mut source = Vec::with_capacity(nodes.len());
    let mut energy_residual: f64 = 0.0;
    for (k, &tau) in nodes.iter().enumerate() {
        let s = &traj.samples[k];
        let t = s[0];
        let x = s.rows(1, n).clone_owned();
        let uv = control.evaluate(tau)?;
        let u = uv.rows(0, r).clone_owned();
        let speed = uv[r];
        let px = psi.samples[k].rows(1, n).clone_owned();
        let pt = psi.samples[k][0];
        let h = px.dot(&tp.original.rhs(t, &x, &u)?);
        energy_residual = energy_residual.max((h + pt).abs());
        hamiltonian.push(h);
        psi_t.push(pt);
        source.push(speed * px.dot(&tp.original.time_partial(t, &x, &u)?));
    }

    let l_t0 = basis.l_x0(&lv)[0];
    let l_t1 = basis.l_x1(&lv)[0];
    let mut recovered = vec![0.0; nodes.len()];
    let last = nodes.len() - 1;
    recovered[last] = -l_t1;
    for k in (0..last).rev() {
        let h = nodes[k + 1] - nodes[k];
        recovered[k] = recovered[k + 1] + 0.5 * h * (source[k] + source[k + 1]);
    }
    let consistency_residual = psi_t
        .iter()
        .zip(&recovered)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max = psi_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = psi_t.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PsiTProfile {
        times: nodes.to_vec(),
        transversality_t0: (psi_t[0] - l_t0).abs(),
        transversality_t1: (psi_t[last] + l_t1).abs(),
        psi_t,
        psi_t_recovered: recovered,
        consistency_residual,
        energy_residual,
        psi_t_variation: max - min,
        hamiltonian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::integrate::integrate_state;
    use crate::problem::box_samples;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn e1_free() -> (ControlProblem, CandidateProcess) {
        let prob = ControlProblem::new(
            1,
            1,
            vec![parse("u1").unwrap()],
            box_samples(&[(-1.0, 1.0)], 3).unwrap(),
            EndpointData {
                f0: parse("x1_1").unwrap(),
                f: vec![],
                k: vec![parse("x0_1").unwrap(), parse("t0").unwrap(), parse("t1 - 1").unwrap()],
            },
            TimeMode::Free { t0: 0.0, t1: 1.0 },
        )
        .unwrap();
        let c = PiecewiseControl::constant(0.0, 1.0, scalar(-1.0)).unwrap();
        let cand = CandidateProcess::simulate(&prob, c, scalar(0.0), 100).unwrap();
        (prob, cand)
    }

    #[test]
    fn e1_transform_shapes() {
        let (prob, cand) = e1_free();
        let tp = v_change_transform(&prob, &cand, &DEFAULT_V_GRID).unwrap();
        assert_eq!(tp.problem.n(), 2);
        assert_eq!(tp.problem.r(), 2);
        assert_eq!(tp.problem.control_samples().len(), 9);
        assert_eq!(tp.problem.time_mode(), TimeMode::Fixed { t0: 0.0, t1: 1.0 });
        assert_eq!(tp.problem.endpoint().k[1].to_string(), "x0_1");
        assert!(tp.problem.is_autonomous());
        let s = tp.candidate.states().last().unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15 && (s[1] + 1.0).abs() < 1e-12);
        assert!(!tp.pinned_times);
    }

    #[test]
    fn rejects_nonpositive_speed() {
        let (prob, cand) = e1_free();
        assert!(v_change_transform(&prob, &cand, &[0.0, 1.0]).is_err());
        assert!(v_change_transform(&prob, &cand, &[-0.5, 1.0]).is_err());
    }

    #[test]
    fn round_trip_terminal_state() {
        let prob = ControlProblem::new(
            1,
            1,
            vec![parse("sin(x1) + t * u1").unwrap()],
            box_samples(&[(-1.0, 1.0)], 3).unwrap(),
            EndpointData {
                f0: parse("x1_1").unwrap(),
                f: vec![],
                k: vec![],
            },
            TimeMode::Fixed { t0: 0.5, t1: 2.0 },
        )
        .unwrap();
        let c = PiecewiseControl::new(vec![0.5, 1.2, 2.0], vec![scalar(1.0), scalar(-0.5)]).unwrap();
        let cand = CandidateProcess::simulate(&prob, c, scalar(0.3), 1000).unwrap();
        let tp = v_change_transform(&prob, &cand, &DEFAULT_V_GRID).unwrap();
        assert!(tp.pinned_times);
        assert!(!tp.problem.is_autonomous() || !prob.is_autonomous());
        let mut x0 = DVector::zeros(2);
        x0[0] = 0.5;
        x0[1] = 0.3;
        let traj = integrate_state(&tp.problem, tp.candidate.control(), &x0, 1000).unwrap();
        assert!((traj.last()[1] - cand.terminal_state()[0]).abs() < 1e-9);
        assert!((traj.last()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn e1_free_time_psi_t() {
        // ψ_x = -α₀ and H = α₀, so ψ_t = -α₀ = β_{t0} = -β_{t1} and β_x = -α₀.
        let (prob, cand) = e1_free();
        let tp = v_change_transform(&prob, &cand, &DEFAULT_V_GRID).unwrap();
        let lambda = MultiplierTuple::new(0.25, vec![], vec![-0.25, -0.25, 0.25]);
        let prof = recover_psi_t(&tp, &lambda, 100).unwrap();
        assert!(prof.psi_t_variation < 1e-12);
        assert!((prof.psi_t[0] + 0.25).abs() < 1e-12);
        assert!(prof.energy_residual < 1e-12);
        assert!(prof.transversality_t0 < 1e-12 && prof.transversality_t1 < 1e-12);
        assert!(prof.consistency_residual < 1e-12);
    }
}
