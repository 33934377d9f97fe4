//! Packet refinement and the final verdict on a candidate.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::{same_time, Reference, Trajectory};
use crate::lp;
use crate::multipliers::{
    compute_adjoint_basis, sign_pattern_search, sign_patterns, AdjointBasis, FarkasCertificate, FeasibilityResult,
    MultiplierSystem, MultiplierTuple, RowKind, Tolerances,
};
use crate::needle::{NeedlePacket, NeedleSpec, Sensitivity};
use crate::problem::{check_admissibility, CandidateProcess, ControlProblem, PiecewiseControl};

pub const DEFAULT_THETA_COUNTS: [usize; 3] = [8, 16, 32];
pub const DEFAULT_U_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Stage {
    /// The θ-grid is `t0 + k (t1 - t0) / theta_count`, `0 < k < theta_count`.
    pub theta_count: usize,
    /// Number of control samples taken from the front of the sample order.
    pub u_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RefinementSchedule {
    pub stages: Vec<Stage>,
    /// Shuffles the sample order after the two extremes when nonzero.
    pub seed: u64,
}

impl RefinementSchedule {
    pub fn new(stages: Vec<Stage>, seed: u64) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid("stages", "at least one stage is required"));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.theta_count < 2 {
                return Err(Error::invalid("stages", format!("stage {}: theta count must be at least 2", i + 1)));
            }
            if s.u_count == 0 {
                return Err(Error::invalid("stages", format!("stage {}: no control samples", i + 1)));
            }
        }
        for (i, w) in stages.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if b.theta_count <= a.theta_count || b.theta_count % a.theta_count != 0 {
                return Err(Error::invalid(
                    "stages",
                    format!(
                        "stage {}: theta count {} must be a proper multiple of {} so that grids nest",
                        i + 2,
                        b.theta_count,
                        a.theta_count
                    ),
                ));
            }
            if b.u_count < a.u_count {
                return Err(Error::invalid("stages", format!("stage {}: sample count decreases", i + 2)));
            }
        }
        Ok(Self { stages, seed })
    }

    /// Every stage uses `min(n_samples, u_cap)` samples.
    pub fn uniform(theta_counts: &[usize], n_samples: usize, u_cap: usize, seed: u64) -> Result<Self> {
        let u = n_samples.min(u_cap);
        Self::new(
            theta_counts
                .iter()
                .map(|&theta_count| Stage { theta_count, u_count: u })
                .collect(),
            seed,
        )
    }

    pub fn default_for(n_samples: usize) -> Self {
        Self::uniform(&DEFAULT_THETA_COUNTS, n_samples, DEFAULT_U_CAP, 0).expect("default schedule is valid")
    }
}

/// Sample indices with both ends first and then bisection midpoints, so that
/// every prefix of length two or more spans the sample range.
pub fn sample_order(count: usize, seed: u64) -> Vec<usize> {
    let mut order = Vec::with_capacity(count);
    if count == 0 {
        return order;
    }
    let mut used = vec![false; count];
    let mut push = |i: usize, order: &mut Vec<usize>| {
        if !used[i] {
            used[i] = true;
            order.push(i);
        }
    };
    push(0, &mut order);
    push(count - 1, &mut order);
    let mut queue = std::collections::VecDeque::from([(0, count - 1)]);
    while let Some((lo, hi)) = queue.pop_front() {
        if hi - lo < 2 {
            continue;
        }
        let mid = (lo + hi) / 2;
        push(mid, &mut order);
        queue.push_back((lo, mid));
        queue.push_back((mid, hi));
    }
    if seed != 0 && order.len() > 2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order[2..].shuffle(&mut rng);
    }
    order
}

/// Interior θ-grid of a stage merged with the interior breakpoints of `control`.
pub fn stage_thetas(control: &PiecewiseControl, theta_count: usize) -> Vec<f64> {
    let (t0, t1) = (control.t0(), control.t1());
    let mut thetas: Vec<f64> = (1..theta_count)
        .map(|k| t0 + (t1 - t0) * (k as f64 / theta_count as f64))
        .collect();
    for &b in control.interior_breakpoints() {
        if !thetas.iter().any(|&t| same_time(t, b)) {
            thetas.push(b);
        }
    }
    thetas.sort_by(f64::total_cmp);
    thetas
}

pub fn stage_packet(control: &PiecewiseControl, samples: &[DVector<f64>], order: &[usize], stage: Stage) -> NeedlePacket {
    let chosen = &order[..stage.u_count.min(order.len())];
    let mut needles = Vec::new();
    for theta in stage_thetas(control, stage.theta_count) {
        for &i in chosen {
            needles.push(NeedleSpec::new(theta, samples[i].clone()));
        }
    }
    NeedlePacket::new(needles)
}

/// Adjoint basis computed once on a grid holding every needle time.
pub struct Certifier<'p> {
    sens: Sensitivity<'p>,
    basis: AdjointBasis,
    tol: Tolerances,
}

impl<'p> Certifier<'p> {
    pub fn new(prob: &'p ControlProblem, cand: &CandidateProcess, steps_per_unit: usize, thetas: &[f64], tol: Tolerances) -> Result<Self> {
        let reference = Reference::from_candidate(prob, cand, steps_per_unit, thetas)?;
        let sens = Sensitivity::from_reference(reference)?;
        let basis = compute_adjoint_basis(&sens)?;
        Ok(Self { sens, basis, tol })
    }

    pub fn sensitivity(&self) -> &Sensitivity<'p> {
        &self.sens
    }

    pub fn basis(&self) -> &AdjointBasis {
        &self.basis
    }

    pub fn system(&self, packet: &NeedlePacket) -> Result<MultiplierSystem> {
        MultiplierSystem::assemble(&self.sens, &self.basis, packet, &self.tol)
    }

    pub fn check_packet(&self, packet: &NeedlePacket) -> Result<FeasibilityResult> {
        Ok(sign_pattern_search(&self.system(packet)?)?.result)
    }
}

/// Feasibility of the multiplier set of a single packet.
pub fn check_packet(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    packet: &NeedlePacket,
    steps_per_unit: usize,
    tol: &Tolerances,
) -> Result<FeasibilityResult> {
    Certifier::new(prob, cand, steps_per_unit, &packet.thetas(), *tol)?.check_packet(packet)
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpResidual {
    pub t: f64,
    pub left: f64,
    pub right: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonianProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `max H - min H` over the grid nodes.
    pub constancy_residual: f64,
    pub jumps: Vec<JumpResidual>,
}

impl HamiltonianProfile {
    pub fn max_jump(&self) -> f64 {
        self.jumps.iter().map(|j| j.residual).fold(0.0, f64::max)
    }
}

/// `H(t) = ψ(t)·f(x̂(t), û(t))` at the nodes of `psi`'s grid.
pub fn hamiltonian_profile(reference: &Reference, psi: &Trajectory) -> Result<HamiltonianProfile> {
    let prob = reference.problem();
    let control = reference.control();
    let traj = reference.trajectory();
    let mut values = Vec::with_capacity(traj.grid.len());
    for (k, &t) in traj.grid.nodes().iter().enumerate() {
        let u = control.evaluate(t)?;
        values.push(psi.samples[k].dot(&prob.rhs(t, &traj.samples[k], u)?));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut jumps = Vec::new();
    for &tau in control.interior_breakpoints() {
        let k = traj.grid.require(tau)?;
        let x = &traj.samples[k];
        let left = psi.samples[k].dot(&prob.rhs(tau, x, control.evaluate(tau)?)?);
        let right = psi.samples[k].dot(&prob.rhs(tau, x, control.right_limit(tau)?)?);
        jumps.push(JumpResidual {
            t: tau,
            left,
            right,
            residual: (left - right).abs(),
        });
    }
    Ok(HamiltonianProfile {
        times: traj.grid.nodes().to_vec(),
        values,
        constancy_residual: max - min,
        jumps,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    /// `max H(ψ, x̂, v) - H(ψ, x̂, û)` over the scanned times and samples.
    pub margin: f64,
    pub theta: f64,
    pub v: Vec<f64>,
    pub times: usize,
    pub samples: usize,
}

/// Universal maximum condition on every grid node and every sample; at
/// breakpoints both one-sided control values are compared.
pub fn universal_max_scan(reference: &Reference, psi: &Trajectory, samples: &[DVector<f64>]) -> Result<ScanResult> {
    let prob = reference.problem();
    let control = reference.control();
    let traj = reference.trajectory();
    let mut best = ScanResult {
        margin: f64::NEG_INFINITY,
        theta: traj.grid.t0(),
        v: Vec::new(),
        times: traj.grid.len(),
        samples: samples.len(),
    };
    for (k, &t) in traj.grid.nodes().iter().enumerate() {
        let x = &traj.samples[k];
        let p = &psi.samples[k];
        let left = control.evaluate(t)?;
        let right = control.right_limit(t).unwrap_or(left);
        let h_left = p.dot(&prob.rhs(t, x, left)?);
        let h_right = p.dot(&prob.rhs(t, x, right)?);
        for v in samples {
            let hv = p.dot(&prob.rhs(t, x, v)?);
            let m = (hv - h_left).max(hv - h_right);
            if m > best.margin {
                best.margin = m;
                best.theta = t;
                best.v = v.iter().copied().collect();
            }
        }
    }
    if samples.is_empty() {
        best.margin = 0.0;
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub needle: usize,
    pub theta: f64,
    pub v: Vec<f64>,
    /// Smallest value of `ψ(θ)·Δf(θ, v)` over every sign pattern, subject to
    /// the non-needle rows and the other needles of the infeasible subset.
    pub best_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: usize,
    pub theta_count: usize,
    pub u_count: usize,
    pub needles: usize,
    pub phase1: f64,
    pub feasible: bool,
    pub pattern: Vec<f64>,
    pub lambda: Option<MultiplierTuple>,
}

/// Rows of stage `earlier` evaluated at the multipliers found for `later`.
#[derive(Debug, Clone, Serialize)]
pub struct NestingCheck {
    pub earlier: usize,
    pub later: usize,
    pub max_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub lambda: MultiplierTuple,
    pub pattern: Vec<f64>,
    /// Largest needle-row value `ψ(θ)·Δf(θ, v)` of the last stage.
    pub worst_slack: f64,
    pub max_row_violation: f64,
    pub constancy_residual: f64,
    pub max_jump: f64,
    pub hamiltonian_t0: f64,
    pub scan: ScanResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub stage: usize,
    pub phase1: f64,
    pub pattern: Vec<f64>,
    pub farkas: FarkasCertificate,
    /// Needles of an irreducible infeasible subset.
    pub subset: Vec<usize>,
    pub witnesses: Vec<Witness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Marginal {
    pub stage: usize,
    pub reason: String,
    pub phase1: f64,
    pub lambda: Option<MultiplierTuple>,
    pub scan: Option<ScanResult>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Certificate(Certificate),
    Violation(Violation),
    Marginal(Marginal),
}

impl Verdict {
    pub fn kind(&self) -> &'static str {
        match self {
            Verdict::Certificate(_) => "certificate",
            Verdict::Violation(_) => "violation",
            Verdict::Marginal(_) => "marginal",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub verdict: Verdict,
    pub stages: Vec<StageRecord>,
    pub nesting: Vec<NestingCheck>,
    /// Control samples in the order they enter the stages.
    pub sample_order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifyOptions {
    pub steps_per_unit: usize,
    pub tol: Tolerances,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            steps_per_unit: crate::integrate::DEFAULT_STEPS_PER_UNIT,
            tol: Tolerances::default(),
        }
    }
}

pub fn certify_refine(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    schedule: &RefinementSchedule,
    opts: &CertifyOptions,
) -> Result<CertifyReport> {
    let adm = check_admissibility(prob, cand, opts.tol.feas, opts.steps_per_unit)?;
    if !adm.admissible {
        return Err(Error::invalid(
            "candidate",
            format!(
                "not admissible (dynamics residual {:.3e}, K residual {:.3e}, max F {:?})",
                adm.dynamics_residual, adm.k_residual, adm.f_slack
            ),
        ));
    }
    let samples = prob.control_samples();
    for (i, s) in schedule.stages.iter().enumerate() {
        if s.u_count > samples.len() {
            return Err(Error::invalid(
                "stages",
                format!("stage {} asks for {} samples, {} available", i + 1, s.u_count, samples.len()),
            ));
        }
    }
    let order = sample_order(samples.len(), schedule.seed);
    let packets: Vec<NeedlePacket> = schedule
        .stages
        .iter()
        .map(|&s| stage_packet(cand.control(), samples, &order, s))
        .collect();
    let mut thetas: Vec<f64> = packets.iter().flat_map(|p| p.thetas()).collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let certifier = Certifier::new(prob, cand, opts.steps_per_unit, &thetas, opts.tol)?;

    let mut records = Vec::new();
    let mut systems: Vec<MultiplierSystem> = Vec::new();
    let mut feasible: Vec<(Vec<f64>, DVector<f64>)> = Vec::new();
    let mut nesting = Vec::new();
    for (idx, (stage, packet)) in schedule.stages.iter().zip(&packets).enumerate() {
        let number = idx + 1;
        let system = certifier.system(packet)?;
        let search = sign_pattern_search(&system)?;
        let mut record = StageRecord {
            stage: number,
            theta_count: stage.theta_count,
            u_count: stage.u_count,
            needles: packet.len(),
            phase1: search.result.phase1(),
            feasible: search.result.is_feasible(),
            pattern: search.result.pattern().to_vec(),
            lambda: None,
        };
        log::debug!("stage {number}: {} needles, phase-1 {:.3e}", packet.len(), record.phase1);
        match search.result {
            FeasibilityResult::Feasible { lambda, pattern, .. } => {
                let lv = lambda.to_vector();
                for (k, earlier) in systems.iter().enumerate() {
                    nesting.push(NestingCheck {
                        earlier: k + 1,
                        later: number,
                        max_violation: max_violation(earlier, &pattern, &lv),
                    });
                }
                record.lambda = Some(lambda);
                records.push(record);
                systems.push(system);
                feasible.push((pattern, lv));
            }
            FeasibilityResult::Infeasible { farkas, phase1, pattern } => {
                records.push(record);
                let verdict = if phase1 <= opts.tol.phase1_infeasible {
                    Verdict::Marginal(Marginal {
                        stage: number,
                        reason: format!("phase-1 optimum {phase1:.3e} lies between the feasibility and infeasibility thresholds"),
                        phase1,
                        lambda: None,
                        scan: None,
                    })
                } else {
                    let (subset, witnesses) = find_witnesses(&system)?;
                    if witnesses.is_empty() {
                        Verdict::Marginal(Marginal {
                            stage: number,
                            reason: "multiplier set is empty but no needle row is separated from zero".into(),
                            phase1,
                            lambda: None,
                            scan: None,
                        })
                    } else {
                        Verdict::Violation(Violation {
                            stage: number,
                            phase1,
                            pattern,
                            farkas,
                            subset,
                            witnesses,
                        })
                    }
                };
                return Ok(CertifyReport {
                    verdict,
                    stages: records,
                    nesting,
                    sample_order: order,
                });
            }
        }
    }

    let last = systems.last().expect("at least one stage");
    let (pattern, lv) = feasible.last().expect("at least one stage").clone();
    let fp = last.problem(&pattern);
    let worst_slack = (0..last.needle_coeffs.nrows())
        .map(|i| last.needle_coeffs.row(i).transpose().dot(&lv))
        .fold(f64::NEG_INFINITY, f64::max);
    let max_row_violation = fp.residuals(&lv).into_iter().fold(0.0, f64::max);
    let psi = certifier.basis().combine(&lv);
    let reference = certifier.sensitivity().reference();
    let profile = hamiltonian_profile(reference, &psi)?;
    let scan = universal_max_scan(reference, &psi, samples)?;
    let lambda = MultiplierTuple::from_vector(&lv, last.dim_f);
    let phase1 = records.last().map_or(0.0, |r| r.phase1);
    let verdict = if scan.margin <= opts.tol.scan_margin {
        Verdict::Certificate(Certificate {
            lambda,
            pattern,
            worst_slack: if worst_slack.is_finite() { worst_slack } else { 0.0 },
            max_row_violation,
            constancy_residual: profile.constancy_residual,
            max_jump: profile.max_jump(),
            hamiltonian_t0: profile.values[0],
            scan,
        })
    } else {
        Verdict::Marginal(Marginal {
            stage: records.len(),
            reason: format!(
                "sampled packets admit multipliers but the maximum condition fails by {:.3e} at t = {}",
                scan.margin, scan.theta
            ),
            phase1,
            lambda: Some(lambda),
            scan: Some(scan),
        })
    };
    Ok(CertifyReport {
        verdict,
        stages: records,
        nesting,
        sample_order: order,
    })
}

fn max_violation(system: &MultiplierSystem, pattern: &[f64], lambda: &DVector<f64>) -> f64 {
    system
        .problem(pattern)
        .residuals(lambda)
        .into_iter()
        .fold(0.0, f64::max)
}

fn needle_row_index(rows: &[crate::multipliers::ConstraintRow], needle: usize) -> usize {
    rows.iter()
        .position(|r| r.kind == RowKind::Needle(needle))
        .expect("needle row present")
}

/// Whether the non-needle rows plus the needles marked in `keep` are
/// infeasible for every sign pattern; also returns the union of the Farkas
/// supports over needle rows.
fn subset_infeasible(system: &MultiplierSystem, patterns: &[Vec<f64>], keep: &[bool]) -> Result<(bool, Vec<bool>)> {
    let mut support = vec![false; keep.len()];
    for pattern in patterns {
        let fp = system.problem(pattern);
        let (a, b, rows) = fp.to_lp_filtered(|_, row| match row.kind {
            RowKind::Needle(i) => keep[i],
            _ => true,
        });
        let p1 = lp::phase1(&a, &b)?;
        if p1.objective <= system.tol.phase1_feasible {
            return Ok((false, support));
        }
        for (r, w) in rows.iter().zip(p1.farkas.iter()) {
            if let RowKind::Needle(i) = fp.rows[r.row].kind {
                if *w > 0.0 {
                    support[i] = true;
                }
            }
        }
    }
    Ok((true, support))
}

/// Deletion filter down to an irreducible infeasible set of needle rows, then
/// the best achievable slack of each of its rows.
pub fn find_witnesses(system: &MultiplierSystem) -> Result<(Vec<usize>, Vec<Witness>)> {
    let s = system.needle_coeffs.nrows();
    let patterns = sign_patterns(system.dim_k)?;
    let (infeasible, support) = subset_infeasible(system, &patterns, &vec![true; s])?;
    if !infeasible {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut keep = support;
    if !subset_infeasible(system, &patterns, &keep)?.0 {
        keep = vec![true; s];
    }
    for i in 0..s {
        if !keep[i] {
            continue;
        }
        keep[i] = false;
        if !subset_infeasible(system, &patterns, &keep)?.0 {
            keep[i] = true;
        }
    }
    let subset: Vec<usize> = (0..s).filter(|&i| keep[i]).collect();
    let mut witnesses = Vec::new();
    for &i in &subset {
        let mut best = f64::INFINITY;
        for pattern in &patterns {
            let fp = system.problem(pattern);
            let target = needle_row_index(&fp.rows, i);
            let value = fp.minimize_row(target, |_, row| match row.kind {
                RowKind::Needle(j) => keep[j],
                _ => true,
            })?;
            if let Some((v, _)) = value {
                best = best.min(v);
            }
        }
        if best > system.tol.phase1_infeasible {
            let needle = &system.needles[i];
            witnesses.push(Witness {
                needle: i,
                theta: needle.theta,
                v: needle.v.iter().copied().collect(),
                best_slack: best,
            });
        }
    }
    Ok((subset, witnesses))
}
