use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use pmpcert_core::certify::{certify_refine, CertifyOptions, CertifyReport, RefinementSchedule, Stage, Verdict};
use pmpcert_core::integrate::integrate_state;
use pmpcert_core::multipliers::Tolerances;
use pmpcert_core::needle::{endpoint_map, NeedlePacket, NeedleSpec, Sensitivity, WidthVector};
use pmpcert_core::problem::{check_admissibility, AdmissibilityReport, EndpointPoint};
use pmpcert_core::problem_file::{load_problem, write_problem, ProblemFile};
use pmpcert_core::timefree::{recover_psi_t, v_change_transform, PsiTProfile, DEFAULT_V_GRID};

use crate::report::{self, Report, Settings};
use crate::ReportFormat;

pub const EXIT_OK: u8 = 0;
pub const EXIT_REJECTED: u8 = 2;
pub const EXIT_MARGINAL: u8 = 3;

/// Finite-difference step for the sensitivity cross-check.
const FD_STEP: f64 = 1e-4;

pub struct Config {
    pub problem: PathBuf,
    pub steps: usize,
    pub slack_tol: Option<f64>,
    pub format: ReportFormat,
}

impl Config {
    fn tolerances(&self) -> Result<Tolerances> {
        let mut tol = Tolerances::default();
        if let Some(s) = self.slack_tol {
            if !(s.is_finite() && s >= 0.0) {
                bail!("--tol must be a nonnegative number, got {s}");
            }
            tol.slack = s;
        }
        Ok(tol)
    }

    fn load(&self) -> Result<ProblemFile> {
        if self.steps == 0 {
            bail!("--steps must be positive");
        }
        load_problem(&self.problem, self.steps).with_context(|| format!("loading {}", self.problem.display()))
    }

    fn settings(&self, pf: &ProblemFile) -> Result<Settings> {
        Ok(Settings {
            steps_per_unit: self.steps,
            tolerances: self.tolerances()?,
            stages: None,
            u_cap: None,
            seed: None,
            v_grid: None,
            control_samples: pf.problem.control_samples().iter().map(to_vec).collect(),
        })
    }

    fn report<T: Serialize>(&self, command: &'static str, settings: Settings, result: T) -> Report<T> {
        Report {
            schema: 1,
            command,
            problem: self.problem.display().to_string(),
            settings,
            result,
        }
    }
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Serialize)]
pub struct SimulateResult {
    pub t0: f64,
    pub t1: f64,
    pub initial_state: Vec<f64>,
    pub terminal_state: Vec<f64>,
    pub columns: Vec<String>,
    /// About a hundred rows; every control breakpoint is included.
    pub table: Vec<Vec<f64>>,
}

pub fn simulate(cfg: &Config) -> Result<u8> {
    let pf = cfg.load()?;
    let grid = pf.candidate.grid().nodes();
    let stride = (grid.len() / 100).max(1);
    let breaks = pf.candidate.control().breakpoints();
    let mut table = Vec::new();
    for (k, (&t, x)) in grid.iter().zip(pf.candidate.states()).enumerate() {
        if k % stride == 0 || k + 1 == grid.len() || breaks.contains(&t) {
            let mut row = vec![t];
            row.extend(x.iter());
            table.push(row);
        }
    }
    let mut columns = vec!["t".to_string()];
    columns.extend((0..pf.problem.n()).map(pmpcert_core::problem::state_name));
    let result = SimulateResult {
        t0: grid[0],
        t1: grid[grid.len() - 1],
        initial_state: to_vec(pf.candidate.initial_state()),
        terminal_state: to_vec(pf.candidate.terminal_state()),
        columns,
        table,
    };
    let rep = cfg.report("simulate", cfg.settings(&pf)?, result);
    report::emit(cfg.format, &rep, report::simulate_text)?;
    Ok(EXIT_OK)
}

pub fn check(cfg: &Config) -> Result<u8> {
    let pf = cfg.load()?;
    let tol = cfg.tolerances()?;
    let adm = check_admissibility(&pf.problem, &pf.candidate, tol.feas, cfg.steps)?;
    let code = if adm.admissible { EXIT_OK } else { EXIT_REJECTED };
    let rep = cfg.report("check", cfg.settings(&pf)?, adm);
    report::emit(cfg.format, &rep, report::check_text)?;
    Ok(code)
}

#[derive(Serialize)]
pub struct NeedleSensitivity {
    pub theta: f64,
    pub v: Vec<f64>,
    /// `P_ε⁺`.
    pub p_eps: Vec<f64>,
    pub p_fd: Vec<f64>,
    pub p_rel_error: f64,
    /// `G_ε⁺` for the cost `F0`.
    pub g_eps: f64,
    pub g_fd: f64,
    pub g_rel_error: f64,
    pub fd_step: f64,
}

fn rel_error(exact: &DVector<f64>, approx: &DVector<f64>) -> f64 {
    (exact - approx).amax() / (1.0 + exact.amax())
}

/// `numbers` holds every `--needle` occurrence back to back, each a time
/// followed by `r` control values.
pub fn sensitivity(cfg: &Config, numbers: &[f64]) -> Result<u8> {
    let pf = cfg.load()?;
    let prob = &pf.problem;
    let r = prob.r();
    if !numbers.len().is_multiple_of(r + 1) {
        bail!("each --needle takes a time and {r} control value(s)");
    }
    let specs: Vec<NeedleSpec> = numbers
        .chunks(r + 1)
        .map(|n| NeedleSpec::new(n[0], DVector::from_column_slice(&n[1..])))
        .collect();
    let sens = Sensitivity::new(prob, &pf.candidate, cfg.steps, &specs)?;
    let control = pf.candidate.control();
    let x0 = pf.candidate.initial_state();
    let base = integrate_state(prob, control, x0, cfg.steps)?.last().clone();
    let times = prob.time_mode().is_free().then(|| (control.t0(), control.t1()));
    let cost = |x1: &DVector<f64>| {
        prob.eval_endpoint(
            &prob.endpoint().f0,
            &EndpointPoint {
                x0: x0.clone(),
                x1: x1.clone(),
                times,
            },
        )
    };
    let g_base = cost(&base)?;
    let mut results = Vec::new();
    for spec in &specs {
        let p_eps = sens.needle_right_derivative(spec)?;
        let packet = NeedlePacket::new(vec![spec.clone()]);
        let moved = endpoint_map(prob, control, &packet, x0, &WidthVector::new(vec![FD_STEP])?, cfg.steps)?;
        let p_fd = (&moved - &base) / FD_STEP;
        let comp = sens.composite_derivatives(&prob.endpoint().f0, spec)?;
        let g_fd = (cost(&moved)? - g_base) / FD_STEP;
        results.push(NeedleSensitivity {
            theta: spec.theta,
            v: to_vec(&spec.v),
            p_rel_error: rel_error(&p_eps, &p_fd),
            p_eps: to_vec(&p_eps),
            p_fd: to_vec(&p_fd),
            g_eps: comp.g_eps,
            g_fd,
            g_rel_error: (comp.g_eps - g_fd).abs() / (1.0 + comp.g_eps.abs()),
            fd_step: FD_STEP,
        });
    }
    let rep = cfg.report("sensitivity", cfg.settings(&pf)?, results);
    report::emit(cfg.format, &rep, report::sensitivity_text)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
pub struct PsiTSummary {
    pub psi_t: f64,
    pub psi_t_variation: f64,
    pub energy_residual: f64,
    pub transversality_t0: f64,
    pub transversality_t1: f64,
    pub consistency_residual: f64,
}

impl From<&PsiTProfile> for PsiTSummary {
    fn from(p: &PsiTProfile) -> Self {
        Self {
            psi_t: p.psi_t[0],
            psi_t_variation: p.psi_t_variation,
            energy_residual: p.energy_residual,
            transversality_t0: p.transversality_t0,
            transversality_t1: p.transversality_t1,
            consistency_residual: p.consistency_residual,
        }
    }
}

#[derive(Serialize)]
pub struct CertifyResult {
    pub admissibility: AdmissibilityReport,
    /// Free end times were handled through the change of time.
    pub time_transformed: bool,
    pub verdict: Option<Verdict>,
    pub stages: Vec<pmpcert_core::certify::StageRecord>,
    pub nesting: Vec<pmpcert_core::certify::NestingCheck>,
    /// Control samples in stage order; the condition is only checked on these.
    pub sampled_controls: Vec<Vec<f64>>,
    pub psi_t: Option<PsiTSummary>,
}

pub fn certify(cfg: &Config, theta_counts: &[usize], u_cap: usize, seed: u64) -> Result<u8> {
    let pf = cfg.load()?;
    let tol = cfg.tolerances()?;
    let mut settings = cfg.settings(&pf)?;
    settings.u_cap = Some(u_cap);
    settings.seed = Some(seed);
    let adm = check_admissibility(&pf.problem, &pf.candidate, tol.feas, cfg.steps)?;

    let transformed = if pf.problem.time_mode().is_free() {
        settings.v_grid = Some(DEFAULT_V_GRID.to_vec());
        Some(v_change_transform(&pf.problem, &pf.candidate, &DEFAULT_V_GRID)?)
    } else {
        None
    };
    let (prob, cand) = match &transformed {
        Some(tp) => (&tp.problem, &tp.candidate),
        None => (&pf.problem, &pf.candidate),
    };
    let schedule = RefinementSchedule::uniform(theta_counts, prob.control_samples().len(), u_cap, seed)?;
    settings.stages = Some(schedule.stages.clone());
    let mut result = CertifyResult {
        admissibility: adm,
        time_transformed: transformed.is_some(),
        verdict: None,
        stages: Vec::new(),
        nesting: Vec::new(),
        sampled_controls: Vec::new(),
        psi_t: None,
    };
    if !result.admissibility.admissible {
        let rep = cfg.report("certify", settings, result);
        report::emit(cfg.format, &rep, report::certify_text)?;
        return Ok(EXIT_REJECTED);
    }

    let opts = CertifyOptions {
        steps_per_unit: cfg.steps,
        tol,
    };
    let CertifyReport {
        verdict,
        stages,
        nesting,
        sample_order,
    } = certify_refine(prob, cand, &schedule, &opts)?;
    let used = schedule.stages.iter().map(|s: &Stage| s.u_count).max().unwrap_or(0);
    result.sampled_controls = sample_order[..used]
        .iter()
        .map(|&i| to_vec(&prob.control_samples()[i]))
        .collect();
    if let (Some(tp), Verdict::Certificate(c)) = (&transformed, &verdict) {
        result.psi_t = Some((&recover_psi_t(tp, &c.lambda, cfg.steps)?).into());
    }
    let code = match verdict {
        Verdict::Certificate(_) => EXIT_OK,
        Verdict::Violation(_) => EXIT_REJECTED,
        Verdict::Marginal(_) => EXIT_MARGINAL,
    };
    result.verdict = Some(verdict);
    result.stages = stages;
    result.nesting = nesting;
    let rep = cfg.report("certify", settings, result);
    report::emit(cfg.format, &rep, report::certify_text)?;
    Ok(code)
}

#[derive(Serialize)]
pub struct TransformResult {
    pub problem_file: String,
}

pub fn transform(cfg: &Config) -> Result<u8> {
    let pf = cfg.load()?;
    let tp = v_change_transform(&pf.problem, &pf.candidate, &DEFAULT_V_GRID)?;
    let text = write_problem(&tp.problem, &tp.candidate)?;
    let mut settings = cfg.settings(&pf)?;
    settings.v_grid = Some(DEFAULT_V_GRID.to_vec());
    let rep = cfg.report("transform", settings, TransformResult { problem_file: text });
    report::emit(cfg.format, &rep, |r, out| {
        out.push_str(&r.result.problem_file);
        Ok(())
    })?;
    Ok(EXIT_OK)
}
