use std::fmt::Write as _;

use anyhow::Result;
use serde::Serialize;

use pmpcert_core::certify::{Stage, Verdict};
use pmpcert_core::multipliers::Tolerances;
use pmpcert_core::problem::AdmissibilityReport;

use crate::commands::{CertifyResult, NeedleSensitivity, SimulateResult};
use crate::ReportFormat;

#[derive(Serialize)]
pub struct Report<T> {
    pub schema: u32,
    pub command: &'static str,
    pub problem: String,
    pub settings: Settings,
    pub result: T,
}

/// Everything needed to repeat the computation.
#[derive(Serialize)]
pub struct Settings {
    pub steps_per_unit: usize,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<Stage>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_grid: Option<Vec<f64>>,
    pub control_samples: Vec<Vec<f64>>,
}

pub fn emit<T: Serialize>(
    format: ReportFormat,
    report: &Report<T>,
    text: impl Fn(&Report<T>, &mut String) -> std::fmt::Result,
) -> Result<()> {
    let out = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
        ReportFormat::Text => {
            let mut s = String::new();
            text(report, &mut s)?;
            s
        }
    };
    print!("{out}");
    Ok(())
}

pub fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(", "))
}

fn settings_text(s: &Settings, out: &mut String) -> std::fmt::Result {
    let t = &s.tolerances;
    writeln!(out, "settings:")?;
    writeln!(out, "  steps per unit   {}", s.steps_per_unit)?;
    writeln!(
        out,
        "  tolerances       feas {:e}, active {:e}, slack {:e}, phase-1 {:e}/{:e}, scan {:e}",
        t.feas, t.active, t.slack, t.phase1_feasible, t.phase1_infeasible, t.scan_margin
    )?;
    if let Some(stages) = &s.stages {
        let list: Vec<String> = stages.iter().map(|st| format!("{}x{}", st.theta_count, st.u_count)).collect();
        writeln!(out, "  stages (θ x u)   {}", list.join(", "))?;
    }
    if let Some(cap) = s.u_cap {
        writeln!(out, "  u cap            {cap}")?;
    }
    if let Some(seed) = s.seed {
        writeln!(out, "  seed             {seed}")?;
    }
    if let Some(v) = &s.v_grid {
        writeln!(out, "  speed grid       {}", fmt_vec(v))?;
    }
    writeln!(out, "  control samples  {}", s.control_samples.len())
}

pub fn simulate_text(r: &Report<SimulateResult>, out: &mut String) -> std::fmt::Result {
    let s = &r.result;
    writeln!(out, "interval        [{}, {}]", s.t0, s.t1)?;
    writeln!(out, "initial state   {}", fmt_vec(&s.initial_state))?;
    writeln!(out, "terminal state  {}", fmt_vec(&s.terminal_state))?;
    writeln!(out)?;
    writeln!(out, "{}", s.columns.join(","))?;
    for row in &s.table {
        let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn check_text(r: &Report<AdmissibilityReport>, out: &mut String) -> std::fmt::Result {
    let a = &r.result;
    writeln!(out, "admissible         {}", if a.admissible { "yes" } else { "no" })?;
    writeln!(out, "dynamics residual  {:e}", a.dynamics_residual)?;
    writeln!(out, "K residual         {:e}", a.k_residual)?;
    match a.f_slack {
        Some(f) => writeln!(out, "max F              {f:e}")?,
        None => writeln!(out, "max F              (no inequalities)")?,
    }
    writeln!(out, "tolerance          {:e}", a.tol_feas)
}

pub fn sensitivity_text(r: &Report<Vec<NeedleSensitivity>>, out: &mut String) -> std::fmt::Result {
    for n in &r.result {
        writeln!(out, "needle θ = {}, v = {}", n.theta, fmt_vec(&n.v))?;
        writeln!(out, "  P_eps+        {}", fmt_vec(&n.p_eps))?;
        writeln!(out, "  finite diff   {}  (step {:e}, rel. error {:.2e})", fmt_vec(&n.p_fd), n.fd_step, n.p_rel_error)?;
        writeln!(out, "  G_eps+ (F0)   {}", n.g_eps)?;
        writeln!(out, "  finite diff   {}  (rel. error {:.2e})", n.g_fd, n.g_rel_error)?;
    }
    settings_text(&r.settings, out)
}

pub fn certify_text(r: &Report<CertifyResult>, out: &mut String) -> std::fmt::Result {
    let c = &r.result;
    if !c.admissibility.admissible {
        writeln!(out, "verdict: inadmissible candidate")?;
        writeln!(
            out,
            "  dynamics residual {:e}, K residual {:e}, tolerance {:e}",
            c.admissibility.dynamics_residual, c.admissibility.k_residual, c.admissibility.tol_feas
        )?;
        return settings_text(&r.settings, out);
    }
    if c.time_transformed {
        writeln!(out, "free end times handled by the change of time")?;
    }
    match &c.verdict {
        Some(Verdict::Certificate(cert)) => {
            writeln!(out, "verdict: certificate")?;
            writeln!(out, "  alpha0               {}", cert.lambda.alpha0)?;
            writeln!(out, "  alpha                {}", fmt_vec(&cert.lambda.alpha))?;
            writeln!(out, "  beta                 {}", fmt_vec(&cert.lambda.beta))?;
            writeln!(out, "  worst needle slack   {:e}", cert.worst_slack)?;
            writeln!(out, "  max row residual     {:e}", cert.max_row_violation)?;
            writeln!(out, "  H(t0)                {}", cert.hamiltonian_t0)?;
            writeln!(out, "  H constancy          {:e}", cert.constancy_residual)?;
            writeln!(out, "  H max jump           {:e}", cert.max_jump)?;
            writeln!(
                out,
                "  universal scan       margin {:e} at t = {}, v = {}",
                cert.scan.margin,
                cert.scan.theta,
                fmt_vec(&cert.scan.v)
            )?;
        }
        Some(Verdict::Violation(v)) => {
            writeln!(out, "verdict: violation at stage {}", v.stage)?;
            writeln!(out, "  phase-1 optimum      {:e}", v.phase1)?;
            writeln!(out, "  sign pattern         {}", fmt_vec(&v.pattern))?;
            for w in &v.witnesses {
                writeln!(
                    out,
                    "  witness              θ = {}, v = {}, best slack {:e}",
                    w.theta,
                    fmt_vec(&w.v),
                    w.best_slack
                )?;
            }
            writeln!(
                out,
                "  Farkas check         min weight {:e}, min combination {:e}, rhs {:e}",
                v.farkas.check.min_weight, v.farkas.check.min_combination, v.farkas.check.rhs
            )?;
        }
        Some(Verdict::Marginal(m)) => {
            writeln!(out, "verdict: marginal at stage {}", m.stage)?;
            writeln!(out, "  {}", m.reason)?;
            writeln!(out, "  phase-1 optimum      {:e}", m.phase1)?;
        }
        None => {}
    }
    if let Some(p) = &c.psi_t {
        writeln!(out, "time adjoint")?;
        writeln!(out, "  psi_t                {}", p.psi_t)?;
        writeln!(out, "  variation            {:e}", p.psi_t_variation)?;
        writeln!(out, "  energy residual      {:e}", p.energy_residual)?;
        writeln!(out, "  transversality       {:e}, {:e}", p.transversality_t0, p.transversality_t1)?;
    }
    writeln!(out, "stages:")?;
    for s in &c.stages {
        writeln!(
            out,
            "  {}  θ-grid {:>3}  samples {:>3}  needles {:>5}  phase-1 {:.3e}  {}",
            s.stage,
            s.theta_count,
            s.u_count,
            s.needles,
            s.phase1,
            if s.feasible { "feasible" } else { "infeasible" }
        )?;
    }
    for n in &c.nesting {
        writeln!(out, "  stage {} multipliers on stage {} rows: max violation {:e}", n.later, n.earlier, n.max_violation)?;
    }
    let sampled: Vec<String> = c.sampled_controls.iter().map(|v| fmt_vec(v)).collect();
    writeln!(out, "sampled controls: {}", sampled.join(" "))?;
    settings_text(&r.settings, out)
}
