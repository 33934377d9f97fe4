//! The multiplier set of a needle packet as a linear feasibility problem.
//!
//! The adjoint `ψ(t; λ)` is linear in `λ = (α₀, α, β)`, so one backward
//! integration per endpoint function gives a basis from which every row of
//! the system is a linear form in `λ`:
//!
//! * transversality at `t0`: `ψ(t0; λ) - l_{x0}(λ) = 0` (`n` rows);
//! * normalisation `α₀ + Σα + Σ σ_k β_k = 1` for a sign pattern `σ` of `β`;
//! * `α_j = 0` for every inactive inequality `F_j < 0`;
//! * one row per needle, `ψ(θ_i; λ)·Δf(θ_i, v_i) <= slack`.
//!
//! Sign constraints `α₀, α, σβ >= 0` become nonnegativity of the LP
//! variables `z = (α₀, α, σβ)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::lp::{self, FarkasCheck, LpOutcome};
use crate::needle::{NeedlePacket, NeedleSpec, Sensitivity};
use crate::problem::{EndpointPoint, EndpointRole};

/// Largest `d(K)` for which sign patterns are enumerated.
pub const MAX_SIGN_PATTERN_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Admissibility of the candidate.
    pub feas: f64,
    /// `F_j < -active` marks an inactive inequality.
    pub active: f64,
    /// Needle-row slack, multiplied by the row's Euclidean norm.
    pub slack: f64,
    /// Phase-1 optimum at or below this is feasible.
    pub phase1_feasible: f64,
    /// Phase-1 optimum above this (for every sign pattern) is infeasible.
    pub phase1_infeasible: f64,
    /// Universal maximum scan margin accepted on a certificate.
    pub scan_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: 1e-6,
            active: 1e-6,
            slack: 1e-7,
            phase1_feasible: 1e-8,
            phase1_infeasible: 1e-5,
            scan_margin: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierTuple {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl MultiplierTuple {
    pub fn new(alpha0: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { alpha0, alpha, beta }
    }

    /// From the stacked vector `(α₀, α, β)`.
    pub fn from_vector(v: &DVector<f64>, dim_f: usize) -> Self {
        Self {
            alpha0: v[0],
            alpha: v.rows(1, dim_f).iter().copied().collect(),
            beta: v.rows(1 + dim_f, v.len() - 1 - dim_f).iter().copied().collect(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            std::iter::once(self.alpha0)
                .chain(self.alpha.iter().copied())
                .chain(self.beta.iter().copied()),
        )
    }

    pub fn len(&self) -> usize {
        1 + self.alpha.len() + self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `α₀ + Σ|α_j| + Σ|β_k|`.
    pub fn l1_norm(&self) -> f64 {
        self.alpha0.abs() + self.alpha.iter().map(|a| a.abs()).sum::<f64>() + self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.to_vector() - other.to_vector()).amax()
    }
}

/// One adjoint solution per endpoint function together with the endpoint
/// gradients at `(x̂0, x̂1)`.
#[derive(Debug, Clone)]
pub struct AdjointBasis {
    pub roles: Vec<EndpointRole>,
    /// `ψ_j` with `ψ_j(t1) = -∂_{x1} g_j`.
    pub psi: Vec<Trajectory>,
    pub values: Vec<f64>,
    pub grad_x0: Vec<DVector<f64>>,
    pub grad_x1: Vec<DVector<f64>>,
    pub grad_t0: Vec<f64>,
    pub grad_t1: Vec<f64>,
    pub dim_f: usize,
    pub dim_k: usize,
}

pub fn compute_adjoint_basis(sens: &Sensitivity) -> Result<AdjointBasis> {
    let reference = sens.reference();
    let prob = reference.problem();
    let point = EndpointPoint {
        x0: reference.initial_state().clone(),
        x1: reference.terminal_state().clone(),
        times: prob
            .time_mode()
            .is_free()
            .then(|| (reference.control().t0(), reference.control().t1())),
    };
    let endpoint = prob.endpoint();
    let mut basis = AdjointBasis {
        roles: Vec::with_capacity(endpoint.len()),
        psi: Vec::with_capacity(endpoint.len()),
        values: Vec::with_capacity(endpoint.len()),
        grad_x0: Vec::with_capacity(endpoint.len()),
        grad_x1: Vec::with_capacity(endpoint.len()),
        grad_t0: Vec::with_capacity(endpoint.len()),
        grad_t1: Vec::with_capacity(endpoint.len()),
        dim_f: endpoint.dim_f(),
        dim_k: endpoint.dim_k(),
    };
    for (role, e) in endpoint.functions() {
        let g = prob.endpoint_gradient(e, &point)?;
        basis.psi.push(sens.adjoint(&(-&g.d_x1))?);
        basis.roles.push(role);
        basis.values.push(g.value);
        basis.grad_x0.push(g.d_x0);
        basis.grad_x1.push(g.d_x1);
        basis.grad_t0.push(g.d_t0);
        basis.grad_t1.push(g.d_t1);
    }
    Ok(basis)
}

impl AdjointBasis {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// `ψ(t; λ) = Σ_j λ_j ψ_j(t)` at a grid node.
    pub fn psi_at(&self, lambda: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.psi[0].dim());
        for (lj, pj) in lambda.iter().zip(&self.psi) {
            out += pj.at_node(t)? * *lj;
        }
        Ok(out)
    }

    /// `ψ(·; λ)` on the whole grid.
    pub fn combine(&self, lambda: &DVector<f64>) -> Trajectory {
        let mut samples = vec![DVector::zeros(self.psi[0].dim()); self.psi[0].samples.len()];
        for (lj, pj) in lambda.iter().zip(&self.psi) {
            for (s, p) in samples.iter_mut().zip(&pj.samples) {
                *s += p * *lj;
            }
        }
        Trajectory {
            grid: self.psi[0].grid.clone(),
            samples,
        }
    }

    /// `l_{x0}(λ)`.
    pub fn l_x0(&self, lambda: &DVector<f64>) -> DVector<f64> {
        combine_vectors(&self.grad_x0, lambda)
    }

    /// `l_{x1}(λ)`.
    pub fn l_x1(&self, lambda: &DVector<f64>) -> DVector<f64> {
        combine_vectors(&self.grad_x1, lambda)
    }

    pub fn l_t0(&self, lambda: &DVector<f64>) -> f64 {
        lambda.iter().zip(&self.grad_t0).map(|(l, g)| l * g).sum()
    }

    pub fn l_t1(&self, lambda: &DVector<f64>) -> f64 {
        lambda.iter().zip(&self.grad_t1).map(|(l, g)| l * g).sum()
    }
}

fn combine_vectors(vs: &[DVector<f64>], lambda: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(vs[0].len());
    for (v, l) in vs.iter().zip(lambda.iter()) {
        out += v * *l;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum RowKind {
    /// Component of `ψ(t0) - l_{x0}`.
    Transversality(usize),
    Normalization,
    /// `α_j = 0` for an inactive inequality.
    Slackness(usize),
    /// Maximum condition for needle `i` of the packet.
    Needle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Eq,
    Le,
}

/// `coeffs · λ (= | <=) rhs`, with `λ = (α₀, α, β)` in natural coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub kind: RowKind,
    pub sense: Sense,
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

impl ConstraintRow {
    pub fn value(&self, lambda: &DVector<f64>) -> f64 {
        self.coeffs.dot(lambda)
    }

    /// Positive when violated.
    pub fn violation(&self, lambda: &DVector<f64>) -> f64 {
        let r = self.value(lambda) - self.rhs;
        match self.sense {
            Sense::Eq => r.abs(),
            Sense::Le => r,
        }
    }
}

/// Pattern-independent data of the multiplier system for one packet.
#[derive(Debug, Clone)]
pub struct MultiplierSystem {
    pub dim_f: usize,
    pub dim_k: usize,
    /// `n x m`: rows of `ψ(t0; λ) - l_{x0}(λ)`.
    pub transversality: DMatrix<f64>,
    /// Indices `j` of inactive inequalities.
    pub inactive: Vec<usize>,
    /// `s x m`: `ψ_j(θ_i)·Δf(θ_i, v_i)`.
    pub needle_coeffs: DMatrix<f64>,
    pub needles: Vec<NeedleSpec>,
    pub tol: Tolerances,
}

impl MultiplierSystem {
    pub fn assemble(sens: &Sensitivity, basis: &AdjointBasis, packet: &NeedlePacket, tol: &Tolerances) -> Result<Self> {
        let reference = sens.reference();
        let t0 = reference.control().t0();
        let m = basis.len();
        let n = basis.psi[0].dim();
        let mut transversality = DMatrix::zeros(n, m);
        for j in 0..m {
            let col = basis.psi[j].at_node(t0)? - &basis.grad_x0[j];
            transversality.set_column(j, &col);
        }
        let inactive = (0..basis.dim_f).filter(|&j| basis.values[1 + j] < -tol.active).collect();
        let mut needle_coeffs = DMatrix::zeros(packet.len(), m);
        for (i, needle) in packet.needles().iter().enumerate() {
            let jump = reference.delta_f(needle.theta, &needle.v)?;
            for j in 0..m {
                let psi = basis.psi[j].at_node(needle.theta)?;
                needle_coeffs[(i, j)] = psi.dot(&jump);
            }
        }
        Ok(Self {
            dim_f: basis.dim_f,
            dim_k: basis.dim_k,
            transversality,
            inactive,
            needle_coeffs,
            needles: packet.needles().to_vec(),
            tol: *tol,
        })
    }

    pub fn num_multipliers(&self) -> usize {
        1 + self.dim_f + self.dim_k
    }

    pub fn needle_rhs(&self, i: usize) -> f64 {
        self.tol.slack * self.needle_coeffs.row(i).norm()
    }

    /// The feasibility problem for sign pattern `σ` of `β`.
    pub fn problem(&self, pattern: &[f64]) -> FeasibilityProblem {
        let m = self.num_multipliers();
        let mut rows = Vec::new();
        for c in 0..self.transversality.nrows() {
            rows.push(ConstraintRow {
                kind: RowKind::Transversality(c),
                sense: Sense::Eq,
                coeffs: self.transversality.row(c).transpose(),
                rhs: 0.0,
            });
        }
        let mut norm = DVector::from_element(m, 1.0);
        for (k, s) in pattern.iter().enumerate() {
            norm[1 + self.dim_f + k] = *s;
        }
        rows.push(ConstraintRow {
            kind: RowKind::Normalization,
            sense: Sense::Eq,
            coeffs: norm,
            rhs: 1.0,
        });
        for &j in &self.inactive {
            let mut e = DVector::zeros(m);
            e[1 + j] = 1.0;
            rows.push(ConstraintRow {
                kind: RowKind::Slackness(j),
                sense: Sense::Eq,
                coeffs: e,
                rhs: 0.0,
            });
        }
        for i in 0..self.needle_coeffs.nrows() {
            rows.push(ConstraintRow {
                kind: RowKind::Needle(i),
                sense: Sense::Le,
                coeffs: self.needle_coeffs.row(i).transpose(),
                rhs: self.needle_rhs(i),
            });
        }
        FeasibilityProblem {
            rows,
            pattern: pattern.to_vec(),
            dim_f: self.dim_f,
            tol: self.tol,
        }
    }
}

/// Rows (a)–(e) for one packet and one sign pattern.
pub fn assemble_constraints(
    sens: &Sensitivity,
    basis: &AdjointBasis,
    packet: &NeedlePacket,
    tol: &Tolerances,
    pattern: &[f64],
) -> Result<FeasibilityProblem> {
    let system = MultiplierSystem::assemble(sens, basis, packet, tol)?;
    if pattern.len() != system.dim_k {
        return Err(Error::Dimension {
            field: "sign pattern".into(),
            expected: system.dim_k,
            found: pattern.len(),
        });
    }
    Ok(system.problem(pattern))
}

#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    pub rows: Vec<ConstraintRow>,
    /// `σ_k ∈ {-1, +1}`; `σ_k β_k >= 0`.
    pub pattern: Vec<f64>,
    pub dim_f: usize,
    pub tol: Tolerances,
}

/// Row of the LP `A z <= b` and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LpRow {
    pub row: usize,
    /// `+1` for `coeffs·λ <= rhs`, `-1` for the mirrored half of an equality.
    pub sign: i8,
}

impl FeasibilityProblem {
    pub fn num_multipliers(&self) -> usize {
        self.rows[0].coeffs.len()
    }

    fn variable_signs(&self) -> DVector<f64> {
        let m = self.num_multipliers();
        let mut s = DVector::from_element(m, 1.0);
        for (k, p) in self.pattern.iter().enumerate() {
            s[1 + self.dim_f + k] = *p;
        }
        s
    }

    /// `λ` from the LP variables `z = (α₀, α, σβ)`.
    pub fn lambda_from_lp(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.variable_signs())
    }

    /// The LP over `z >= 0` with rows restricted by `keep`.
    pub fn to_lp_filtered(&self, keep: impl Fn(usize, &ConstraintRow) -> bool) -> (DMatrix<f64>, DVector<f64>, Vec<LpRow>) {
        let signs = self.variable_signs();
        let m = self.num_multipliers();
        let mut coeffs: Vec<DVector<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut map = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            if !keep(r, row) {
                continue;
            }
            let c = row.coeffs.component_mul(&signs);
            coeffs.push(c.clone());
            rhs.push(row.rhs);
            map.push(LpRow { row: r, sign: 1 });
            if row.sense == Sense::Eq {
                coeffs.push(-c);
                rhs.push(-row.rhs);
                map.push(LpRow { row: r, sign: -1 });
            }
        }
        let mut a = DMatrix::zeros(coeffs.len(), m);
        for (i, c) in coeffs.iter().enumerate() {
            a.set_row(i, &c.transpose());
        }
        (a, DVector::from_vec(rhs), map)
    }

    pub fn to_lp(&self) -> (DMatrix<f64>, DVector<f64>, Vec<LpRow>) {
        self.to_lp_filtered(|_, _| true)
    }

    pub fn residuals(&self, lambda: &DVector<f64>) -> Vec<f64> {
        self.rows.iter().map(|r| r.violation(lambda)).collect()
    }

    /// Minimum of `rows[target]·λ` over the rows selected by `keep` (the
    /// target row itself is always dropped). `None` when that set is empty.
    pub fn minimize_row(&self, target: usize, keep: impl Fn(usize, &ConstraintRow) -> bool) -> Result<Option<(f64, DVector<f64>)>> {
        let (a, b, _) = self.to_lp_filtered(|r, row| r != target && keep(r, row));
        let c = self.rows[target].coeffs.component_mul(&self.variable_signs());
        match lp::minimize(&c, &a, &b, self.tol.phase1_feasible)? {
            LpOutcome::Optimal { x, value } => Ok(Some((value, self.lambda_from_lp(&x)))),
            LpOutcome::Infeasible(_) => Ok(None),
            // the normalisation row bounds every variable
            LpOutcome::Unbounded => Ok(Some((f64::NEG_INFINITY, DVector::zeros(self.num_multipliers())))),
        }
    }
}

/// Farkas certificate over the LP rows of a [`FeasibilityProblem`].
#[derive(Debug, Clone, Serialize)]
pub struct FarkasCertificate {
    pub weights: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub row_kinds: Vec<RowKind>,
    pub check: FarkasSummary,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FarkasSummary {
    pub min_weight: f64,
    pub min_combination: f64,
    pub rhs: f64,
}

impl From<FarkasCheck> for FarkasSummary {
    fn from(c: FarkasCheck) -> Self {
        Self {
            min_weight: c.min_weight,
            min_combination: c.min_combination,
            rhs: c.rhs,
        }
    }
}

impl FarkasCertificate {
    /// Re-check `y >= 0`, `yᵀA >= 0`, `yᵀb < 0` against the problem.
    pub fn verify(&self, fp: &FeasibilityProblem, tol: f64) -> bool {
        let (a, b, _) = fp.to_lp();
        a.nrows() == self.weights.len() && FarkasCheck::new(&a, &b, &DVector::from_column_slice(&self.weights)).holds(tol)
    }

    /// Needle indices carrying positive weight.
    pub fn needle_support(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .row_kinds
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .filter_map(|(k, _)| match k {
                RowKind::Needle(i) => Some(*i),
                _ => None,
            })
            .collect();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone)]
pub enum FeasibilityResult {
    Feasible {
        lambda: MultiplierTuple,
        residuals: Vec<f64>,
        phase1: f64,
        pattern: Vec<f64>,
    },
    Infeasible {
        farkas: FarkasCertificate,
        phase1: f64,
        pattern: Vec<f64>,
    },
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityResult::Feasible { .. })
    }

    pub fn phase1(&self) -> f64 {
        match self {
            FeasibilityResult::Feasible { phase1, .. } | FeasibilityResult::Infeasible { phase1, .. } => *phase1,
        }
    }

    pub fn pattern(&self) -> &[f64] {
        match self {
            FeasibilityResult::Feasible { pattern, .. } | FeasibilityResult::Infeasible { pattern, .. } => pattern,
        }
    }
}

pub fn solve_feasibility(fp: &FeasibilityProblem) -> Result<FeasibilityResult> {
    let (a, b, rows) = fp.to_lp();
    let p1 = lp::phase1(&a, &b)?;
    if p1.objective <= fp.tol.phase1_feasible {
        let lambda = fp.lambda_from_lp(&p1.x);
        return Ok(FeasibilityResult::Feasible {
            residuals: fp.residuals(&lambda),
            lambda: MultiplierTuple::from_vector(&lambda, fp.dim_f),
            phase1: p1.objective,
            pattern: fp.pattern.clone(),
        });
    }
    let check = FarkasCheck::new(&a, &b, &p1.farkas);
    let row_kinds = rows.iter().map(|r| fp.rows[r.row].kind).collect();
    Ok(FeasibilityResult::Infeasible {
        farkas: FarkasCertificate {
            weights: p1.farkas.iter().copied().collect(),
            rows,
            row_kinds,
            check: check.into(),
        },
        phase1: p1.objective,
        pattern: fp.pattern.clone(),
    })
}

/// All sign patterns of `β`, `+1` first in every coordinate.
pub fn sign_patterns(dim_k: usize) -> Result<Vec<Vec<f64>>> {
    if dim_k > MAX_SIGN_PATTERN_DIM {
        return Err(Error::Unsupported(format!(
            "{dim_k} equality constraints; sign-pattern enumeration supports at most {MAX_SIGN_PATTERN_DIM}"
        )));
    }
    Ok((0..1usize << dim_k)
        .map(|bits| (0..dim_k).map(|k| if bits >> k & 1 == 0 { 1.0 } else { -1.0 }).collect())
        .collect())
}

/// Outcome of the enumeration over sign patterns.
#[derive(Debug, Clone)]
pub struct PatternSearch {
    /// First feasible result, or the infeasible one with the smallest
    /// phase-1 optimum.
    pub result: FeasibilityResult,
    /// Phase-1 optimum of every pattern tried, in enumeration order.
    pub phase1_by_pattern: Vec<f64>,
}

pub fn sign_pattern_search(system: &MultiplierSystem) -> Result<PatternSearch> {
    let mut best: Option<FeasibilityResult> = None;
    let mut phase1_by_pattern = Vec::new();
    for pattern in sign_patterns(system.dim_k)? {
        let res = solve_feasibility(&system.problem(&pattern))?;
        phase1_by_pattern.push(res.phase1());
        if res.is_feasible() {
            return Ok(PatternSearch {
                result: res,
                phase1_by_pattern,
            });
        }
        if best.as_ref().is_none_or(|b| res.phase1() < b.phase1()) {
            best = Some(res);
        }
    }
    Ok(PatternSearch {
        result: best.expect("at least one sign pattern"),
        phase1_by_pattern,
    })
}
