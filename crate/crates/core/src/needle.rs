//! Needle variations: packets, interval layout, perturbed controls, the
//! endpoint map `P(a, ε)` and its analytic derivatives.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::integrate::{
    integrate_adjoint, integrate_state, integrate_variational, same_time, Linearization, Reference, Trajectory,
};
use crate::problem::{CandidateProcess, ControlProblem, PiecewiseControl};

/// One elementary needle: the control is replaced by `v` on an interval of
/// width `ε` ending at `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedleSpec {
    pub theta: f64,
    pub v: DVector<f64>,
}

impl NeedleSpec {
    pub fn new(theta: f64, v: DVector<f64>) -> Self {
        Self { theta, v }
    }
}

/// Needles sorted by `theta`; equal times keep their insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeedlePacket {
    needles: Vec<NeedleSpec>,
}

impl NeedlePacket {
    pub fn new(mut needles: Vec<NeedleSpec>) -> Self {
        needles.sort_by(|a, b| a.theta.total_cmp(&b.theta));
        Self { needles }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn needles(&self) -> &[NeedleSpec] {
        &self.needles
    }

    pub fn len(&self) -> usize {
        self.needles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.needles.is_empty()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.needles.iter().map(|n| n.theta).collect()
    }

    /// Every `(theta, v)` of `self` also occurs in `other`.
    pub fn is_subset_of(&self, other: &NeedlePacket) -> bool {
        self.needles.iter().all(|a| {
            other
                .needles
                .iter()
                .any(|b| same_time(a.theta, b.theta) && a.v == b.v)
        })
    }
}

/// Nonnegative needle widths.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthVector(Vec<f64>);

impl WidthVector {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        if let Some(i) = eps.iter().position(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::invalid(format!("eps[{i}]"), "widths must be finite and nonnegative"));
        }
        Ok(Self(eps))
    }

    pub fn zeros(s: usize) -> Self {
        Self(vec![0.0; s])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Half-open intervals `(left, right]`, one per needle.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalLayout {
    intervals: Vec<(f64, f64)>,
}

impl IntervalLayout {
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// `τ_i(ε)`, the right end of each interval.
    pub fn right_ends(&self) -> Vec<f64> {
        self.intervals.iter().map(|iv| iv.1).collect()
    }
}

/// Lay out the needle intervals on `[t0, t1]`. Needles sharing a `theta`
/// are stacked leftward: the first ends at `theta`, the next ends where the
/// first begins, and so on.
pub fn layout_intervals(packet: &NeedlePacket, eps: &WidthVector, t0: f64, t1: f64) -> Result<IntervalLayout> {
    let eps = eps.as_slice();
    if eps.len() != packet.len() {
        return Err(Error::Dimension {
            field: "eps".into(),
            expected: packet.len(),
            found: eps.len(),
        });
    }
    let mut intervals = Vec::with_capacity(eps.len());
    // (index, right end) of the right-most nonempty interval laid out so far
    let mut last_nonempty: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < packet.len() {
        let theta = packet.needles[i].theta;
        if !(theta > t0 && theta < t1) {
            return Err(Error::invalid(
                format!("needle[{i}].theta"),
                format!("{theta} not inside ({t0}, {t1})"),
            ));
        }
        let mut group_end = i;
        while group_end < packet.len() && packet.needles[group_end].theta == theta {
            group_end += 1;
        }
        let mut right = theta;
        let mut group_top: Option<(usize, f64)> = None;
        for (j, &width) in eps.iter().enumerate().take(group_end).skip(i) {
            let left = right - width;
            if width > 0.0 {
                if left < t0 && !same_time(left, t0) {
                    return Err(Error::WidthBeforeStart { index: j, left, t0 });
                }
                if let Some((k, prev_right)) = last_nonempty {
                    if left < prev_right && !same_time(left, prev_right) {
                        return Err(Error::WidthOverflow { first: k, second: j });
                    }
                }
                group_top.get_or_insert((j, right));
            }
            intervals.push((left, right));
            right = left;
        }
        if group_top.is_some() {
            last_nonempty = group_top;
        }
        i = group_end;
    }
    Ok(IntervalLayout { intervals })
}

/// `u_ε`: `v_i` on every nonempty interval of the layout, `base` elsewhere.
pub fn perturb_control(base: &PiecewiseControl, layout: &IntervalLayout, packet: &NeedlePacket) -> Result<PiecewiseControl> {
    let active: Vec<(f64, f64, &DVector<f64>)> = layout
        .intervals()
        .iter()
        .zip(packet.needles())
        .filter(|((l, r), _)| r > l)
        .map(|((l, r), n)| (*l, *r, &n.v))
        .collect();
    if active.is_empty() {
        return Ok(base.clone());
    }
    let mut cuts: Vec<f64> = base.breakpoints().to_vec();
    for (l, r, _) in &active {
        cuts.push(*l);
        cuts.push(*r);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| same_time(*a, *b));
    let values = cuts
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            active
                .iter()
                .find(|(l, r, _)| mid > *l && mid < *r)
                .map_or_else(|| base.value_on_step(w[0], w[1]).clone(), |(_, _, v)| (*v).clone())
        })
        .collect();
    PiecewiseControl::new(cuts, values)
}

/// `P(a, ε)`: terminal state under the perturbed control from `a`.
pub fn endpoint_map(
    prob: &ControlProblem,
    base: &PiecewiseControl,
    packet: &NeedlePacket,
    a: &DVector<f64>,
    eps: &WidthVector,
    steps_per_unit: usize,
) -> Result<DVector<f64>> {
    let layout = layout_intervals(packet, eps, base.t0(), base.t1())?;
    let control = perturb_control(base, &layout, packet)?;
    Ok(integrate_state(prob, &control, a, steps_per_unit)?.last().clone())
}

/// Right derivative of `P` along a needle that starts growing at `start`
/// with value `v`: the variational solution from `x̄(start) = Δf(start, v)`.
///
/// With `start = theta` and the unperturbed reference this is `P_ε⁺` at
/// `ε = 0`; for the inner needles of a stack pass the perturbed reference
/// and the current left end of the stack.
pub fn right_derivative_from(reference: &Reference, lin: &Linearization, start: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let jump = reference.delta_f(start, v)?;
    Ok(integrate_variational(lin, start, &jump)?.last().clone())
}

#[derive(Debug, Clone)]
pub struct CompositeDerivatives {
    /// `G_a = g_{x0} - ψ(t0)`.
    pub g_a: DVector<f64>,
    /// `G_ε⁺ = -ψ(θ)·Δf(θ, v)`.
    pub g_eps: f64,
    /// Adjoint with `ψ(t1) = -g_{x1}`.
    pub psi: Trajectory,
}

/// Derivatives of the endpoint map at `(x̂0, 0)` along a reference pair.
#[derive(Debug, Clone)]
pub struct Sensitivity<'p> {
    reference: Reference<'p>,
    lin: Linearization,
}

impl<'p> Sensitivity<'p> {
    /// Re-simulates `cand` on a grid that contains every needle time.
    pub fn new(prob: &'p ControlProblem, cand: &CandidateProcess, steps_per_unit: usize, needles: &[NeedleSpec]) -> Result<Self> {
        let thetas: Vec<f64> = needles.iter().map(|n| n.theta).collect();
        let reference = Reference::from_candidate(prob, cand, steps_per_unit, &thetas)?;
        Self::from_reference(reference)
    }

    pub fn from_reference(reference: Reference<'p>) -> Result<Self> {
        let lin = reference.linearize()?;
        Ok(Self { reference, lin })
    }

    pub fn reference(&self) -> &Reference<'p> {
        &self.reference
    }

    pub fn linearization(&self) -> &Linearization {
        &self.lin
    }

    fn check_theta(&self, needle: &NeedleSpec) -> Result<()> {
        let (t0, t1) = (self.reference.control().t0(), self.reference.control().t1());
        if !(needle.theta > t0 && needle.theta < t1) {
            return Err(Error::invalid("needle.theta", format!("{} not inside ({t0}, {t1})", needle.theta)));
        }
        Ok(())
    }

    /// `P_ε⁺` for one needle at `ε = 0`.
    pub fn needle_right_derivative(&self, needle: &NeedleSpec) -> Result<DVector<f64>> {
        self.check_theta(needle)?;
        right_derivative_from(&self.reference, &self.lin, needle.theta, &needle.v)
    }

    /// `P_a(x̂0, 0) ā`.
    pub fn initial_state_derivative(&self, abar: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(integrate_variational(&self.lin, self.reference.control().t0(), abar)?.last().clone())
    }

    /// Adjoint with terminal value `psi_terminal` on the reference grid.
    pub fn adjoint(&self, psi_terminal: &DVector<f64>) -> Result<Trajectory> {
        integrate_adjoint(&self.lin, psi_terminal)
    }

    /// Derivatives of `G(a, ε) = g(a, P(a, ε))` through the adjoint.
    pub fn composite_derivatives(&self, g: &Expr, needle: &NeedleSpec) -> Result<CompositeDerivatives> {
        self.check_theta(needle)?;
        let prob = self.reference.problem();
        let point = crate::problem::EndpointPoint {
            x0: self.reference.initial_state().clone(),
            x1: self.reference.terminal_state().clone(),
            times: prob
                .time_mode()
                .is_free()
                .then(|| (self.reference.control().t0(), self.reference.control().t1())),
        };
        let grad = prob.endpoint_gradient(g, &point)?;
        let psi = integrate_adjoint(&self.lin, &(-&grad.d_x1))?;
        let g_a = &grad.d_x0 - psi.first();
        let jump = self.reference.delta_f(needle.theta, &needle.v)?;
        let g_eps = -psi.at_node(needle.theta)?.dot(&jump);
        Ok(CompositeDerivatives { g_a, g_eps, psi })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::problem::{EndpointData, TimeMode};

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn packet(items: &[(f64, f64)]) -> NeedlePacket {
        NeedlePacket::new(items.iter().map(|&(t, v)| NeedleSpec::new(t, s(v))).collect())
    }

    fn eps(e: &[f64]) -> WidthVector {
        WidthVector::new(e.to_vec()).unwrap()
    }

    fn single() -> ControlProblem {
        ControlProblem::new(
            1,
            1,
            vec![parse("u1").unwrap()],
            vec![s(-1.0), s(1.0)],
            EndpointData {
                f0: parse("x1_1").unwrap(),
                f: vec![],
                k: vec![parse("x0_1").unwrap()],
            },
            TimeMode::Fixed { t0: 0.0, t1: 1.0 },
        )
        .unwrap()
    }

    fn approx_pair(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn distinct_layout() {
        let l = layout_intervals(&packet(&[(0.3, 1.0), (0.7, 1.0)]), &eps(&[0.1, 0.05]), 0.0, 1.0).unwrap();
        assert!(approx_pair(l.intervals()[0], (0.2, 0.3)));
        assert!(approx_pair(l.intervals()[1], (0.65, 0.7)));
        assert_eq!(l.right_ends(), vec![0.3, 0.7]);
    }

    #[test]
    fn duplicate_layout_stacks_left() {
        let l = layout_intervals(&packet(&[(0.5, 2.0), (0.5, 3.0)]), &eps(&[0.1, 0.2]), 0.0, 1.0).unwrap();
        assert!(approx_pair(l.intervals()[0], (0.4, 0.5)));
        assert!(approx_pair(l.intervals()[1], (0.2, 0.4)));
    }

    #[test]
    fn overflow_is_an_error() {
        let err = layout_intervals(&packet(&[(0.5, 1.0), (0.5, 1.0)]), &eps(&[0.3, 0.3]), 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::WidthBeforeStart { index: 1, .. }), "{err:?}");
        let err = layout_intervals(&packet(&[(0.3, 1.0), (0.5, 1.0)]), &eps(&[0.1, 0.25]), 0.0, 1.0).unwrap_err();
        assert_eq!(err, Error::WidthOverflow { first: 0, second: 1 });
    }

    #[test]
    fn zero_width_needles_are_identities() {
        let base = PiecewiseControl::constant(0.0, 1.0, s(-1.0)).unwrap();
        let p = packet(&[(0.5, 1.0)]);
        let l = layout_intervals(&p, &eps(&[0.0]), 0.0, 1.0).unwrap();
        assert_eq!(perturb_control(&base, &l, &p).unwrap(), base);
    }

    #[test]
    fn perturbed_control_segments() {
        let base = PiecewiseControl::constant(0.0, 1.0, s(-1.0)).unwrap();
        let p = packet(&[(0.5, 1.0)]);
        let l = layout_intervals(&p, &eps(&[0.1]), 0.0, 1.0).unwrap();
        let u = perturb_control(&base, &l, &p).unwrap();
        assert_eq!(u.breakpoints().len(), 4);
        assert!((u.breakpoints()[1] - 0.4).abs() < 1e-15);
        let vals: Vec<f64> = u.values().iter().map(|v| v[0]).collect();
        assert_eq!(vals, vec![-1.0, 1.0, -1.0]);

        let p = packet(&[(0.5, 2.0), (0.5, 3.0)]);
        let l = layout_intervals(&p, &eps(&[0.1, 0.2]), 0.0, 1.0).unwrap();
        let u = perturb_control(&base, &l, &p).unwrap();
        assert_eq!(u.evaluate(0.3).unwrap()[0], 3.0);
        assert_eq!(u.evaluate(0.45).unwrap()[0], 2.0);
        assert_eq!(u.evaluate(0.5).unwrap()[0], 2.0);
        assert_eq!(u.evaluate(0.6).unwrap()[0], -1.0);
    }

    #[test]
    fn endpoint_map_examples() {
        let p = single();
        let base = PiecewiseControl::constant(0.0, 1.0, s(-1.0)).unwrap();
        let pk = packet(&[(0.5, 1.0)]);
        let x = endpoint_map(&p, &base, &pk, &s(0.0), &eps(&[0.1]), 1000).unwrap();
        assert!((x[0] + 0.8).abs() < 1e-12);
        let x = endpoint_map(&p, &base, &pk, &s(0.0), &eps(&[0.0]), 1000).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-12);
        let x = endpoint_map(&p, &base, &pk, &s(0.05), &eps(&[0.0]), 1000).unwrap();
        assert!((x[0] + 0.95).abs() < 1e-12);
    }

    #[test]
    fn single_integrator_derivatives() {
        let p = single();
        let cand = CandidateProcess::simulate(&p, PiecewiseControl::constant(0.0, 1.0, s(-1.0)).unwrap(), s(0.0), 1000).unwrap();
        let needles = [NeedleSpec::new(0.5, s(1.0)), NeedleSpec::new(0.5, s(-1.0))];
        let sens = Sensitivity::new(&p, &cand, 1000, &needles).unwrap();
        assert_eq!(sens.needle_right_derivative(&needles[0]).unwrap()[0], 2.0);
        assert_eq!(sens.needle_right_derivative(&needles[1]).unwrap()[0], 0.0);
        assert_eq!(sens.initial_state_derivative(&s(1.0)).unwrap()[0], 1.0);

        let cd = sens.composite_derivatives(&parse("x1_1").unwrap(), &needles[0]).unwrap();
        assert_eq!(cd.g_eps, 2.0);
        assert_eq!(cd.g_a[0], 1.0);
        let cd = sens.composite_derivatives(&parse("x0_1").unwrap(), &needles[0]).unwrap();
        assert_eq!(cd.g_eps, 0.0);
        assert_eq!(cd.g_a[0], 1.0);
        let cd = sens.composite_derivatives(&parse("x1_1^2").unwrap(), &needles[0]).unwrap();
        assert!((cd.g_eps + 4.0).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_needle() {
        let p = ControlProblem::new(
            2,
            1,
            vec![parse("x2").unwrap(), parse("u1").unwrap()],
            vec![s(-1.0), s(1.0)],
            EndpointData {
                f0: parse("x1_1").unwrap(),
                f: vec![],
                k: vec![],
            },
            TimeMode::Fixed { t0: 0.0, t1: 1.0 },
        )
        .unwrap();
        let cand = CandidateProcess::simulate(
            &p,
            PiecewiseControl::constant(0.0, 1.0, s(1.0)).unwrap(),
            DVector::zeros(2),
            1000,
        )
        .unwrap();
        let needle = NeedleSpec::new(0.5, s(-1.0));
        let sens = Sensitivity::new(&p, &cand, 1000, std::slice::from_ref(&needle)).unwrap();
        let d = sens.needle_right_derivative(&needle).unwrap();
        assert!((d[0] + 1.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12);
        let d = sens.initial_state_derivative(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subset_relation() {
        let small = packet(&[(0.5, 1.0)]);
        let big = packet(&[(0.25, 1.0), (0.5, 1.0), (0.5, -1.0)]);
        assert!(small.is_subset_of(&big));
        assert!(!big.is_subset_of(&small));
    }
}
