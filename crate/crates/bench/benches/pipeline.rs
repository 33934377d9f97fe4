use std::collections::HashMap;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;

use pmpcert_core::certify::{certify_refine, CertifyOptions, RefinementSchedule};
use pmpcert_core::needle::{NeedleSpec, Sensitivity};
use pmpcert_core::problem_file::parse_problem;
use pmpcert_core::timefree::{v_change_transform, DEFAULT_V_GRID};
use pmpcert_core::{parse, CandidateProcess};

const STEPS: usize = 1000;
const E1: &str = include_str!("../../cli/fixtures/e1.prob");
const DI: &str = include_str!("../../cli/fixtures/double_integrator.prob");

fn expressions(c: &mut Criterion) {
    let e = parse("sin(x1) * exp(-x2^2) + tanh(u1) / (2 + cos(x1))").unwrap();
    let env: HashMap<&str, f64> = [("x1", 0.3), ("x2", -0.7), ("u1", 0.5)].into_iter().collect();
    c.bench_function("parse", |b| b.iter(|| parse("sin(x1) * exp(-x2^2) + tanh(u1) / (2 + cos(x1))").unwrap()));
    c.bench_function("eval", |b| b.iter(|| e.eval(&env).unwrap()));
    c.bench_function("eval_dual", |b| b.iter(|| e.eval_dual(&env, "x1").unwrap()));
}

fn simulation(c: &mut Criterion) {
    let pf = parse_problem(DI, STEPS).unwrap();
    let control = pf.candidate.control().clone();
    let x0 = pf.candidate.initial_state().clone();
    c.bench_function("simulate double integrator", |b| {
        b.iter(|| CandidateProcess::simulate(&pf.problem, control.clone(), x0.clone(), STEPS).unwrap())
    });
    let needles: Vec<NeedleSpec> = (1..32)
        .map(|k| NeedleSpec::new(2.0 * k as f64 / 32.0, DVector::from_element(1, 1.0)))
        .collect();
    c.bench_function("sensitivity, 31 needles", |b| {
        b.iter(|| Sensitivity::new(&pf.problem, &pf.candidate, STEPS, &needles).unwrap())
    });
}

fn certification(c: &mut Criterion) {
    let opts = CertifyOptions::default();
    let e1 = parse_problem(E1, STEPS).unwrap();
    let schedule = RefinementSchedule::default_for(e1.problem.control_samples().len());
    c.bench_function("certify E1", |b| {
        b.iter(|| certify_refine(&e1.problem, &e1.candidate, &schedule, &opts).unwrap())
    });

    let di = parse_problem(DI, STEPS).unwrap();
    let tp = v_change_transform(&di.problem, &di.candidate, &DEFAULT_V_GRID).unwrap();
    let schedule = RefinementSchedule::default_for(tp.problem.control_samples().len());
    let mut group = c.benchmark_group("time optimal");
    group.sample_size(10);
    group.bench_function("certify double integrator", |b| {
        b.iter(|| certify_refine(&tp.problem, &tp.candidate, &schedule, &opts).unwrap())
    });
    group.finish();
}

criterion_group!(benches, expressions, simulation, certification);
criterion_main!(benches);
