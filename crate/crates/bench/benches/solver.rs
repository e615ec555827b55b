use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flowbot_core::actuator::{solve_rig, ActuatorModel, Direction, Drive};
use flowbot_core::assembly::{enumerate_configurations, solve_assembly, KAPPA_ZERO};
use flowbot_core::mocap::{fit_arc, synthesize_markers};
use flowbot_core::{AssemblySpec, Fluid, GripperAssembly, QuadrupedAssembly, SolverSettings};

fn steady(c: &mut Criterion) {
    let s = SolverSettings::default();
    let m = ActuatorModel::default();
    let air = Fluid::air_20c();
    c.bench_function("rig_air_2bar", |b| {
        b.iter(|| solve_rig(black_box(&m), &air, Drive::Pressure { pressure: 2e5 }, Direction::Forward, &s).unwrap())
    });
    let gripper = AssemblySpec::Gripper(GripperAssembly::default());
    c.bench_function("gripper_steady", |b| b.iter(|| solve_assembly(black_box(&gripper), &s).unwrap()));
    let quad = AssemblySpec::Quadruped(QuadrupedAssembly::default());
    c.bench_function("quadruped_steady", |b| b.iter(|| solve_assembly(black_box(&quad), &s).unwrap()));
}

fn enumeration(c: &mut Criterion) {
    let s = SolverSettings::default();
    let g = GripperAssembly::default();
    let mut group = c.benchmark_group("enumeration");
    group.sample_size(10);
    group.bench_function("grid_5", |b| {
        b.iter(|| enumerate_configurations(black_box(&g), &[0.0, 0.25, 0.5, 0.75, 1.0], &s, KAPPA_ZERO).unwrap())
    });
    group.finish();
}

fn arc_fit(c: &mut Criterion) {
    let pts = synthesize_markers(25.0, 0.05, 4).unwrap();
    c.bench_function("fit_arc_4", |b| b.iter(|| fit_arc(black_box(&pts)).unwrap()));
}

criterion_group!(benches, steady, enumeration, arc_fit);
criterion_main!(benches);
