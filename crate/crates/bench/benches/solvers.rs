use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vshp_core::linearization::{jacobian, linearize_at, solve_stationary_at_speed};
use vshp_core::mpc::{build_qp, mpc_step_measured, reference_speed, MpcReferences};
use vshp_core::plant::{ControlInputs, PlantParams};
use vshp_core::qp::solve_qp;
use vshp_core::sim::integrate_step;
use vshp_core::{Config, ControlDecision, MpcConfig, StationaryPoint};

fn setup() -> (PlantParams, StationaryPoint, MpcConfig) {
    let config = Config::default();
    let params = config.plant_params().unwrap();
    let sp = solve_stationary_at_speed(-0.8, 0.8, reference_speed(0.8), &params, None).unwrap();
    (params, sp, config.mpc)
}

fn bench_qp(c: &mut Criterion) {
    let (params, sp, mpc) = setup();
    let inputs = ControlInputs {
        p_pb: -0.35,
        ..sp.inputs
    };
    let model = linearize_at(&sp.state, &inputs, &params, mpc.dt).unwrap();
    let refs = MpcReferences {
        omega: reference_speed(0.75),
    };
    let problem = build_qp(&model, &[0.0; 6], &inputs.to_array(), &refs, &mpc).unwrap();
    let cold = solve_qp(&problem, None).unwrap();

    let mut group = c.benchmark_group("qp");
    group.sample_size(20);
    group.bench_function("controller_qp_cold", |b| {
        b.iter(|| solve_qp(black_box(&problem), None).unwrap())
    });
    group.bench_function("controller_qp_warm", |b| {
        b.iter(|| solve_qp(black_box(&problem), Some(&cold.z)).unwrap())
    });
    group.finish();
}

fn bench_mpc_step(c: &mut Criterion) {
    let (params, sp, mpc) = setup();
    let prev = ControlDecision::initial(sp.inputs.g_star, 0.8);
    let mut group = c.benchmark_group("mpc");
    group.sample_size(20);
    group.bench_function("step_after_load_reduction", |b| {
        b.iter(|| mpc_step_measured(black_box(&sp.state), -0.35, 0.75, &prev, &params, &mpc).unwrap())
    });
    group.finish();
}

fn bench_plant(c: &mut Criterion) {
    let (params, sp, _) = setup();
    let inputs = ControlInputs {
        p_pb: -0.5,
        ..sp.inputs
    };
    c.bench_function("rk4_step", |b| {
        b.iter(|| integrate_step(black_box(&sp.state), &inputs, &params, 0.01).unwrap())
    });
    c.bench_function("jacobian", |b| {
        b.iter(|| jacobian(black_box(&sp.state.to_array()), &inputs.to_array(), &params).unwrap())
    });
}

criterion_group!(benches, bench_qp, bench_mpc_step, bench_plant);
criterion_main!(benches);
