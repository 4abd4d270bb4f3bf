use proptest::prelude::*;
use vshp_core::linearization::{jacobian, linearize, solve_stationary};
use vshp_core::plant::{
    calibrate_rated_point, converter_power, plant_deriv, plant_eval, rated_state, ControlInputs, PlantParams,
};
use vshp_core::Config;

fn params() -> PlantParams {
    Config::default().plant_params().unwrap()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn calibration_is_idempotent() {
    let once = calibrate_rated_point(&PlantParams::default()).unwrap();
    let twice = calibrate_rated_point(&once).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn rated_point_is_an_equilibrium_of_the_calibrated_plant() {
    let p = params();
    let inputs = ControlInputs {
        p_g_star: 1.0,
        p_pb: -1.0,
        g_star: 1.0,
    };
    let (d, out) = plant_eval(&rated_state(&p), &inputs, &p).unwrap();
    assert!(inf_norm(&d) <= 1e-9, "{d:?}");
    assert!((out.p_m - 1.0).abs() <= 1e-9);
}

#[test]
fn balanced_demand_leaves_frequency_at_nominal() {
    let p = params();
    for p_g_star in [0.3, 0.5, 0.7, 0.9] {
        let sp = solve_stationary(-p_g_star, p_g_star, &p).unwrap();
        assert!(
            sp.state.delta_f.abs() <= 1e-10,
            "p_g* {p_g_star}: df {}",
            sp.state.delta_f
        );
        assert_eq!(sp.inputs.g_star, sp.state.g);
        assert_eq!(sp.inputs.p_pb, -p_g_star);
    }
}

#[test]
fn stationary_linear_model_has_no_drift() {
    let p = params();
    let sp = solve_stationary(-0.6, 0.7, &p).unwrap();
    let model = linearize(&sp, &p, 0.2).unwrap();
    assert!(model.drift.amax() <= 0.2 * 1e-8);
    let (_, out) = plant_eval(&sp.state, &sp.inputs, &p).unwrap();
    assert_eq!(model.y_s.as_slice(), &[out.p_g, out.h, out.p_m]);
    assert!(model.warnings.is_empty());
}

#[test]
fn swing_row_with_pure_droop() {
    let mut p = params();
    p.vsg.k_vsg_d = 0.0;
    let sp = solve_stationary(-0.8, 0.8, &p).unwrap();
    let jac = jacobian(&sp.state.to_array(), &sp.inputs.to_array(), &p).unwrap();
    let expected = p.grid.omega_s / (2.0 * p.grid.h_grid * p.grid.s_n);
    assert!((jac.b_c[(0, 1)] - expected).abs() <= 1e-8);
    assert!((jac.a_c[(0, 0)] + expected * (p.vsg.k_vsg_p + p.grid.d_m)).abs() <= 1e-6);
}

#[test]
fn perturbing_the_disturbance_only_moves_frequency_instantly() {
    let mut p = params();
    p.vsg.k_vsg_d = 0.0;
    let sp = solve_stationary(-0.8, 0.8, &p).unwrap();
    let mut inputs = sp.inputs;
    inputs.p_pb += 0.01;
    let d = plant_deriv(&sp.state, &inputs, &p).unwrap();
    assert!((d[0] - 0.01 / (2.0 * 25.35)).abs() <= 1e-9);
    assert!(inf_norm(&d[1..]) <= 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn converter_loop_matches_fixed_point_iteration(
        delta_f in -0.01f64..0.01,
        p_g_star in 0.0f64..1.0,
        p_pb in -1.0f64..0.0,
        k_p in 10.0f64..200.0,
        k_d in 0.0f64..20.0,
    ) {
        let mut p = params();
        p.vsg.k_vsg_p = k_p;
        p.vsg.k_vsg_d = k_d;
        let (vsg, grid) = (p.vsg, p.grid);
        let c = grid.omega_s / (2.0 * grid.h_grid * grid.s_n);
        // iterate p_g = vsg(df, swing(p_g)); contraction factor k_d c < 1
        let mut p_g = p_g_star;
        for _ in 0..500 {
            let f_dot = c * (p_g + p_pb - grid.d_m * delta_f);
            p_g = p_g_star - k_p * delta_f - k_d * f_dot;
        }
        let clamped = p_g.clamp(vsg.p_g_min, vsg.p_g_max);
        let f_dot = c * (clamped + p_pb - grid.d_m * delta_f);
        let (got, got_dot, was_clamped) = converter_power(delta_f, p_g_star, p_pb, &vsg, &grid);
        prop_assert!((got - clamped).abs() <= 1e-12);
        prop_assert!((got_dot - f_dot).abs() <= 1e-12);
        prop_assert_eq!(was_clamped, p_g <= vsg.p_g_min || p_g >= vsg.p_g_max);
    }

    #[test]
    fn stationary_points_are_equilibria(p_g_star in 0.25f64..0.85, imbalance in -0.1f64..0.1) {
        let p = params();
        let sp = solve_stationary(-p_g_star + imbalance, p_g_star, &p).unwrap();
        let d = plant_deriv(&sp.state, &sp.inputs, &p).unwrap();
        prop_assert!(inf_norm(&d) <= 1e-8, "{:?}", d);
        prop_assert!((sp.state.omega - p.generator.omega_ref).abs() <= 1e-12);
    }
}
