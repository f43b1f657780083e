// development probe: sweep the nominal pre-impact direction and lean family,
// inspecting the flat symmetric steady gait
use nalgebra::DVector;
use strider_core::mechanics::*;
use strider_core::vhc::*;

fn main() {
    let model = build_compass_gait(&compass_gait_defaults()).unwrap();
    let ti = model.theta_index();
    let x_f = 0.45;
    let q_end = impact_configuration(&model, x_f, 0.0, &[]).unwrap();
    let q_start = model.apply_relabel(&q_end);
    let (theta0, thetaf) = (q_start[ti], q_end[ti]);
    println!("theta0 {theta0:.4} thetaf {thetaf:.4}");

    for c in [-1.0, -0.6, -0.3, 0.0, 0.2, 0.4, 0.6] {
        let u_pre = DVector::from_vec(vec![1.0, c]);
        let dm = model.impact_velocity_matrix(&q_end).unwrap();
        let mapped = model.relabel_matrix() * (&dm * &u_pre);
        let delta = mapped[ti];
        if delta <= 0.0 { println!("c={c:+.2}: delta nonpositive"); continue; }
        let start_deriv = mapped.scale(1.0 / delta);
        for lean in [-0.4_f64, 0.0, 0.4] {
            let early = DVector::from_vec(vec![0.0, 0.12 - lean]);
            let late = DVector::from_vec(vec![0.0, -0.12 - lean]);
            let vc = VirtualConstraint::from_boundary(
                theta0, thetaf, &q_start, &q_end, &start_deriv, &u_pre, 5,
                &[early, late], PhaseMode::Coordinate(ti),
            ).unwrap();
            match solve_reduced(&model, &vc, &SolveSettings::default()) {
                Ok(sol) => {
                    let (gc, pc) = sol.at_critical();
                    let (gf, pf) = sol.at_final();
                    let d2 = delta * delta;
                    let denom = 1.0 - d2 * gf;
                    let v_star = if denom.abs() > 1e-12 { d2 * pf / denom } else { f64::NAN };
                    let v_c = gc * v_star + pc;
                    let v_f = gf * v_star + pf;
                    println!("c={c:+.2} lean={lean:+.2}: delta={delta:.3} Gf={gf:.3} Pf={pf:+.3} Gc={gc:.3} Pc={pc:+.3} v*={v_star:+.3} vc(v*)={v_c:+.3} vf(v*)={v_f:+.3}");
                }
                Err(e) => println!("c={c:+.2} lean={lean:+.2}: solve failed: {e}"),
            }
        }
    }
}
