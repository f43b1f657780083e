// development probe: library build statistics and velocity scales
use strider_core::library::*;
use strider_core::mechanics::*;

fn main() {
    let t0 = std::time::Instant::now();
    let model = build_compass_gait(&compass_gait_defaults()).unwrap();
    let cfg = LibraryConfig::compass_defaults();
    let lib = build_library(&model, &cfg).unwrap();
    println!("build time: {:?}", t0.elapsed());
    println!("configs: {}", lib.configs.len());
    println!("primitives: {}", lib.primitives.len());
    println!("trees: {}", lib.trees.len());
    for w in &lib.meta.warnings {
        println!("warning: {w}");
    }
    let sizes: Vec<usize> = lib.trees.values().map(|t| t.len()).collect();
    let min = sizes.iter().min().unwrap_or(&0);
    let max = sizes.iter().max().unwrap_or(&0);
    println!("tree sizes: min {min} max {max}");
    let overflow: usize = lib.trees.values().map(|t| t.overflow_len()).sum();
    println!("overflow entries: {overflow}");

    // Flat symmetric steps: fixed point v* = delta^2 Psi_f / (1 - delta^2 Gamma_f)
    println!("\nflat-step fixed points (start cfg with y_f = 0):");
    for cfg_rec in &lib.configs {
        if cfg_rec.y_f != 0.0 {
            continue;
        }
        for (key, tree) in &lib.trees {
            if key.0 != cfg_rec.id {
                continue;
            }
            for pid in tree.member_ids() {
                let p = lib.primitive(pid).unwrap();
                if p.y_f != 0.0 || p.end_config != cfg_rec.id {
                    continue;
                }
                let d2 = p.delta * p.delta;
                let denom = 1.0 - d2 * p.keys.gamma_f;
                if denom.abs() < 1e-12 {
                    continue;
                }
                let v_star = d2 * p.keys.psi_f / denom;
                if v_star > 0.0 {
                    let v_c = p.keys.gamma_c * v_star + p.keys.psi_c;
                    let v_f = p.keys.gamma_f * v_star + p.keys.psi_f;
                    println!(
                        "  prim {pid} (xf={:.2}) delta={:.4} v*={:.4} v_c={:.4} v_f={:.4} key(a2=0.16)={:.4} res={:.1e}",
                        p.x_f, p.delta, v_star, v_c, v_f, order_key(p, 0.16), p.invariance_residual
                    );
                }
            }
        }
    }

    // Envelope sanity on one primitive
    let p = &lib.primitives[0];
    println!("\nprim 0: start {} end {} xf {:.2} yf {:.2}", p.start_config, p.end_config, p.x_f, p.y_f);
    println!("  theta_c {:.4} gamma_c {:.4} psi_c {:.4} gamma_f {:.4} psi_f {:.4} delta {:.4}",
        p.keys.theta_c, p.keys.gamma_c, p.keys.psi_c, p.keys.gamma_f, p.keys.psi_f, p.delta);
    println!("  env x0 {:.3} x1 {:.3} min {:.4} at x0 {:.4} at x1 {:.4}",
        p.envelope.x0, p.envelope.x1, p.envelope.min_height(),
        p.envelope.heights[0], p.envelope.heights[p.envelope.heights.len()-1]);
}
