// scratch probe for solver behavior (deleted before release)
use dempc_core::discount::DiscountProfile;
use dempc_core::mpc::{Controller, ControllerKind};
use dempc_core::ocp::{solve_smooth, SolverOptions};
use dempc_core::presets;
use dempc_core::simulate::run_closed_loop;
use std::time::Instant;

fn main() {
    let p = presets::oscillator();
    let m = p.model.as_smooth().unwrap();
    let x0 = p.model.embed_state(&p.x0);
    let mut opts = SolverOptions::default();
    opts.multistart = 1;
    opts.seed = 1;

    for (name, disc) in [("constant", DiscountProfile::Constant), ("linear", DiscountProfile::Linear)] {
        let t0 = Instant::now();
        let sol = solve_smooth(m, &x0, 27, &disc, None, &opts).unwrap();
        let rep = p.model.check_feasible(&sol.traj, 0.0);
        println!("{name:9} cold N=27: value={:+.9} status={:?} stat={:.1e} viol={:.1e} [{:.2?}]",
            sol.value, sol.status, sol.stationarity_residual, rep.worst_violation, t0.elapsed());
    }

    for (kind, label, n) in [
        (ControllerKind::Undiscounted1Step, "undisc", 27usize),
        (ControllerKind::Discounted1Step, "disc", 27),
        (ControllerKind::Discounted1Step, "disc", 20),
        (ControllerKind::PStep(6), "pstep6", 19),
    ] {
        let t0 = Instant::now();
        let mut ctrl = Controller::new(kind, n, opts.clone()).unwrap();
        let trace = run_closed_loop(&p.model, &mut ctrl, &p.x0, 60, false).unwrap();
        let lstar = -0.205615697834115;
        if trace.feasible {
            let tail: f64 = trace.stage_costs[54..].iter().sum::<f64>() / 6.0;
            // transient over window [25,30]
            let mut jtr = 0.0;
            for t in 25..=30 {
                let jt: f64 = trace.stage_costs[..t].iter().sum();
                jtr += jt - t as f64 * lstar;
            }
            jtr /= 6.0;
            println!("{label:7} N={n} loop60: aap_gap={:+.6e} jtr={:.6} [{:.2?}]",
                tail - lstar, jtr, t0.elapsed());
        } else {
            println!("{label:7} N={n} loop60: HALTED at {:?} [{:.2?}]", trace.halted_at, t0.elapsed());
        }
    }
}
