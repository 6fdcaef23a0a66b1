use renewal_hj_core::harness::{run_scenario, HarnessOptions};
use renewal_hj_core::scenario::{bundled, Scenario};
use renewal_hj_core::grid::sup_and_argmax;

fn main() {
    let sc = Scenario::build(bundled("s2-symmetric-gaussian").unwrap()).unwrap();
    let run = run_scenario(&sc, &HarnessOptions { out_dir: None, workers: 3 }).unwrap();
    let limit = run.outputs.hj_limit.as_ref().unwrap();
    for e in &run.outputs.eps_runs {
        // signed constraint gap at t=1
        let s = e.direct.samples.iter().find(|s| (s.t - 1.0).abs() < 1e-9).unwrap();
        let f = e.hj.frame_at(1.0).unwrap();
        let sup = sup_and_argmax(&sc.grid, &f.u).value;
        println!("eps {}: int_rho={:.6} supU_eps={:.6} signed gap={:+.6}", e.epsilon, s.rho_integral, sup, s.rho_integral - sup);
        // where is the sup |U_eps - U_limit| attained?
        let mut best = (0.0f64, 0.0, 0.0);
        for fr in &e.hj.frames {
            if fr.t <= 1e-12 { continue; }
            if let Some(lf) = limit.frame_at(fr.t) {
                for (j, (a, b)) in fr.u.iter().zip(&lf.u).enumerate() {
                    let d = (a - b).abs();
                    if d > best.0 { best = (d, fr.t, sc.grid.node(j)[0]); }
                }
            }
        }
        println!("   sup|U_eps-U_lim| = {:.5} at t={:.2} y={:+.2}", best.0, best.1, best.2);
    }
    // limit constraint identity: int rho should equal sup U for the limit;
    // compare limit sup U growth against the direct rho of smallest eps
    let sup1 = sup_and_argmax(&sc.grid, &limit.frame_at(1.0).unwrap().u).value;
    println!("limit supU(1) = {:.6}", sup1);
}
