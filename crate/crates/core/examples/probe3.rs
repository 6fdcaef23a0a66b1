use renewal_hj_core::harness::{run_scenario, HarnessOptions};
use renewal_hj_core::scenario::{Scenario, ScenarioConfig};
use renewal_hj_core::grid::sup_and_argmax;

fn main() {
    let path = std::env::args().nth(1).unwrap();
    let cfg = ScenarioConfig::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let sc = Scenario::build(cfg).unwrap();
    let t0 = std::time::Instant::now();
    let run = run_scenario(&sc, &HarnessOptions { out_dir: None, workers: 3 }).unwrap();
    println!("{} in {:.0?}", path, t0.elapsed());
    for e in &run.outputs.eps_runs {
        let s = e.direct.samples.iter().find(|s| (s.t - 1.0).abs() < 1e-9).unwrap();
        let f = e.hj.frame_at(1.0).unwrap();
        let sup = sup_and_argmax(&sc.grid, &f.u).value;
        println!("  eps {}: signed gap={:+.5}", e.epsilon, s.rho_integral - sup);
    }
    for c in &run.report.criteria {
        let vals: Vec<String> = c.measured.iter().map(|(k,v)| format!("{k}={v:.4e}")).collect();
        println!("  [{:>2}] {:?} | {}", c.id, c.status, vals.join(" "));
    }
}
