use renewal_hj_core::harness::{run_scenario, HarnessOptions};
use renewal_hj_core::scenario::{bundled, Scenario};

fn main() {
    let name = std::env::args().nth(1).unwrap_or("s2-symmetric-gaussian".into());
    let t0 = std::time::Instant::now();
    let sc = Scenario::build(bundled(&name).unwrap()).unwrap();
    let run = run_scenario(&sc, &HarnessOptions { out_dir: None, workers: 3 }).unwrap();
    println!("== {name} in {:.1?} ==", t0.elapsed());
    for c in &run.report.criteria {
        println!("[{:>2}] {:?} {}", c.id, c.status, c.description);
        for (k, v) in &c.measured {
            println!("      {k} = {v:.6e}");
        }
    }
    println!("clamps={} soft={} halts={:?}", run.report.clamp_events_total, run.report.soft_breaches_total, run.report.halts);
}
