// Development probe: generate an instance, solve, report quality and rates.
// Usage: probe <d> <n> <ensemble:er|sf> <factor> <noise_var> <lambda> <time_limit> <seed>

use daglearn::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let d: usize = args[1].parse().unwrap();
    let n: usize = args[2].parse().unwrap();
    let kind = args[3].clone();
    let factor: f64 = args[4].parse().unwrap();
    let var: f64 = args[5].parse().unwrap();
    let lambda: f64 = args[6].parse().unwrap();
    let tl: f64 = args[7].parse().unwrap();
    let seed: u64 = args[8].parse().unwrap();

    let ensemble = if kind == "er" {
        Ensemble::ErdosRenyi { edge_factor: factor }
    } else {
        Ensemble::ScaleFree { attachment: factor as usize }
    };
    let params = InstanceParams { d, n, ensemble, noise: NoiseSpec::Fixed { variance: var }, seed };
    let inst = generate_instance(&params).unwrap();
    eprintln!("true edges: {}", inst.g_true.edge_count());

    let cfg = SolveConfig {
        lambda,
        time_limit: tl,
        gap_tol: 1e-9,
        ..SolveConfig::default()
    };
    let t0 = std::time::Instant::now();
    let report = solve(&inst.data, &cfg).unwrap();
    let wall = t0.elapsed().as_secs_f64();

    let thresholded = threshold_weights(&report.best.w, cfg.delta);
    let m = precision_recall_f1(&thresholded, &inst.w_true).unwrap();
    println!(
        "status={} obj={:.4} dual={:.4} gap={:.4} nodes={} cuts={} updates={} wall={:.1}s pops/s={:.0}",
        report.status.as_str(),
        report.best.objective,
        report.dual_bound,
        report.mip_gap,
        report.node_count,
        report.cut_count,
        report.incumbent_updates,
        wall,
        report.node_count as f64 / wall.max(1e-9)
    );
    println!("shd={} f1={:.4} precision={:.4} recall={:.4}", m.shd, m.f1, m.precision, m.recall);
    for t in report.trajectory.iter().take(3) {
        println!("  traj t={:.2} primal={:.3} dual={:.3} gap={:.4}", t.wall_s, t.primal, t.dual, t.gap);
    }
    if report.trajectory.len() > 6 {
        println!("  ...");
    }
    for t in report.trajectory.iter().rev().take(3).collect::<Vec<_>>().iter().rev() {
        println!("  traj t={:.2} primal={:.3} dual={:.3} gap={:.4}", t.wall_s, t.primal, t.dual, t.gap);
    }
}
