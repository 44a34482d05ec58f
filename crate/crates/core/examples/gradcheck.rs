//! Verifies analytic gradients of every layer kind and of the full network
//! against central finite differences.
//!
//!     cargo run --example gradcheck -- [seed ...]

use segrt::segmenter::verify::run_suite;

fn main() {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![0, 1, 2] } else { seeds };
    let started = std::time::Instant::now();
    let mut all_passed = true;
    for r in run_suite(&seeds) {
        println!(
            "{:<22} seed={} max_rel_error={:.3e} tolerance={:.0e} checked={} kinks={} {}",
            r.name,
            r.seed,
            r.report.max_rel_error,
            r.tolerance,
            r.report.checked,
            r.report.skipped_kinks,
            if r.passed() { "ok" } else { "FAIL" }
        );
        all_passed &= r.passed();
    }
    println!("elapsed={:.1}s", started.elapsed().as_secs_f64());
    std::process::exit(if all_passed { 0 } else { 1 });
}
