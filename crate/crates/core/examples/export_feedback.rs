//! Turns the service's feedback log into a training corpus, one accepted
//! segmentation per line. Records that alter characters are skipped.
//!
//!     cargo run --example export_feedback -- feedback.jsonl > corpus.txt

fn main() {
    let log = std::env::args().nth(1).unwrap_or_else(|| "feedback.jsonl".into());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match segrt::server::export_feedback(log.as_ref(), &mut out) {
        Ok(r) => eprintln!("exported={} corrupt={} empty={}", r.exported, r.corrupt, r.empty),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    }
}
