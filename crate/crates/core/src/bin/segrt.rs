use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = catch_unwind(AssertUnwindSafe(|| {
        let stdin = std::io::stdin();
        let mut out = BufWriter::new(std::io::stdout().lock());
        let code = segrt::cli::run(std::env::args_os(), &mut stdin.lock(), &mut out, &mut std::io::stderr());
        match out.flush() {
            Ok(()) => code,
            Err(_) => 1,
        }
    }))
    .unwrap_or(2);
    std::process::exit(code);
}
