//! Runs the segmentation service. Without model files it starts degraded
//! and answers 503; with them, SIGHUP reloads the files in place.
//!
//!     cargo run --release --example serve -- [model.segm model.sgemb] [port]
//!     curl -s localhost:8080/v1/segment -d '{"text":"아버지가방에들어가신다"}'
//!     curl -s localhost:8080/v1/health

use std::path::PathBuf;

use segrt::server::{serve, ServerConfig};

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = ServerConfig::default();
    let rest = match &args[..] {
        [m, e, rest @ ..] if m.parse::<u16>().is_err() => {
            config.model = Some(PathBuf::from(m));
            config.embeddings = Some(PathBuf::from(e));
            rest
        }
        rest => rest,
    };
    if let Some(port) = rest.first() {
        config.port = port.parse().expect("numeric port");
    }
    if let Err(e) = serve(config).await {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
