use pqc::cli::{run, WORKERS_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("{WORKERS_ENV}={n} ignored: {e}");
        }
    }
    std::process::exit(run(std::env::args_os()));
}
