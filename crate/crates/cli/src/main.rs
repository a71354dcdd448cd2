use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = isobench::Cli::parse();
    if let Err(e) = isobench::run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(isobench::exit_code(&e));
    }
}
