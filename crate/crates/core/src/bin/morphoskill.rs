fn main() {
    let args: Vec<String> = std::env::args().collect();
    env_logger::Builder::new().filter_level(morphoskill::cli::log_level(&args)).init();
    let code = morphoskill::cli::run_cli(args, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
