fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let code = paraalign_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
