fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SOILNET_LOG", "info")).init();
    std::process::exit(soilnet::cli::run(std::env::args_os()));
}
