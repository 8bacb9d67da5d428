fn main() {
    prior_forge::cli::init_logging();
    std::process::exit(prior_forge::cli::dispatch(std::env::args_os()));
}
