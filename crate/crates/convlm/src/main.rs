fn main() {
    std::process::exit(convlm::cli::run_from_env());
}
