fn main() {
    std::process::exit(tomoprior::cli::run());
}
