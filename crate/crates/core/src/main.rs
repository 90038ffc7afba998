fn main() {
    std::process::exit(nrm::cli::run(std::env::args_os()));
}
