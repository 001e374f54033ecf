fn main() {
    std::process::exit(pmslt_core::cli::run(std::env::args_os()));
}
