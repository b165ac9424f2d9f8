fn main() {
    std::process::exit(reportbias::cli::run(std::env::args_os()));
}
