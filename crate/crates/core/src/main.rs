fn main() {
    std::process::exit(divdistill::cli::run(std::env::args_os()));
}
