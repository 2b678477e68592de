fn main() {
    std::process::exit(sa_solver::cli::run(std::env::args_os()));
}
