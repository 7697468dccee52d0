fn main() {
    std::process::exit(tatd::cli::run(std::env::args_os()));
}
