fn main() {
    std::process::exit(epochttf::cli::run(std::env::args_os()));
}
