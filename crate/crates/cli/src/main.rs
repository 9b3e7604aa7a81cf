fn main() {
    std::process::exit(vpf_cli::run(std::env::args_os()));
}
