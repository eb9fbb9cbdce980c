fn main() {
    std::process::exit(clusterre_cli::run(std::env::args_os()));
}
