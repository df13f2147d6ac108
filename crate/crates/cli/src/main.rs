fn main() {
    std::process::exit(redress_cli::run(std::env::args_os()));
}
