fn main() {
    std::process::exit(pace_cli::run(std::env::args_os()));
}
