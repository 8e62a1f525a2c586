fn main() {
    std::process::exit(tracevault_cli::run(std::env::args_os()));
}
