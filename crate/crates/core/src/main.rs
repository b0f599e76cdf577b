fn main() {
    std::process::exit(tabreduce::cli::run_command(std::env::args_os()));
}
