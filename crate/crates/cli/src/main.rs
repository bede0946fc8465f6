fn main() {
    std::process::exit(lr2flow_cli::run_cli(std::env::args_os()));
}
