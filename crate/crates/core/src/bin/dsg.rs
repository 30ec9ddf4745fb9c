fn main() {
    std::process::exit(dsg::cli::run_cli(std::env::args_os()));
}
