fn main() {
    std::process::exit(ngcl_cli::run(std::env::args_os()));
}
