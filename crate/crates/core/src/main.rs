fn main() {
    let code = alphabox::harness::cli::run(std::env::args_os());
    std::process::exit(code);
}
