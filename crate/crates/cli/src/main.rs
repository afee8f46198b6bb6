fn main() {
    std::process::exit(mbnf_cli::run(std::env::args_os()));
}
