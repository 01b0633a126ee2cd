fn main() {
    std::process::exit(polarbg_tool::main_with_args(std::env::args_os()));
}
