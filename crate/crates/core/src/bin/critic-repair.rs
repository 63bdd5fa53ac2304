fn main() {
    std::process::exit(critic_repair::cli::main_with_args(std::env::args_os()));
}
