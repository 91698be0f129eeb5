fn main() {
    std::process::exit(pobo_cli::dispatch(std::env::args_os()));
}
