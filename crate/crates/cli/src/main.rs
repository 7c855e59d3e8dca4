fn main() {
    std::process::exit(shiftshare_cli::run(std::env::args_os()));
}
