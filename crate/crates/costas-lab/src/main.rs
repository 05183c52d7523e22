fn main() {
    std::process::exit(costas_lab::cli::run(std::env::args_os()));
}
