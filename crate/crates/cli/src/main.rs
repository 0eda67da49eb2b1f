fn main() {
    std::process::exit(thorax_io::cli::run(std::env::args_os()));
}
