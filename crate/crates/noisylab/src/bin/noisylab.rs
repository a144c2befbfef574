fn main() {
    std::process::exit(noisylab::cli::run(std::env::args_os()));
}
