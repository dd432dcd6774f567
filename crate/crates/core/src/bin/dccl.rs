fn main() {
    std::process::exit(dccl::cli::run(std::env::args_os()));
}
