fn main() {
    std::process::exit(pagevault_bench::cli::main(std::env::args_os()));
}
