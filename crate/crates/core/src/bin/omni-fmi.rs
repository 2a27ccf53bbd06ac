fn main() {
    std::process::exit(omni_fmi::pipeline::cli::cli_main(std::env::args_os()));
}
