fn main() {
    std::process::exit(sfmgtl::cli::dispatch(std::env::args_os()));
}
