fn main() {
    std::process::exit(diff_l2o::cli::dispatch(std::env::args_os()));
}
