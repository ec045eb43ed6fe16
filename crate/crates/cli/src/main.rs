fn main() {
    std::process::exit(srs_anon_cli::dispatch(std::env::args_os()));
}
