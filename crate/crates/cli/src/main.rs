fn main() {
    if let Err(e) = tdti_cli::run(std::env::args_os()) {
        eprintln!("{}", tdti_cli::error_line(&e));
        std::process::exit(tdti_cli::exit_code(&e));
    }
}
