fn main() {
    std::process::exit(ntlrag::cli::run_cli());
}
