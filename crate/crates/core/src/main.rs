fn main() -> std::process::ExitCode {
    licap::cli::main()
}
