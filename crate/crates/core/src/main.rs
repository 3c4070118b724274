fn main() -> std::process::ExitCode {
    salens_core::cli::main()
}
