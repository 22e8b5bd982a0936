fn main() -> std::process::ExitCode {
    fibrescan::cli::main()
}
