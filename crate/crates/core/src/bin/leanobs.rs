fn main() -> std::process::ExitCode {
    lean_observer::cli::main()
}
