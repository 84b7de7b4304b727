fn main() -> std::process::ExitCode {
    hohsmm::cli::main()
}
