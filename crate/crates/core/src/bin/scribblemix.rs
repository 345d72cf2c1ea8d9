fn main() -> std::process::ExitCode {
    scribblemix::harness::cli::main()
}
