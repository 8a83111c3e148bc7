fn main() -> std::process::ExitCode {
    lsqdiff_cli::run(std::env::args_os())
}
