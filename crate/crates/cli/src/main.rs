use std::process::ExitCode;

fn main() -> ExitCode {
    match slicesplat_cli::run(std::env::args_os().collect()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
