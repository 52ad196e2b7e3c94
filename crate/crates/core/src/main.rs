use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    driftcomp::training::configure_threads_from_env();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let stdin = io::stdin();
    let (stdout, stderr) = (io::stdout(), io::stderr());
    let mut io = driftcomp::cli::Io {
        stdin: &mut stdin.lock(),
        stdout: &mut stdout.lock(),
        stderr: &mut stderr.lock(),
    };
    let code = driftcomp::cli::main_with(&argv, &mut io);
    let _ = io.stdout.flush();
    ExitCode::from(code as u8)
}
