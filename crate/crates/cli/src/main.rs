use std::process::ExitCode;

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("TFPERF_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: TFPERF_THREADS: {e}");
                    return ExitCode::from(tfperf_cli::EXIT_CONFIG as u8);
                }
            }
            _ => {
                eprintln!("error: TFPERF_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(tfperf_cli::EXIT_CONFIG as u8);
            }
        }
    }
    let mut stdout = std::io::stdout().lock();
    ExitCode::from(tfperf_cli::run(std::env::args_os(), &mut stdout) as u8)
}
