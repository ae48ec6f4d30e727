use std::path::PathBuf;
use std::process::ExitCode;

use scalepop::cli::{parse_config, run_all};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let env_out = std::env::var_os("SCALEPOP_OUT").map(PathBuf::from);
    let invocation = match parse_config(std::env::args_os(), env_out) {
        Ok(inv) => inv,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };

    let mut code = 0u8;
    for (spec, result) in invocation.runs.iter().zip(run_all(&invocation.runs)) {
        match result {
            Ok(summary) if invocation.sweep => println!("{}: {summary}", spec.output_dir.display()),
            Ok(summary) => println!("{summary}"),
            Err(e) => {
                eprintln!("{}: {e}", spec.output_dir.display());
                code = code.max(e.exit_code());
            }
        }
    }
    ExitCode::from(code)
}
