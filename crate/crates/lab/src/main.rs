use clap::Parser;
use spcoal::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => print!("{}", out.stdout),
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).expect("error report serialises"));
            std::process::exit(report.exit_code);
        }
    }
}
