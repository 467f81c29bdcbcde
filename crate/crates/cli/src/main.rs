use clap::Parser;
use imtrans_cli::{logging, run, Cli};

fn main() {
    let cli = Cli::parse();
    logging::init(&cli.log_level);
    match run(cli) {
        Ok(out) => {
            println!("{}", out.path.display());
            if let Some(s) = out.summary {
                println!("{s}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
