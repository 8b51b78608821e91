use clap::Parser;

fn main() {
    let cli = ehrseq_cli::Cli::parse();
    if let Err(e) = ehrseq_cli::run(cli) {
        eprintln!("ehrseq: {e}");
        std::process::exit(e.exit_code());
    }
}
