use clap::Parser;

fn main() {
    let cli = carnot_cli::args::Cli::parse();
    let code = match carnot_cli::run(cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("carnot: {e}");
            2
        }
    };
    std::process::exit(code);
}
