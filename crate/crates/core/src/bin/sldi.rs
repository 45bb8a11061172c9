use clap::Parser;

fn main() {
    let cli = sldi::cli::Cli::parse();
    match sldi::cli::run(cli) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
