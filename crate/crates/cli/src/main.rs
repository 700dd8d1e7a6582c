use clap::Parser;

fn main() {
    let cli = capmono::app::Cli::parse();
    std::process::exit(capmono::app::execute(cli));
}
