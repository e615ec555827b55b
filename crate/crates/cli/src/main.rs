use clap::Parser;

fn main() {
    let cli = flowbot_cli::Cli::parse();
    if let Err(e) = flowbot_cli::run(cli) {
        let kind = e
            .chain()
            .find_map(|c| c.downcast_ref::<flowbot_core::Error>())
            .map_or("error", flowbot_core::Error::kind);
        let report = serde_json::json!({
            "error": { "kind": kind, "message": format!("{e:#}") }
        });
        eprintln!("{report}");
        std::process::exit(1);
    }
}
