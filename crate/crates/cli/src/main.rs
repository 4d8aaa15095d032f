use clap::Parser;

fn main() -> anyhow::Result<()> {
    uu_audit_cli::configure_threads()?;
    uu_audit_cli::run(uu_audit_cli::Cli::parse())
}
