//! Prints the summary the `inspect` subcommand shows for a checkpoint.
//!
//! cargo run --release --example inspect_checkpoint -- [ckpt]

fn main() -> arflow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("toy.arfckpt").display().to_string());
    print!("{}", arflow::cli::cmd_inspect(path.as_ref())?);
    Ok(())
}
