//! Regenerates the bundled micro-corpus:
//! `cargo run -p handmotion-cli --example make_fixtures [DIR]`.

use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/micro"));
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    handmotion_cli::fixtures::write_micro_corpus(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
