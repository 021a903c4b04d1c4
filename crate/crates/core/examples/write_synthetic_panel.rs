//! Writes the default synthetic panel as `<asset>.csv` files.
//!
//! `cargo run -p vcvforge --example write_synthetic_panel -- data/synthetic`

use std::path::PathBuf;

use vcvforge::synthetic::{generate_panel, write_price_dir, PanelSpec};

fn main() -> vcvforge::Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| "data/synthetic".into());
    let table = generate_panel(&PanelSpec::default())?;
    write_price_dir(&table, &dir)?;
    println!(
        "wrote {} assets to {}",
        table.asset_ids.len(),
        dir.display()
    );
    Ok(())
}
