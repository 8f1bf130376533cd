//! Writes a small synthetic dataset: `cargo run --example fixtures -- <dir>`.

use flareforge::testkit::{write_dataset, DatasetSpec};

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let spec = DatasetSpec {
        backgrounds: 4,
        width: 320,
        height: 240,
        templates: 3,
        template_size: 256,
    };
    let dirs = write_dataset(&root, &spec).expect("fixture dataset");
    println!("{}", serde_json::to_string_pretty(&dirs).expect("dirs serialize"));
}
