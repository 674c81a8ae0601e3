//! Regenerate the CSV fixtures under data/fixtures/.

use std::fs;
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures");
    fs::create_dir_all(&root).unwrap();
    fs::write(root.join("dataco_50.csv"), sagechain_core::synth::dataco_csv(50, 101)).unwrap();
    fs::write(root.join("shipping_50.csv"), sagechain_core::synth::shipping_csv(50, 102)).unwrap();
    fs::write(
        root.join("smart_logistics_50.csv"),
        sagechain_core::synth::smart_logistics_csv(50, 103),
    )
    .unwrap();
    println!("fixtures written to {}", root.display());
}
