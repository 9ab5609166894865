//! Writes a synthetic corpus in the on-disk layout the CLI reads: one TSV
//! per split, a manifest and the matching stub encoder description.
//!
//!     cargo run --example write_toy_corpus -- /tmp/toy

use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "toy-corpus".into());
    let mut world = ToyWorld::new(ToyConfig { seed: 1, ..Default::default() });
    let train = world.split("train", 300, 0.3);
    let dev = world.split("dev", 80, 0.3);
    let test = world.split("test", 80, 0.3);
    let manifest = world
        .write_corpus(dir.as_ref(), &[("train", &train), ("dev", &dev), ("test", &test)])
        .unwrap();
    println!("wrote {}", manifest.display());
    println!("encoder {}, {} vocabulary entries", world.description().name, world.description().vocab.len());
}
