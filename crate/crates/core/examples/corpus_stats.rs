//! Writes a small corpus, loads it through a manifest and prints the
//! dataset statistics next to the bundled reference rows.
//!
//! With a manifest path as the first argument the splits listed there are
//! used instead.

use std::env;
use std::path::PathBuf;

use metaphor_detect::corpus::{compute_stats, reference_stats, SplitManifest, REFERENCE_STATS};
use metaphor_detect::toy::{ToyConfig, ToyWorld};

fn main() {
    let tmp;
    let manifest_path = match env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            tmp = tempfile::tempdir().unwrap();
            let mut world = ToyWorld::new(ToyConfig::default());
            let train = world.split("train", 300, 0.3);
            let test = world.split("test", 80, 0.3);
            world
                .write_corpus(tmp.path(), &[("train", &train), ("test", &test)])
                .unwrap()
        }
    };
    let manifest = SplitManifest::load(&manifest_path).unwrap();
    println!(
        "{:<16} {:>8} {:>7} {:>9} {:>6}",
        "split", "targets", "%M", "sentences", "len"
    );
    for name in manifest.splits.keys() {
        let (_, loaded) = manifest.load_named(name).unwrap();
        for d in &loaded.diagnostics {
            eprintln!("{name}: {d}");
        }
        let s = compute_stats(&loaded.samples).unwrap();
        let check = reference_stats(name).map(|r| {
            if r.matches(&s) {
                "  matches reference"
            } else {
                "  differs from reference"
            }
        });
        println!(
            "{name:<16} {:>8} {:>7.2} {:>9} {:>6.1}{}",
            s.n_targets,
            s.pct_metaphor,
            s.n_sentences,
            s.avg_len,
            check.unwrap_or("")
        );
    }

    println!("\nreference statistics of the public corpora:");
    for r in REFERENCE_STATS.iter() {
        println!(
            "{:<16} {:>8} {:>7.2} {:>9} {:>6.1}",
            r.name, r.n_targets, r.pct_metaphor, r.n_sentences, r.avg_len
        );
    }
}
