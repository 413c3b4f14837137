//! Regenerates the committed toy datasets.
//!
//! Usage: cargo run -p fgim-core --example make_toy_data [-- <root>]
//!
//! Writes `<root>/toy` (single-aspect sentiment, file-per-attribute
//! layout) and `<root>/toy2` (two-aspect, tsv layout). Both are
//! deterministic, so rerunning never changes committed files.

use std::path::PathBuf;

use fgim_core::toydata::{sentiment_corpus, two_aspect_corpus, write_file_per_attribute, write_tsv, ToySpec};

fn main() {
    let root = std::env::args().nth(1).map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let spec = ToySpec::default();

    let one = sentiment_corpus(&spec);
    write_file_per_attribute(&one, &root.join("toy"), &["neg", "pos"])
        .expect("writing single-aspect dataset");

    // The larger test split gives 100 held-out sentences per attribute
    // corner.
    let spec2 = ToySpec { n_test: 400, ..spec };
    let two = two_aspect_corpus(&spec2);
    write_tsv(&two, &root.join("toy2")).expect("writing two-aspect dataset");

    println!("wrote toy and toy2 under {}", root.display());
}
