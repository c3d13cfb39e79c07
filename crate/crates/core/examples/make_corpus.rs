//! Writes a synthetic restaurant corpus in the ingestion format.
//!
//! Usage: make_corpus <out.jsonl> [n] [seed]

use man_core::synthetic::{aspect_driven_corpus, aspect_names, to_jsonl, to_raw};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(path) = args.first() else {
        eprintln!("usage: make_corpus <out.jsonl> [n] [seed]");
        std::process::exit(1);
    };
    let n = args.get(1).map_or(2000, |s| s.parse().expect("n must be an integer"));
    let seed = args.get(2).map_or(7, |s| s.parse().expect("seed must be an integer"));
    let raws: Vec<_> = aspect_driven_corpus(n, 0.05, seed).iter().map(to_raw).collect();
    std::fs::write(path, to_jsonl(&raws, &aspect_names(4))).expect("write corpus");
}
