//! Regenerates the bundled synthetic dataset.
//!
//! `cargo run -p icl-gr --example gen_synthetic -- [out_dir]`

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use icl_gr::corpus::write_queries;
use icl_gr::synth::{synth_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/synthetic"));
    fs::create_dir_all(&out)?;
    let data = synth_dataset(&SynthConfig::default())?;
    data.corpus
        .write_jsonl(BufWriter::new(File::create(out.join("corpus.jsonl"))?))?;
    write_queries(
        &data.queries,
        BufWriter::new(File::create(out.join("queries.jsonl"))?),
    )?;
    println!(
        "wrote {} documents and {} queries to {}",
        data.corpus.len(),
        data.queries.len(),
        out.display()
    );
    Ok(())
}
