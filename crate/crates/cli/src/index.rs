use anyhow::Result;
use clap::Args;
use std::path::PathBuf;

use suitegap_core::retriever::build_index;

#[derive(Args)]
pub struct IndexArgs {
    /// Root of the source tree to index
    #[arg(long)]
    root: PathBuf,
    /// Glob for files to include, relative to the root; repeatable.
    /// No globs means every file.
    #[arg(long = "glob")]
    globs: Vec<String>,
    /// Where to write the index file
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: IndexArgs) -> Result<i32> {
    let (index, report) = build_index(&args.root, &args.globs)?;
    index.save(&args.out)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    eprintln!(
        "indexed {} files into {} chunks at {}",
        report.files_indexed,
        index.chunks().len(),
        args.out.display()
    );
    Ok(0)
}
