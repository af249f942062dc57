//! `conq aa-validate` and `conq compare`: simulation studies written as tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use conq::eval::{aa_study, compare_methods, AaStudyConfig, AaTable, CompareConfig, Comparison};

use crate::analyze::csv_writer;
use crate::format::num;

pub const AA_FILE: &str = "aa_table.csv";
pub const PVALUES_FILE: &str = "compare_pvalues.csv";
pub const DISCOVERIES_FILE: &str = "compare_discoveries.csv";
pub const SPEARMAN_FILE: &str = "compare_spearman.csv";

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f),
        None => f(),
    }
}

/// Column names of the A/A table: two per FDR level.
pub fn aa_header(alphas: &[f64]) -> Vec<String> {
    let mut header = vec!["percentile".to_owned(), "tests".to_owned()];
    for &a in alphas {
        header.push(format!("count_alpha_{}", num(a)));
        header.push(format!("pct_alpha_{}", num(a)));
    }
    header
}

pub fn write_aa_table(table: &AaTable, path: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(aa_header(&table.alphas))?;
    for (i, &p) in table.percentiles.iter().enumerate() {
        let mut rec = vec![num(100.0 * p), table.total_tests.to_string()];
        for k in 0..table.alphas.len() {
            rec.push(table.counts[i][k].to_string());
            rec.push(num(table.percent(i, k)));
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_aa_validate(
    study: &AaStudyConfig,
    output_dir: &Path,
    threads: Option<usize>,
) -> anyhow::Result<(AaTable, PathBuf)> {
    let table = with_threads(threads, || Ok(aa_study(study)?))?;
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    let path = output_dir.join(AA_FILE);
    write_aa_table(&table, &path)?;
    Ok((table, path))
}

pub fn write_comparison(
    cmp: &Comparison,
    cfg: &CompareConfig,
    dir: &Path,
) -> anyhow::Result<Vec<PathBuf>> {
    let (first, second) = (cfg.methods.0.name(), cfg.methods.1.name());

    let p_path = dir.join(PVALUES_FILE);
    let mut w = csv_writer(&p_path)?;
    w.write_record([
        "rep",
        "effect",
        "percentile",
        "method_first",
        "p_first",
        "method_second",
        "p_second",
    ])?;
    for r in &cmp.rows {
        w.write_record([
            r.rep.to_string(),
            num(r.effect),
            num(100.0 * r.percentile),
            first.to_owned(),
            num(r.p_first),
            second.to_owned(),
            num(r.p_second),
        ])?;
    }
    w.flush()?;

    let d_path = dir.join(DISCOVERIES_FILE);
    let mut w = csv_writer(&d_path)?;
    w.write_record([
        "percentile",
        "threshold",
        "method_first",
        "rate_first",
        "method_second",
        "rate_second",
        "diff_pp",
    ])?;
    for d in &cmp.discoveries {
        w.write_record([
            num(100.0 * d.percentile),
            num(d.threshold),
            first.to_owned(),
            num(d.first),
            second.to_owned(),
            num(d.second),
            num(100.0 * (d.first - d.second)),
        ])?;
    }
    w.flush()?;

    let s_path = dir.join(SPEARMAN_FILE);
    let mut w = csv_writer(&s_path)?;
    w.write_record(["percentile", "spearman"])?;
    for &p in &cfg.percentiles {
        w.write_record([num(100.0 * p), num(cmp.spearman_at(p))])?;
    }
    w.flush()?;
    Ok(vec![p_path, d_path, s_path])
}

pub fn cmd_compare(
    cfg: &CompareConfig,
    output_dir: &Path,
    threads: Option<usize>,
) -> anyhow::Result<(Comparison, Vec<PathBuf>)> {
    let cmp = with_threads(threads, || Ok(compare_methods(cfg)?))?;
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    let files = write_comparison(&cmp, cfg, output_dir)?;
    Ok((cmp, files))
}
