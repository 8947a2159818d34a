//! Command-line runner: one JSON config, one command per invocation.
//!
//! Exit codes: 0 success, 1 computation error or failed check, 2 invalid
//! configuration (including an invalid dimension parameter N).

pub mod config;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::cdcheck::{self, LeafCdOptions};
use crate::chart::{self, Chart};
use crate::disintegrate::{self, conditional_density};
use crate::error::Error;
use crate::leafdetect;
use crate::lipmap::{AtlasEntry, CdParams, MapSpec};
use config::RunConfig;
use output::Header;

#[derive(Parser, Debug)]
#[command(name = "leafdecomp", version, about = "Leaf decomposition toolkit for 1-Lipschitz maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides the config seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    /// Where to write built charts as JSON.
    #[arg(long, global = true)]
    pub chart_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Classify sample points by leaf dimension (CSV).
    Classify,
    /// Build charts and write them as JSON.
    Chart,
    /// Mixture identity check and per-leaf densities.
    Disintegrate,
    /// Curvature-dimension check of the ambient or conditional measures.
    Cdcheck,
    /// List the atlas maps.
    AtlasList,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Chart => "chart",
            Command::Disintegrate => "disintegrate",
            Command::Cdcheck => "cdcheck",
            Command::AtlasList => "atlas-list",
        }
    }
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidN { .. } | Error::DimensionError(_) | Error::NonConstantRho(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("i/o error: {e}"),
    }
}

struct Context {
    cfg: RunConfig,
    header: Header,
    out_dir: PathBuf,
    chart_out: Option<PathBuf>,
    entry: AtlasEntry,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    if cli.command == Command::AtlasList {
        return atlas_list(cli);
    }
    let path = cli.config.as_ref().ok_or_else(|| Failure {
        code: 2,
        message: "--config is required".into(),
    })?;
    let raw = std::fs::read(path).map_err(|e| Failure {
        code: 2,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let text = String::from_utf8(raw.clone()).map_err(|_| Failure {
        code: 2,
        message: "config is not UTF-8".into(),
    })?;
    let mut cfg = config::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let entry = cfg.map.entry()?;
    let measure_n = entry.n();
    cfg.measure.build(measure_n)?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(io_failure)?;
    let chart_out = cli
        .chart_out
        .clone()
        .or_else(|| cfg.output.chart_out.clone().map(PathBuf::from));
    let header = Header::new(cli.command.name(), &raw, cfg.seed);
    let ctx = Context {
        cfg,
        header,
        out_dir,
        chart_out,
        entry,
    };
    match cli.command {
        Command::Classify => classify(&ctx),
        Command::Chart => chart_cmd(&ctx),
        Command::Disintegrate => disintegrate_cmd(&ctx),
        Command::Cdcheck => cdcheck_cmd(&ctx),
        Command::AtlasList => unreachable!(),
    }
}

fn missing(block: &str) -> Failure {
    Failure {
        code: 2,
        message: format!("config has no \"{block}\" block"),
    }
}

fn atlas_list(cli: &Cli) -> Result<i32, Failure> {
    let raw = match &cli.config {
        Some(p) => std::fs::read(p).map_err(|e| Failure {
            code: 2,
            message: format!("cannot read {}: {e}", p.display()),
        })?,
        None => Vec::new(),
    };
    let header = Header::new("atlas-list", &raw, cli.seed.unwrap_or(0));
    let maps: Vec<_> = MapSpec::catalogue()
        .into_iter()
        .map(|(key, description)| json!({ "key": key, "description": description }))
        .collect();
    println!("{}", output::json_document(&header, &maps));
    Ok(0)
}

fn classify(ctx: &Context) -> Result<i32, Failure> {
    let block = ctx.cfg.classify.as_ref().ok_or_else(|| missing("classify"))?;
    let n = ctx.entry.n();
    let m = ctx.entry.m();
    let points = block.samples.points(n, ctx.cfg.seed)?;
    let detect = leafdetect::DetectConfig {
        seed: ctx.cfg.seed,
        ..ctx.cfg.detect.clone()
    };
    let map = ctx.entry.map.clone();
    let classes: Vec<_> = points
        .par_iter()
        .map(|x| (leafdetect::classify_point(map.as_ref(), x, &detect), map.excluded(x)))
        .collect();
    let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    head.push("leaf_dim".into());
    head.push("interior".into());
    head.extend((1..=m).map(|k| format!("alpha{k}")));
    head.extend((1..=m).map(|k| format!("beta{k}")));
    head.push("excluded".into());
    let rows: Vec<Vec<String>> = classes
        .iter()
        .map(|(c, excl)| {
            let mut row: Vec<String> = c.point.iter().map(|v| output::num(*v)).collect();
            row.push(c.leaf_dim.map_or("unknown".into(), |d| d.to_string()));
            row.push(c.interior.to_string());
            row.extend(c.alpha.iter().map(|v| output::num(*v)));
            row.extend(c.beta.iter().map(|v| output::num(*v)));
            row.push(excl.to_string());
            row
        })
        .collect();
    let path = ctx.out_dir.join("classify.csv");
    output::write_csv(&path, &ctx.header, &head, &rows).map_err(io_failure)?;
    let mut counts = std::collections::BTreeMap::new();
    for (c, _) in &classes {
        let key = c.leaf_dim.map_or("unknown".to_string(), |d| d.to_string());
        *counts.entry(key).or_insert(0usize) += 1;
    }
    println!(
        "{}",
        output::json_document(&ctx.header, &json!({ "points": classes.len(), "leaf_dim_counts": counts, "csv": path }))
    );
    Ok(0)
}

fn build_charts(ctx: &Context) -> Result<Vec<Chart>, Failure> {
    let block = ctx.cfg.chart.clone().unwrap_or_default();
    let levels = block.levels(&ctx.entry, ctx.cfg.seed)?;
    let mut cfg = block.config.clone();
    cfg.detect.seed = ctx.cfg.seed;
    let built = chart::build_charts(ctx.entry.map.clone(), &levels, &cfg);
    let mut charts = Vec::new();
    let mut last_err = None;
    for r in built {
        match r {
            Ok(c) => charts.push(c),
            Err(e) => {
                log::warn!("chart rejected: {e}");
                last_err = Some(e);
            }
        }
    }
    if charts.is_empty() {
        return Err(last_err.unwrap_or(Error::EmptyChart).into());
    }
    if let Some(p) = &ctx.chart_out {
        output::write_json(p, &ctx.header, &charts).map_err(io_failure)?;
    }
    Ok(charts)
}

fn chart_cmd(ctx: &Context) -> Result<i32, Failure> {
    let charts = build_charts(ctx)?;
    let path = ctx.out_dir.join("chart.json");
    output::write_json(&path, &ctx.header, &charts).map_err(io_failure)?;
    let summary: Vec<_> = charts
        .iter()
        .map(|c| json!({ "level": c.level_s.as_slice(), "bases": c.bases.len(), "rejected_seeds": c.rejected.len() }))
        .collect();
    println!("{}", output::json_document(&ctx.header, &json!({ "charts": summary, "json": path })));
    Ok(0)
}

fn disintegrate_cmd(ctx: &Context) -> Result<i32, Failure> {
    let block = ctx.cfg.disintegrate.as_ref().ok_or_else(|| missing("disintegrate"))?;
    block.region.validate()?;
    let n = ctx.entry.n();
    let measure = ctx.cfg.measure.build(n)?;
    let charts = build_charts(ctx)?;
    let mut mcfg = block.mixture.clone();
    mcfg.seed = ctx.cfg.seed;
    let report_path = ctx.out_dir.join("mixture.json");
    let (report, nodes) = match disintegrate::mixture_check_detailed(
        ctx.entry.map.as_ref(),
        measure.clone(),
        &charts,
        &block.region,
        &mcfg,
    ) {
        Ok(r) => r,
        Err(e) => {
            output::write_json(&report_path, &ctx.header, &json!({ "error": e.to_string() })).map_err(io_failure)?;
            return Err(e.into());
        }
    };
    let pass = report.rel_err <= block.max_rel_err;
    #[derive(Serialize)]
    struct Summary<'a> {
        report: &'a disintegrate::MixtureReport,
        max_rel_err: f64,
        pass: bool,
    }
    let summary = Summary {
        report: &report,
        max_rel_err: block.max_rel_err,
        pass,
    };
    output::write_json(&report_path, &ctx.header, &summary).map_err(io_failure)?;

    // per-leaf density table over evenly spaced outer nodes
    let m = ctx.entry.m();
    let k = n - m;
    let mut head: Vec<String> = vec!["chart".into(), "piece".into()];
    head.extend((1..=k).map(|i| format!("a{i}")));
    head.extend((1..=m).map(|i| format!("b{i}")));
    head.push("density".into());
    let mut rows = Vec::new();
    let take = block.density_leaves.min(nodes.len());
    let g = block.density_grid.max(2);
    for j in 0..take {
        let node = &nodes[j * nodes.len() / take.max(1)];
        let label = DVector::from_column_slice(&node.label);
        let cond = conditional_density(&charts[node.chart], node.piece, &label, measure.clone())?;
        for flat in 0..g.pow(m as u32) {
            let mut r = flat;
            let b = DVector::from_fn(m, |i, _| {
                let c = r % g;
                r /= g;
                node.b_lo[i] + (node.b_hi[i] - node.b_lo[i]) * c as f64 / (g - 1) as f64
            });
            let mut row = vec![node.chart.to_string(), node.piece.to_string()];
            row.extend(node.label.iter().map(|v| output::num(*v)));
            row.extend(b.iter().map(|v| output::num(*v)));
            row.push(output::num(cond.density_raw(&b)));
            rows.push(row);
        }
    }
    let dens_path = ctx.out_dir.join("densities.csv");
    output::write_csv(&dens_path, &ctx.header, &head, &rows).map_err(io_failure)?;
    println!("{}", output::json_document(&ctx.header, &summary));
    Ok(if pass { 0 } else { 1 })
}

fn cdcheck_cmd(ctx: &Context) -> Result<i32, Failure> {
    let block = ctx.cfg.cdcheck.as_ref().ok_or_else(|| missing("cdcheck"))?;
    let n = ctx.entry.n();
    let params = CdParams::new(block.kappa, n, block.n_eff()?);
    params.validate()?;
    let measure = ctx.cfg.measure.build(n)?;
    let samples = block.samples.points(n, ctx.cfg.seed)?;
    let report = match block.mode {
        config::CdMode::Ambient => {
            cdcheck::check_ambient_cd(measure.as_ref(), &params, &samples, block.dirs, ctx.cfg.seed)?
        }
        config::CdMode::Leaf => {
            let charts = build_charts(ctx)?;
            let opts = LeafCdOptions {
                dirs: block.dirs,
                rel_step: block.rel_step,
                seed: ctx.cfg.seed,
                ..Default::default()
            };
            cdcheck::check_leaf_cd(&charts[0], Arc::clone(&measure), &params, &samples, &opts)?
        }
    };
    let path = ctx.out_dir.join("cdcheck.json");
    output::write_json(&path, &ctx.header, &report).map_err(io_failure)?;
    println!("{}", output::json_document(&ctx.header, &report));
    Ok(if report.pass { 0 } else { 1 })
}

/// Run with an explicit output directory; used by tests.
pub fn run_in(dir: &Path, args: &[&str]) -> i32 {
    let mut full: Vec<OsString> = vec!["leafdecomp".into()];
    full.extend(args.iter().map(OsString::from));
    full.push("--out".into());
    full.push(dir.as_os_str().to_owned());
    run(full)
}
