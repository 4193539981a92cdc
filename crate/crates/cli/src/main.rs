use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mortar_schwarz::coarse_space::{write_spectra_csv, EnrichmentType, SelectionPolicy};
use mortar_schwarz::experiments::{
    run_histogram, run_table, table1, table2, table3, write_histogram_csv, write_table_csv,
    write_table_json, ExperimentConfig, KappaMode, Problem,
};
use mortar_schwarz::geometry::MortarPolicy;
use mortar_schwarz::krylov::ResidualNorm;
use mortar_schwarz::preconditioner::ApplicationMode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MortarArg {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TypeArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Reference,
    Blockwise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KappaArg {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ResidualArg {
    True,
    Preconditioned,
}

/// Enriched additive average Schwarz experiments for mortar discretizations.
#[derive(Debug, Parser)]
#[command(name = "mortar-schwarz", version)]
struct Cli {
    /// TOML experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Subdomains per direction, `N` or `NXxNY`.
    #[arg(long)]
    subdomains: Option<String>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    cells_alt: Option<usize>,
    /// Allow equal `cells` and `cells-alt`.
    #[arg(long)]
    matching: bool,
    #[arg(long, value_enum)]
    mortar: Option<MortarArg>,
    #[arg(long)]
    alpha_b: Option<f64>,
    #[arg(long)]
    alpha_c: Option<f64>,
    #[arg(long)]
    alpha_i: Option<f64>,
    #[arg(long = "type", value_enum)]
    enrichment: Option<TypeArg>,
    #[arg(long, conflicts_with = "fixed")]
    threshold: Option<f64>,
    #[arg(long)]
    fixed: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    residual: Option<ResidualArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    kappa: Option<KappaArg>,
    #[arg(long)]
    dense_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-check blockwise against reference application.
    #[arg(long)]
    verify: bool,
    /// Run a preset sweep instead of a single configuration.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3), conflicts_with = "histogram")]
    table: Option<u8>,
    /// Per-subdomain eigenfunction counts.
    #[arg(long)]
    histogram: bool,
    /// Output directory; CSV goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the coefficient field as CSV.
    #[arg(long)]
    export_field: Option<PathBuf>,
    /// Write the constrained stiffness matrix in coordinate format.
    #[arg(long)]
    export_matrix: Option<PathBuf>,
    /// Write all local eigenvalues as CSV.
    #[arg(long)]
    export_spectra: Option<PathBuf>,
}

fn parse_subdomains(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let parse = |p: &str| p.trim().parse::<usize>().map_err(|e| format!("bad subdomain count {p:?}: {e}"));
    match parts.as_slice() {
        [n] => {
            let n = parse(n)?;
            Ok([n, n])
        }
        [x, y] => Ok([parse(x)?, parse(y)?]),
        _ => Err(format!("bad subdomain spec {s:?}")),
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut c = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &cli.subdomains {
        c.subdomains = parse_subdomains(s)?;
    }
    if let Some(n) = cli.cells {
        c.cells = n;
        c.layout = None;
    }
    if let Some(n) = cli.cells_alt {
        c.cells_alt = n;
        c.layout = None;
    }
    c.matching |= cli.matching;
    if let Some(m) = cli.mortar {
        c.mortar = match m {
            MortarArg::Coarse => MortarPolicy::Coarse,
            MortarArg::Fine => MortarPolicy::Fine,
        };
    }
    if let Some(a) = cli.alpha_b {
        c.pattern.alpha_background = a;
    }
    if let Some(a) = cli.alpha_c {
        c.pattern.alpha_corner = a;
    }
    if let Some(a) = cli.alpha_i {
        c.pattern.alpha_crossing = a;
    }
    if let Some(t) = cli.enrichment {
        c.enrichment = match t {
            TypeArg::One => EnrichmentType::I,
            TypeArg::Two => EnrichmentType::II,
        };
    }
    if let Some(t) = cli.threshold {
        c.policy = SelectionPolicy::Threshold(t);
    }
    if let Some(m) = cli.fixed {
        c.policy = SelectionPolicy::Fixed(m);
    }
    if let Some(t) = cli.tol {
        c.tol = t;
    }
    if let Some(n) = cli.max_iter {
        c.max_iter = n;
    }
    if let Some(r) = cli.residual {
        c.residual = match r {
            ResidualArg::True => ResidualNorm::True,
            ResidualArg::Preconditioned => ResidualNorm::Preconditioned,
        };
    }
    if let Some(m) = cli.mode {
        c.mode = match m {
            ModeArg::Reference => ApplicationMode::Reference,
            ModeArg::Blockwise => ApplicationMode::Blockwise,
        };
    }
    if let Some(k) = cli.kappa {
        c.kappa = match k {
            KappaArg::Auto => KappaMode::Auto,
            KappaArg::Dense => KappaMode::Dense,
            KappaArg::Lanczos => KappaMode::Lanczos,
        };
    }
    if let Some(n) = cli.dense_cap {
        c.dense_cap = n;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.verify |= cli.verify;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn exports(cli: &Cli, config: &ExperimentConfig) -> Result<(), String> {
    if cli.export_field.is_none() && cli.export_matrix.is_none() && cli.export_spectra.is_none() {
        return Ok(());
    }
    let problem = Problem::build(config).map_err(|e| e.to_string())?;
    if let Some(path) = &cli.export_field {
        problem.field.write_csv(create(path)?).map_err(|e| e.to_string())?;
    }
    if let Some(path) = &cli.export_matrix {
        problem.system.stiffness.write_coordinate(create(path)?).map_err(|e| e.to_string())?;
    }
    if let Some(path) = &cli.export_spectra {
        let bases = problem
            .local_bases(config.enrichment, config.policy)
            .map_err(|e| e.to_string())?;
        write_spectra_csv(&bases, create(path)?).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, String> {
    let config = build_config(cli)?;
    exports(cli, &config)?;
    let err = |e: mortar_schwarz::Error| e.to_string();

    if cli.histogram {
        let h = run_histogram(&config).map_err(err)?;
        match &cli.out {
            Some(dir) => {
                write_histogram_csv(&h, create(&dir.join("histogram.csv"))?).map_err(err)?;
                let json = create(&dir.join("histogram.json"))?;
                serde_json::to_writer_pretty(json, &h).map_err(|e| e.to_string())?;
            }
            None => write_histogram_csv(&h, io::stdout().lock()).map_err(err)?,
        }
        eprintln!("total {} max {}", h.total, h.max);
        return Ok(true);
    }

    let configs = match cli.table {
        Some(1) => table1(&config),
        Some(2) => table2(&config),
        Some(3) => table3(&config),
        _ => vec![config],
    };
    let rows = run_table(&configs).map_err(err)?;
    match &cli.out {
        Some(dir) => {
            let stem = cli.table.map_or("run".to_string(), |t| format!("table{t}"));
            write_table_csv(&rows, create(&dir.join(format!("{stem}.csv")))?).map_err(err)?;
            let mut json = create(&dir.join(format!("{stem}.json")))?;
            write_table_json(&rows, &mut json).map_err(err)?;
            json.flush().map_err(|e| e.to_string())?;
        }
        None => write_table_csv(&rows, io::stdout().lock()).map_err(err)?,
    }
    for row in rows.iter().filter(|r| !r.ok()) {
        eprintln!(
            "{}: {}",
            row.config.label.as_deref().unwrap_or("run"),
            row.error.as_deref().unwrap_or_default()
        );
    }
    Ok(rows.iter().all(|r| r.ok()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
