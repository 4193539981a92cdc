//! End-to-end runs, parameter sweeps and their CSV/JSON output.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{extract_blocks, sine_source, BlockMatrices, BrokenSystem};
use crate::coarse_space::{
    build_average_operator, build_enriched_basis, compute_local_bases, AverageOperator,
    EnrichedCoarseBasis, EnrichmentType, LocalEigenBasis, SelectionPolicy,
};
use crate::coefficients::{sample_pattern, ChannelPattern, CoefficientField};
use crate::error::{Error, Result};
use crate::geometry::{
    assign_sides, build_meshes, build_partition, CoarsePartition, InterfaceSideAssignment,
    MortarPolicy, ResolutionLayout, SubdomainMesh,
};
use crate::krylov::{
    condition_number_dense, condition_number_lanczos, pcg, KappaEstimate, PcgOptions,
    ResidualNorm, DEFAULT_DENSE_CAP, DEFAULT_TOL,
};
use crate::mortar::{assemble_couplings, build_constrained_system, ConstrainedSystem, MortarCoupling};
use crate::preconditioner::{ApplicationMode, Preconditioner};

/// How the condition number of a run is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// Dense when the system fits under the cap, Lanczos otherwise.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    /// Subdomains along x and y.
    pub subdomains: [usize; 2],
    /// Cells per subdomain edge on even checkerboard sites.
    pub cells: usize,
    /// Cells per subdomain edge on odd checkerboard sites.
    pub cells_alt: usize,
    /// Allows `cells == cells_alt`.
    pub matching: bool,
    /// Overrides the checkerboard built from `cells` and `cells_alt`.
    pub layout: Option<ResolutionLayout>,
    pub mortar: MortarPolicy,
    pub pattern: ChannelPattern,
    #[serde(rename = "type")]
    pub enrichment: EnrichmentType,
    pub policy: SelectionPolicy,
    pub mode: ApplicationMode,
    pub tol: f64,
    pub max_iter: usize,
    pub residual: ResidualNorm,
    pub kappa: KappaMode,
    pub dense_cap: usize,
    /// Skip the preconditioner, PCG and κ; only count eigenfunctions.
    pub count_only: bool,
    /// Compare blockwise and reference application on random vectors drawn from `seed`.
    pub verify: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: None,
            subdomains: [6, 6],
            cells: 6,
            cells_alt: 9,
            matching: false,
            layout: None,
            mortar: MortarPolicy::Coarse,
            pattern: ChannelPattern::with_alphas(1.0, 1e4, 1e6),
            enrichment: EnrichmentType::II,
            policy: SelectionPolicy::Threshold(50.0),
            mode: ApplicationMode::Reference,
            tol: DEFAULT_TOL,
            max_iter: 2000,
            residual: ResidualNorm::True,
            kappa: KappaMode::Auto,
            dense_cap: DEFAULT_DENSE_CAP,
            count_only: false,
            verify: false,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn alphas(&self) -> [f64; 3] {
        let p = &self.pattern;
        [p.alpha_background, p.alpha_corner, p.alpha_crossing]
    }

    pub fn set_alphas(&mut self, [b, c, i]: [f64; 3]) {
        self.pattern.alpha_background = b;
        self.pattern.alpha_corner = c;
        self.pattern.alpha_crossing = i;
    }

    pub fn resolution(&self) -> ResolutionLayout {
        self.layout.unwrap_or(ResolutionLayout::Checkerboard {
            even: self.cells,
            odd: self.cells_alt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.subdomains.contains(&0) {
            return bad(format!("subdomain counts {:?} must be positive", self.subdomains));
        }
        if self.layout.is_none() {
            if self.cells < 2 || self.cells_alt < 2 {
                return Err(Error::TooFewCells(self.cells.min(self.cells_alt)));
            }
            if self.cells == self.cells_alt && !self.matching {
                return bad(format!(
                    "cells and cells_alt are both {}; set matching to use equal resolutions",
                    self.cells
                ));
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.dense_cap == 0 {
            return bad("tol, max_iter and dense_cap must be positive".into());
        }
        self.pattern.validate()?;
        self.policy.validate()
    }

    pub fn pcg_options(&self) -> PcgOptions {
        PcgOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            residual: self.residual,
        }
    }
}

/// Everything that does not depend on the enrichment choice.
#[derive(Clone, Debug)]
pub struct Problem {
    pub partition: CoarsePartition,
    pub meshes: Vec<SubdomainMesh>,
    pub field: CoefficientField,
    pub sides: InterfaceSideAssignment,
    pub couplings: Vec<MortarCoupling>,
    pub broken: BrokenSystem,
    pub system: ConstrainedSystem,
    pub blocks: BlockMatrices,
    pub average: AverageOperator,
}

impl Problem {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let [nx, ny] = config.subdomains;
        let partition = build_partition(nx, ny).map_err(Error::at("geometry"))?;
        let meshes = build_meshes(&partition, config.resolution()).map_err(Error::at("geometry"))?;
        let field = sample_pattern(&config.pattern, &partition, &meshes).map_err(Error::at("coefficients"))?;
        Self::from_parts(partition, meshes, field, config.mortar.clone())
    }

    pub fn from_parts(
        partition: CoarsePartition,
        meshes: Vec<SubdomainMesh>,
        field: CoefficientField,
        mortar: MortarPolicy,
    ) -> Result<Self> {
        let sides = assign_sides(&partition, &meshes, mortar).map_err(Error::at("geometry"))?;
        let broken = BrokenSystem::assemble(&partition, &meshes, &field, sine_source)
            .map_err(Error::at("assembly"))?;
        let couplings = assemble_couplings(&partition, &meshes, &sides).map_err(Error::at("mortar"))?;
        let system = build_constrained_system(&partition, &meshes, &sides, &broken, &couplings)
            .map_err(Error::at("mortar"))?;
        let blocks = extract_blocks(&system.stiffness, &system.dofs).map_err(Error::at("assembly"))?;
        let average = build_average_operator(&partition, &system.dofs).map_err(Error::at("coarse space"))?;
        Ok(Self {
            partition,
            meshes,
            field,
            sides,
            couplings,
            broken,
            system,
            blocks,
            average,
        })
    }

    pub fn n_free(&self) -> usize {
        self.system.dofs.dim()
    }

    pub fn local_bases(&self, kind: EnrichmentType, policy: SelectionPolicy) -> Result<Vec<LocalEigenBasis>> {
        compute_local_bases(&self.meshes, &self.field, kind, policy).map_err(Error::at("coarse space"))
    }

    pub fn coarse_basis(&self, bases: &[LocalEigenBasis]) -> Result<EnrichedCoarseBasis> {
        build_enriched_basis(&self.average, bases, &self.system.dofs, &self.system.stiffness)
            .map_err(Error::at("coarse space"))
    }

    pub fn preconditioner(
        &self,
        mode: ApplicationMode,
        bases: &[LocalEigenBasis],
        coarse: &EnrichedCoarseBasis,
    ) -> Result<Preconditioner> {
        let (a, blocks, dofs) = (&self.system.stiffness, &self.blocks, &self.system.dofs);
        match mode {
            ApplicationMode::Reference => Preconditioner::build_reference(a, blocks, dofs, coarse),
            ApplicationMode::Blockwise => {
                Preconditioner::build_blockwise(a, blocks, dofs, &self.average, bases)
            }
        }
        .map_err(Error::at("preconditioner"))
    }
}

/// Wall-clock seconds per phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assembly: f64,
    pub eigensolves: f64,
    pub factorization: f64,
    pub pcg: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub n_free: usize,
    pub coarse_dim: usize,
    pub selected: Vec<usize>,
    pub total_selected: usize,
    pub kappa: Option<KappaEstimate>,
    pub lanczos: Option<KappaEstimate>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_residual: Option<f64>,
    /// Largest relative difference between blockwise and reference application.
    pub verification: Option<f64>,
    pub timings: Timings,
}

impl RunRecord {
    pub fn max_selected(&self) -> usize {
        self.selected.iter().copied().max().unwrap_or(0)
    }
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn run_single(config: &ExperimentConfig) -> Result<RunRecord> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let problem = Problem::build(config)?;
    timings.assembly = seconds(t);

    let t = Instant::now();
    let bases = problem.local_bases(config.enrichment, config.policy)?;
    timings.eigensolves = seconds(t);
    let selected: Vec<usize> = bases.iter().map(|b| b.selected).collect();
    let mut record = RunRecord {
        config: config.clone(),
        n_free: problem.n_free(),
        coarse_dim: problem.average.n_skeleton() + selected.iter().sum::<usize>(),
        total_selected: selected.iter().sum(),
        selected,
        kappa: None,
        lanczos: None,
        iterations: None,
        converged: None,
        final_residual: None,
        verification: None,
        timings,
    };
    if config.count_only {
        return Ok(record);
    }

    let t = Instant::now();
    let coarse = problem.coarse_basis(&bases)?;
    let prec = problem.preconditioner(config.mode, &bases, &coarse)?;
    record.timings.factorization = seconds(t);

    if config.verify {
        let other_mode = match config.mode {
            ApplicationMode::Reference => ApplicationMode::Blockwise,
            ApplicationMode::Blockwise => ApplicationMode::Reference,
        };
        let other = problem.preconditioner(other_mode, &bases, &coarse)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let v = DVector::from_fn(problem.n_free(), |_, _| rng.random_range(-1.0..1.0));
            let (x, y) = (prec.apply(&v)?, other.apply(&v)?);
            worst = worst.max((&x - &y).norm() / x.norm());
        }
        record.verification = Some(worst);
    }

    let t = Instant::now();
    let (_, report) = pcg(&problem.system.stiffness, &problem.system.load, &prec, &config.pcg_options())
        .map_err(Error::at("pcg"))?;
    record.timings.pcg = seconds(t);
    record.iterations = Some(report.iterations);
    record.converged = Some(report.converged);
    record.final_residual = report.residuals.last().copied();
    record.lanczos = condition_number_lanczos(&report).ok();

    let t = Instant::now();
    let use_dense = match config.kappa {
        KappaMode::Dense => true,
        KappaMode::Lanczos => false,
        KappaMode::Auto => problem.n_free() <= config.dense_cap,
    };
    record.kappa = if use_dense {
        Some(condition_number_dense(&problem.system.stiffness, &prec, config.dense_cap).map_err(Error::at("kappa"))?)
    } else {
        record.lanczos
    };
    record.timings.kappa = seconds(t);
    Ok(record)
}

/// One sweep row: the record, or the error that stopped it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub config: ExperimentConfig,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

impl TableRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

pub fn run_table(configs: &[ExperimentConfig]) -> Result<Vec<TableRow>> {
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    Ok(configs
        .par_iter()
        .map(|c| match run_single(c) {
            Ok(r) => TableRow {
                config: c.clone(),
                record: Some(r),
                error: None,
            },
            Err(e) => TableRow {
                config: c.clone(),
                record: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

pub const TABLE_COLUMNS: [&str; 20] = [
    "label",
    "subdomains",
    "cells",
    "cells_alt",
    "mortar",
    "alpha_b",
    "alpha_c",
    "alpha_i",
    "type",
    "policy",
    "n_free",
    "coarse_dim",
    "kappa",
    "kappa_method",
    "iterations",
    "converged",
    "total_eigenfunctions",
    "max_per_subdomain",
    "status",
    "error",
];

fn mortar_name(p: &MortarPolicy) -> &'static str {
    match p {
        MortarPolicy::Coarse => "coarse",
        MortarPolicy::Fine => "fine",
        MortarPolicy::Explicit(_) => "explicit",
    }
}

/// Timings are left out so that reruns produce identical bytes.
pub fn write_table_csv<W: Write>(rows: &[TableRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_COLUMNS)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for row in rows {
        let c = &row.config;
        let [b, cc, i] = c.alphas();
        let r = row.record.as_ref();
        w.write_record([
            c.label.clone().unwrap_or_default(),
            format!("{}x{}", c.subdomains[0], c.subdomains[1]),
            c.cells.to_string(),
            c.cells_alt.to_string(),
            mortar_name(&c.mortar).to_string(),
            format!("{b:e}"),
            format!("{cc:e}"),
            format!("{i:e}"),
            c.enrichment.to_string(),
            c.policy.to_string(),
            opt(r.map(|r| r.n_free.to_string())),
            opt(r.map(|r| r.coarse_dim.to_string())),
            opt(r.and_then(|r| r.kappa).map(|k| format!("{:.6e}", k.kappa))),
            opt(r.and_then(|r| r.kappa).map(|k| format!("{:?}", k.method).to_lowercase())),
            opt(r.and_then(|r| r.iterations).map(|n| n.to_string())),
            opt(r.and_then(|r| r.converged).map(|b| b.to_string())),
            opt(r.map(|r| r.total_selected.to_string())),
            opt(r.map(|r| r.max_selected().to_string())),
            if row.ok() { "ok" } else { "error" }.to_string(),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_json<W: Write>(rows: &[TableRow], writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, rows)?;
    Ok(())
}

/// Selected eigenfunction count of every subdomain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub config: ExperimentConfig,
    pub counts: Vec<usize>,
    pub total: usize,
    pub max: usize,
}

pub fn run_histogram(config: &ExperimentConfig) -> Result<Histogram> {
    if !matches!(config.policy, SelectionPolicy::Threshold(_)) {
        return Err(Error::InvalidArgument(
            "histograms need a threshold policy".into(),
        ));
    }
    let problem = Problem::build(config)?;
    let bases = problem.local_bases(config.enrichment, config.policy)?;
    let counts: Vec<usize> = bases.iter().map(|b| b.selected).collect();
    Ok(Histogram {
        config: config.clone(),
        total: counts.iter().sum(),
        max: counts.iter().copied().max().unwrap_or(0),
        counts,
    })
}

pub fn write_histogram_csv<W: Write>(h: &Histogram, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subdomain", "ix", "iy", "selected"])?;
    let nx = h.config.subdomains[0];
    for (id, n) in h.counts.iter().enumerate() {
        w.write_record([id.to_string(), (id % nx).to_string(), (id / nx).to_string(), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub const JUMP_TRIPLES: [[f64; 3]; 2] = [[1.0, 1e3, 1e4], [1.0, 1e4, 1e6]];

fn labelled(base: &ExperimentConfig, label: String) -> ExperimentConfig {
    ExperimentConfig {
        label: Some(label),
        ..base.clone()
    }
}

/// Threshold runs over subdomain counts, coefficient triples and mortar policies.
pub fn table1(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for n in [6, 9] {
        for alphas in JUMP_TRIPLES {
            for mortar in [MortarPolicy::Coarse, MortarPolicy::Fine] {
                let mut c = labelled(base, format!("table1-{n}x{n}-{}-{}", alphas[2], mortar_name(&mortar)));
                c.subdomains = [n, n];
                c.set_alphas(alphas);
                c.mortar = mortar;
                c.enrichment = EnrichmentType::II;
                c.policy = SelectionPolicy::Threshold(50.0);
                out.push(c);
            }
        }
    }
    out
}

/// Fixed eigenfunction counts 0 through 7.
pub fn table2(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    (0..=7)
        .map(|m| {
            let mut c = labelled(base, format!("table2-fixed{m}"));
            c.policy = SelectionPolicy::Fixed(m);
            c
        })
        .collect()
}

/// Threshold totals for both enrichment types.
pub fn table3(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for n in [6, 9] {
        for alphas in JUMP_TRIPLES {
            for kind in [EnrichmentType::I, EnrichmentType::II] {
                let mut c = labelled(base, format!("table3-{n}x{n}-{}-{kind}", alphas[2]));
                c.subdomains = [n, n];
                c.set_alphas(alphas);
                c.enrichment = kind;
                c.policy = SelectionPolicy::Threshold(50.0);
                c.count_only = true;
                out.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            subdomains: [3, 3],
            cells: 4,
            cells_alt: 6,
            ..Default::default()
        }
    }

    #[test]
    fn validation() {
        assert!(small().validate().is_ok());
        let mut c = small();
        c.cells_alt = 4;
        assert!(c.validate().is_err());
        c.matching = true;
        assert!(c.validate().is_ok());
        c.cells = 1;
        c.cells_alt = 1;
        assert!(matches!(c.validate(), Err(Error::TooFewCells(1))));
        let mut c = small();
        c.tol = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.subdomains = [0, 3];
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_coefficient_selects_nothing() {
        let mut c = small();
        c.set_alphas([2.0, 2.0, 2.0]);
        let r = run_single(&c).unwrap();
        assert_eq!(r.total_selected, 0);
        assert_eq!(r.selected.len(), 9);
        assert!(r.converged.unwrap());
        let h = run_histogram(&c).unwrap();
        assert!(h.counts.iter().all(|&n| n == 0));
    }

    #[test]
    fn record_is_consistent_and_reproducible() {
        let mut c = small();
        c.verify = true;
        c.seed = 11;
        let a = run_single(&c).unwrap();
        let b = run_single(&c).unwrap();
        assert_eq!(a.total_selected, a.selected.iter().sum::<usize>());
        assert_eq!(a.coarse_dim, 4 + 36 + a.total_selected);
        assert!(a.verification.unwrap() < 1e-10);
        let (ka, kb) = (a.kappa.unwrap().kappa, b.kappa.unwrap().kappa);
        assert!((ka - kb).abs() <= 1e-10 * ka);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn csv_is_deterministic_and_records_errors() {
        let mut bad = small();
        bad.cells = 1;
        let configs = vec![small(), bad];
        let rows = run_table(&configs).unwrap();
        assert!(rows[0].ok());
        assert!(!rows[1].ok());
        let write = |rows: &[TableRow]| {
            let mut out = Vec::new();
            write_table_csv(rows, &mut out).unwrap();
            String::from_utf8(out).unwrap()
        };
        let first = write(&rows);
        let again = write(&run_table(&configs).unwrap());
        assert_eq!(first, again);
        assert_eq!(first.lines().count(), 3);
        assert!(first.lines().nth(2).unwrap().contains(",error,"));
        let mut json = Vec::new();
        write_table_json(&rows, &mut json).unwrap();
        let parsed: Vec<TableRow> = serde_json::from_slice(&json).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(run_table(&[]).is_err());
    }

    #[test]
    fn histogram_requires_threshold() {
        let mut c = small();
        c.policy = SelectionPolicy::Fixed(2);
        assert!(run_histogram(&c).is_err());
    }

    #[test]
    fn presets() {
        let base = ExperimentConfig::default();
        assert_eq!(table1(&base).len(), 8);
        let t2 = table2(&base);
        assert_eq!(t2.len(), 8);
        assert_eq!(t2[7].policy, SelectionPolicy::Fixed(7));
        let t3 = table3(&base);
        assert_eq!(t3.len(), 8);
        assert!(t3.iter().all(|c| c.count_only));
    }

    #[test]
    fn stage_labels_on_errors() {
        let mut c = small();
        c.mortar = MortarPolicy::Explicit(vec![0]);
        let err = run_single(&c).unwrap_err();
        assert!(err.to_string().starts_with("geometry:"), "{err}");
    }
}
