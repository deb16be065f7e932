//! Study orchestration: configuration, per-run pipeline and CSV reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::{Discretization, StabilizationMode};
use crate::geometry::{CutOptions, Domain, LevelSet};
use crate::linalg::{condition_number, scaled_matrix, solve};
use crate::mesh::BoxDomain;
use crate::problem::{Coefficients, ManufacturedSolution, MethodParameters};
use crate::verification::{
    conservation_residuals, convergence_rates, error_norms, spectral_check, SpectralReport,
};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    /// One run per mesh size at the configured centre.
    #[default]
    Convergence,
    /// Random centre offsets per mesh size.
    Robustness,
    /// Robustness runs repeated for each value in `gamma_values`.
    GammaSweep,
    /// Robustness runs plus coercivity and Poincaré eigenvalues.
    Diagnostics,
}

impl StudyMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Convergence => "convergence",
            Self::Robustness => "robustness",
            Self::GammaSweep => "gamma-sweep",
            Self::Diagnostics => "diagnostics",
        }
    }
}

/// Everything a study needs. Missing keys take the reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: StudyMode,
    pub h: Vec<f64>,
    pub center: [f64; 2],
    pub radius: f64,
    pub coefficients: Coefficients,
    pub parameters: MethodParameters,
    pub stabilization: StabilizationMode,
    pub n_sub: usize,
    pub q_order: usize,
    pub seed: u64,
    /// Random offsets per mesh size outside convergence mode.
    pub offsets: usize,
    /// Values of `gamma_1 = gamma_2` in a sweep; `gamma_0 = min(2 gamma_1, 1)`.
    pub gamma_values: Vec<f64>,
    pub output: PathBuf,
    pub dump_partitions: bool,
    /// Skip condition numbers, which dominate the cost on fine meshes.
    pub condition: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: StudyMode::Convergence,
            h: vec![0.3, 0.15, 0.075, 0.0375],
            center: [0.0, 0.0],
            radius: 1.0,
            coefficients: Coefficients::default(),
            parameters: MethodParameters::default(),
            stabilization: StabilizationMode::Macro,
            n_sub: 4,
            q_order: 4,
            seed: 20,
            offsets: 20,
            gamma_values: vec![1e-4, 0.125, 0.5],
            output: PathBuf::from("out"),
            dump_partitions: false,
            condition: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, DriverError> {
        serde_json::from_str(text).map_err(|e| DriverError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, DriverError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: String| Err(DriverError::Config(m));
        if self.h.is_empty() {
            return bad("at least one mesh size is required".into());
        }
        let width = BoxDomain::default().width();
        for &h in &self.h {
            let n = width / h;
            if !(h > 0.0 && h.is_finite()) || (n - n.round()).abs() > 1e-9 * n {
                return bad(format!("mesh size {h} must be positive and divide the box width {width}"));
            }
        }
        if !(self.radius > 0.0) {
            return bad("radius must be positive".into());
        }
        self.coefficients.validate().map_err(DriverError::Config)?;
        self.parameters.validate().map_err(DriverError::Config)?;
        if self.n_sub == 0 || self.q_order == 0 {
            return bad("n_sub and q_order must be positive".into());
        }
        if self.mode != StudyMode::Convergence && self.offsets == 0 {
            return bad(format!("mode {} needs offsets > 0", self.mode.name()));
        }
        if self.mode == StudyMode::GammaSweep {
            if self.gamma_values.is_empty() {
                return bad("gamma-sweep needs gamma_values".into());
            }
            if let Some(g) = self.gamma_values.iter().find(|&&g| !(g > 0.0 && g <= 1.0)) {
                return bad(format!("gamma value {g} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

/// One line of `report.csv`. Missing quantities are written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub mode: String,
    pub h: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub l2_bulk: Option<f64>,
    pub l2_surface: Option<f64>,
    pub h1_bulk: Option<f64>,
    pub h1_surface: Option<f64>,
    pub cond: Option<f64>,
    pub max_conservation_residual: Option<f64>,
    pub n_stab_faces_0: Option<usize>,
    pub n_stab_faces_1: Option<usize>,
    pub n_stab_faces_2: Option<usize>,
    pub runtime_s: f64,
    /// `ok`, or what went wrong.
    pub status: String,
}

/// Outcome of a single configuration.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub row: ReportRow,
    pub spectral: Option<SpectralReport>,
    pub partition_dumps: Vec<String>,
    /// Failures that are not an expected outcome of a study.
    pub hard_failure: bool,
}

/// Runs the full pipeline for one mesh size, offset and threshold set.
pub fn run_single(config: &RunConfig, h: f64, offset: [f64; 2], gamma: [f64; 3], spectral: bool) -> RunResult {
    let start = Instant::now();
    let mut row = ReportRow {
        mode: config.mode.name().into(),
        h,
        gamma0: gamma[0],
        gamma1: gamma[1],
        gamma2: gamma[2],
        offset_x: offset[0],
        offset_y: offset[1],
        l2_bulk: None,
        l2_surface: None,
        h1_bulk: None,
        h1_surface: None,
        cond: None,
        max_conservation_residual: None,
        n_stab_faces_0: None,
        n_stab_faces_1: None,
        n_stab_faces_2: None,
        runtime_s: 0.0,
        status: "ok".into(),
    };
    let mut result = RunResult { row: row.clone(), spectral: None, partition_dumps: Vec::new(), hard_failure: false };
    let center = Point2::new(config.center[0] + offset[0], config.center[1] + offset[1]);
    let built = LevelSet::new(center, config.radius).map_err(|e| e.to_string()).and_then(|ls| {
        let coefficients = config.coefficients.with_velocity_center(center);
        let parameters = MethodParameters { gamma, ..config.parameters };
        let opts = CutOptions { n_sub: config.n_sub, q_order: config.q_order };
        Discretization::build(h, ls, opts, coefficients, parameters, config.stabilization)
            .map_err(|e| e.to_string())
            .map(|d| (ls, d))
    });
    let (ls, disc) = match built {
        Ok(x) => x,
        Err(e) => {
            row.status = format!("setup-error: {e}");
            row.runtime_s = start.elapsed().as_secs_f64();
            result.row = row;
            result.hard_failure = true;
            return result;
        }
    };
    if let Some(stab) = &disc.stabilization {
        row.n_stab_faces_0 = Some(stab.faces[0].len());
        row.n_stab_faces_1 = Some(stab.faces[1].len());
        row.n_stab_faces_2 = Some(stab.faces[2].len());
        if config.dump_partitions {
            if let Some(p) = &stab.partitions {
                result.partition_dumps = p.iter().map(|p| p.dump()).collect();
            }
        }
    }
    let data = ManufacturedSolution::new(disc.coefficients, ls);
    let mut problems = Vec::new();
    let system = match crate::assembly::assemble_system(&disc, &data) {
        Ok(s) => s,
        Err(e) => {
            row.status = format!("assembly-error: {e}");
            row.runtime_s = start.elapsed().as_secs_f64();
            result.row = row;
            result.hard_failure = true;
            return result;
        }
    };
    if config.condition {
        match condition_number(&scaled_matrix(&system.matrix, &disc.space, h)) {
            Ok(c) if c.value.is_finite() => row.cond = Some(c.value),
            Ok(_) => problems.push("cond-infinite".to_string()),
            Err(e) => problems.push(format!("cond-failed: {e}")),
        }
    }
    match solve(&system.matrix, &system.rhs) {
        Ok(u) => {
            match error_norms(&disc, &u, &data) {
                Ok(e) => {
                    row.l2_bulk = Some(e.l2_bulk());
                    row.l2_surface = Some(e.l2_surface());
                    row.h1_bulk = Some(e.h1_bulk());
                    row.h1_surface = Some(e.h1_surface());
                }
                Err(e) => problems.push(format!("error-norms: {e}")),
            }
            if let Ok(res) = conservation_residuals(&disc, &u, &data) {
                row.max_conservation_residual = Some(res.iter().map(|r| r.relative()).fold(0.0, f64::max));
            }
        }
        Err(e) => problems.push(format!("solver-failure: {e}")),
    }
    if spectral {
        match spectral_check(&disc, &system) {
            Ok(s) => result.spectral = Some(s),
            Err(e) => problems.push(format!("spectral-failed: {e}")),
        }
    }
    if !problems.is_empty() {
        row.status = problems.join("; ");
    }
    row.runtime_s = start.elapsed().as_secs_f64();
    result.row = row;
    result
}

/// Offsets uniform in `[0, h)^2` from the configured seed.
pub fn random_offsets(seed: u64, h: f64, count: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| [rng.random::<f64>() * h, rng.random::<f64>() * h]).collect()
}

/// Results of a whole study.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub results: Vec<RunResult>,
    /// Summary lines written after the table, without the comment marker.
    pub footer: Vec<String>,
}

impl StudyOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.results.iter().map(|r| &r.row)
    }

    pub fn hard_failures(&self) -> usize {
        self.results.iter().filter(|r| r.hard_failure).count()
    }
}

/// Runs the study described by `config` without touching the file system.
pub fn run_study(config: &RunConfig) -> Result<StudyOutcome, DriverError> {
    config.validate()?;
    let gamma = config.parameters.gamma;
    let spectral = config.mode == StudyMode::Diagnostics;
    let mut results = Vec::new();
    match config.mode {
        StudyMode::Convergence => {
            for &h in &config.h {
                results.push(run_single(config, h, [0.0, 0.0], gamma, false));
            }
        }
        StudyMode::Robustness | StudyMode::Diagnostics => {
            for &h in &config.h {
                for off in random_offsets(config.seed, h, config.offsets) {
                    results.push(run_single(config, h, off, gamma, spectral));
                }
            }
        }
        StudyMode::GammaSweep => {
            for &v in &config.gamma_values {
                let g = [(2.0 * v).min(1.0), v, v];
                for &h in &config.h {
                    for off in random_offsets(config.seed, h, config.offsets) {
                        results.push(run_single(config, h, off, g, false));
                    }
                }
            }
        }
    }
    let footer = footer(config, &results);
    Ok(StudyOutcome { results, footer })
}

fn footer(config: &RunConfig, results: &[RunResult]) -> Vec<String> {
    let mut lines = Vec::new();
    let columns: [(&str, fn(&ReportRow) -> Option<f64>); 5] = [
        ("l2_bulk", |r| r.l2_bulk),
        ("l2_surface", |r| r.l2_surface),
        ("h1_bulk", |r| r.h1_bulk),
        ("h1_surface", |r| r.h1_surface),
        ("cond", |r| r.cond),
    ];
    match config.mode {
        StudyMode::Convergence => {
            lines.push("rates h_coarse,h_fine,l2_bulk,l2_surface,h1_bulk,h1_surface,cond".into());
            for w in results.windows(2) {
                let (a, b) = (&w[0].row, &w[1].row);
                let mut line = format!("rate {},{}", a.h, b.h);
                for (_, f) in &columns {
                    match (f(a), f(b)) {
                        (Some(x), Some(y)) => {
                            let r = convergence_rates(&[a.h, b.h], &[x, y])[0];
                            line.push_str(&format!(",{r:.4}"));
                        }
                        _ => line.push(','),
                    }
                }
                lines.push(line);
            }
        }
        _ => {
            lines.push("spread group,h,l2_bulk_max_over_min,cond_max_over_min,cond_median,failures".into());
            let mut groups: Vec<(f64, f64)> = Vec::new();
            for r in results {
                let key = (r.row.gamma1, r.row.h);
                if !groups.contains(&key) {
                    groups.push(key);
                }
            }
            for (g, h) in groups {
                let rows: Vec<&ReportRow> = results.iter().map(|r| &r.row).filter(|r| r.gamma1 == g && r.h == h).collect();
                let ratio = |f: fn(&ReportRow) -> Option<f64>| {
                    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                    if v.is_empty() { String::new() } else { format!("{:.4}", max / min) }
                };
                let mut conds: Vec<f64> = rows.iter().filter_map(|r| r.cond).collect();
                conds.sort_by(f64::total_cmp);
                let median = conds.get(conds.len() / 2).map(|c| format!("{c:.4e}")).unwrap_or_default();
                let failures = rows.iter().filter(|r| r.status != "ok").count();
                lines.push(format!(
                    "spread gamma1={g},{h},{},{},{median},{failures}",
                    ratio(|r| r.l2_bulk),
                    ratio(|r| r.cond)
                ));
            }
        }
    }
    lines
}

/// CSV text of the rows, without runtimes when `with_runtime` is false.
pub fn report_csv(outcome: &StudyOutcome, with_runtime: bool) -> Result<String, DriverError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in outcome.rows() {
        let mut row = row.clone();
        if !with_runtime {
            row.runtime_s = 0.0;
        }
        w.serialize(row)?;
    }
    let mut text = String::from_utf8(w.into_inner().map_err(|e| DriverError::Csv(e.into_error().into()))?)
        .expect("csv output is utf-8");
    for line in &outcome.footer {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    Ok(text)
}

/// Runs the study and writes `report.csv`, plus `spectral.csv` in diagnostics
/// mode and partition dumps when requested. Returns the written paths.
pub fn run(config: &RunConfig) -> Result<(StudyOutcome, Vec<PathBuf>), DriverError> {
    let outcome = run_study(config)?;
    let dir = &config.output;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let report = dir.join("report.csv");
    fs::write(&report, report_csv(&outcome, true)?).map_err(io_err(&report))?;
    written.push(report);
    if config.mode == StudyMode::Diagnostics {
        let path = dir.join("spectral.csv");
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut text = String::from("h,offset_x,offset_y,coercivity,poincare\n");
        for r in &outcome.results {
            let (c, p) = r.spectral.map(|s| (s.coercivity.to_string(), s.poincare.to_string())).unwrap_or_default();
            text.push_str(&format!("{},{},{},{c},{p}\n", r.row.h, r.row.offset_x, r.row.offset_y));
        }
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        written.push(path);
    }
    if config.dump_partitions {
        for (k, r) in outcome.results.iter().enumerate() {
            for (d, dump) in r.partition_dumps.iter().enumerate() {
                let path = dir.join(format!("partition_{k:03}_{}.txt", Domain::ALL[d].index()));
                fs::write(&path, dump).map_err(io_err(&path))?;
                written.push(path);
            }
        }
    }
    Ok((outcome, written))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let c = RunConfig::default();
        assert_eq!(c.parameters.gamma, [0.25, 0.125, 0.125]);
        assert_eq!(c.h, vec![0.3, 0.15, 0.075, 0.0375]);
        c.validate().unwrap();
    }

    #[test]
    fn json_overrides_and_rejects_unknown_keys() {
        let c = RunConfig::from_json(r#"{"mode": "gamma-sweep", "h": [0.3], "stabilization": "full"}"#).unwrap();
        assert_eq!(c.mode, StudyMode::GammaSweep);
        assert_eq!(c.stabilization, StabilizationMode::Full);
        assert_eq!(c.radius, 1.0);
        assert!(RunConfig::from_json(r#"{"mesh": 1}"#).is_err());
    }

    #[test]
    fn validation_errors() {
        let bad = [
            RunConfig { h: vec![0.4], ..Default::default() },
            RunConfig { h: vec![], ..Default::default() },
            RunConfig { parameters: MethodParameters { gamma: [0.2, 1.5, 0.1], ..Default::default() }, ..Default::default() },
            RunConfig { mode: StudyMode::Robustness, offsets: 0, ..Default::default() },
            RunConfig { mode: StudyMode::GammaSweep, gamma_values: vec![0.0], ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(DriverError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn offsets_are_reproducible() {
        let a = random_offsets(5, 0.15, 4);
        assert_eq!(a, random_offsets(5, 0.15, 4));
        assert!(a.iter().flatten().all(|&x| (0.0..0.15).contains(&x)));
        assert_ne!(a, random_offsets(6, 0.15, 4));
    }

    #[test]
    fn convergence_rows_and_footer() {
        let c = RunConfig { h: vec![0.6, 0.3], ..Default::default() };
        let out = run_study(&c).unwrap();
        assert_eq!(out.results.len(), 2);
        assert!(out.rows().all(|r| r.status == "ok" && r.l2_bulk.is_some() && r.cond.is_some()));
        let text = report_csv(&out, false).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("mode,h,gamma0,gamma1,gamma2,offset_x,offset_y,l2_bulk,l2_surface,h1_bulk,h1_surface,cond,max_conservation_residual,n_stab_faces_0,n_stab_faces_1,n_stab_faces_2,runtime_s"));
        assert_eq!(text.lines().filter(|l| l.starts_with("# rate ")).count(), 1);
        assert_eq!(text, report_csv(&run_study(&c).unwrap(), false).unwrap());
    }

    #[test]
    fn setup_failures_are_recorded() {
        // Radius 2 leaves the box.
        let c = RunConfig { h: vec![0.3], radius: 2.0, ..Default::default() };
        let out = run_study(&c).unwrap();
        assert_eq!(out.hard_failures(), 1);
        assert!(out.results[0].row.status.starts_with("setup-error"));
    }
}
