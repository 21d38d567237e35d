//! Experiment runner behind the `mfbsde` command line tool.
//!
//! Every subcommand writes its CSV artifacts and a `manifest.json` into the
//! output directory. Files are written to a temporary name and renamed into
//! place. Outputs are byte-identical for identical config and seed.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::markov_chain::uniform_grid;
use crate::martingale::martingale_battery;
use crate::meanfield_bsde::{
    compare_solutions, lipschitz_spot_check, picard_solve, residual_check, solve_markovian,
    BsdeError, MeanFieldProblem, PicardOptions, ResidualOptions, Variant,
};
use crate::oracles::{closed_form, tree_solve, ClosedFormParams, DiscreteProblem, OracleError};
use crate::stats::Estimate;

pub use config::{
    driver_expr, ConfigError, ConvergeSpec, DriverSpec, ExperimentConfig, NamedDriver, OracleKind,
    OracleSpec, ProblemSpec, SecondProblemSpec, SolverSpec, TerminalSpec, VariantSpec,
    VerificationSpec,
};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MFBSDE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Solve,
    Picard,
    Verify,
    Compare,
    Converge,
    Oracle,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Solve => "solve",
            Subcommand::Picard => "picard",
            Subcommand::Verify => "verify",
            Subcommand::Compare => "compare",
            Subcommand::Converge => "converge",
            Subcommand::Oracle => "oracle",
        }
    }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub variant: Option<Variant>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// Written files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub summary: String,
    pub warnings: Vec<String>,
}

/// Cap rayon's global pool from [`THREADS_ENV`]. Call once at startup.
pub fn configure_threads() -> Result<Option<usize>, String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    Ok(Some(n))
}

#[derive(Debug)]
enum Failure {
    /// Hypothesis or validation failure.
    Rejected(String),
    Internal(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Rejected(e.to_string())
    }
}

impl From<BsdeError> for Failure {
    fn from(e: BsdeError) -> Self {
        match e {
            BsdeError::HypothesisViolated(_)
            | BsdeError::Chain(_)
            | BsdeError::DimensionMismatch { .. }
            | BsdeError::NotMarkovian
            | BsdeError::TooFewSteps(_)
            | BsdeError::IncompatibleProblems(_) => Failure::Rejected(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Bsde(b) => b.into(),
            OracleError::Chain(_)
            | OracleError::InvalidParams(_)
            | OracleError::UnknownForm(_)
            | OracleError::TreeTooLarge { .. } => Failure::Rejected(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.to_string())
    }
}

struct Writer {
    dir: PathBuf,
    written: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Write `name` atomically.
    fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let target = self.dir.join(name);
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &target)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    config_sha256: String,
    seed: u64,
    steps: usize,
    variant: &'static str,
    exit_code: i32,
    artifacts: &'a [String],
}

struct Settings {
    steps: usize,
    seed: u64,
    variant: Variant,
}

/// Read `path` and run.
pub fn run_file(path: &Path, cmd: Subcommand, overrides: &Overrides) -> RunOutcome {
    match fs::read_to_string(path) {
        Ok(text) => run_text(&text, cmd, overrides),
        Err(e) => RunOutcome {
            exit_code: EXIT_HYPOTHESIS,
            artifacts: Vec::new(),
            summary: format!("cannot read config {}: {e}", path.display()),
            warnings: Vec::new(),
        },
    }
}

/// Parse JSON config text and run. The manifest hashes `text` verbatim.
pub fn run_text(text: &str, cmd: Subcommand, overrides: &Overrides) -> RunOutcome {
    match ExperimentConfig::from_json(text) {
        Ok(config) => run(&config, text.as_bytes(), cmd, overrides),
        Err(e) => RunOutcome {
            exit_code: EXIT_HYPOTHESIS,
            artifacts: Vec::new(),
            summary: e.to_string(),
            warnings: Vec::new(),
        },
    }
}

/// Run one subcommand on a parsed config.
pub fn run(
    config: &ExperimentConfig,
    raw_config: &[u8],
    cmd: Subcommand,
    overrides: &Overrides,
) -> RunOutcome {
    let settings = Settings {
        steps: overrides.steps.unwrap_or(config.solver.steps),
        seed: overrides.seed.unwrap_or(config.verification.seed),
        variant: overrides.variant.unwrap_or(config.solver.variant.into()),
    };
    let dir = overrides
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let mut warnings = Vec::new();
    let mut writer = match Writer::new(&dir) {
        Ok(w) => w,
        Err(f) => return finish(None, f, warnings),
    };
    let result = dispatch(config, cmd, &settings, &mut writer, &mut warnings);
    let (exit_code, summary) = match result {
        Ok((code, s)) => (code, s),
        Err(Failure::Rejected(s)) => (EXIT_HYPOTHESIS, s),
        Err(Failure::Internal(s)) => (EXIT_INTERNAL, s),
    };
    let manifest = Manifest {
        tool: "mfbsde",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cmd.name(),
        config_sha256: hex(&Sha256::digest(raw_config)),
        seed: settings.seed,
        steps: settings.steps,
        variant: settings.variant.name(),
        exit_code,
        artifacts: &writer.written.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(f) = writer.write("manifest.json", &json) {
        return finish(Some(writer), f, warnings);
    }
    RunOutcome {
        exit_code,
        artifacts: writer.written,
        summary,
        warnings,
    }
}

fn finish(writer: Option<Writer>, f: Failure, warnings: Vec<String>) -> RunOutcome {
    let (exit_code, summary) = match f {
        Failure::Rejected(s) => (EXIT_HYPOTHESIS, s),
        Failure::Internal(s) => (EXIT_INTERNAL, s),
    };
    RunOutcome {
        exit_code,
        artifacts: writer.map(|w| w.written).unwrap_or_default(),
        summary,
        warnings,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn spot_check(p: &MeanFieldProblem, seed: u64, warnings: &mut Vec<String>) {
    let check = lipschitz_spot_check(&p.driver, &p.gen, 1000, seed);
    if !check.ok() {
        warnings.push(format!(
            "driver {:?}: observed Lipschitz ratio {:.4} exceeds 1.05 x declared {}",
            p.driver.description(),
            check.max_ratio,
            check.declared
        ));
    }
}

fn dispatch(
    config: &ExperimentConfig,
    cmd: Subcommand,
    s: &Settings,
    w: &mut Writer,
    warnings: &mut Vec<String>,
) -> Result<(i32, String), Failure> {
    let p = config.problem()?;
    spot_check(&p, s.seed, warnings);
    match cmd {
        Subcommand::Solve => {
            let sol = solve_markovian(&p, s.steps)?;
            w.write("solution.csv", &sol.to_csv())?;
            Ok((EXIT_OK, format!("u(0) = {:?}", sol.initial().as_slice())))
        }
        Subcommand::Picard => {
            let opts = PicardOptions {
                variant: s.variant,
                max_iter: config.solver.max_iter,
                tol: config.solver.tol,
                ..PicardOptions::default()
            };
            match picard_solve(&p, s.steps, &opts) {
                Ok(out) => {
                    w.write("solution.csv", &out.solution.to_csv())?;
                    w.write("diagnostics.csv", &out.diagnostics.to_csv())?;
                    Ok((
                        EXIT_OK,
                        format!(
                            "converged after {} iterations",
                            out.diagnostics.iterations.len()
                        ),
                    ))
                }
                Err(BsdeError::MaxIterExceeded(out)) => {
                    w.write("solution.csv", &out.solution.to_csv())?;
                    w.write("diagnostics.csv", &out.diagnostics.to_csv())?;
                    Err(Failure::Internal(format!(
                        "no convergence after {} iterations",
                        out.diagnostics.iterations.len()
                    )))
                }
                Err(e) => Err(e.into()),
            }
        }
        Subcommand::Verify => verify(config, &p, s, w),
        Subcommand::Compare => {
            let q = config.second()?;
            spot_check(&q, s.seed, warnings);
            match compare_solutions(&p, &q, s.steps) {
                Ok(v) => {
                    w.write("compare.csv", &v.report())?;
                    w.write("solution_1.csv", &v.first.to_csv())?;
                    w.write("solution_2.csv", &v.second.to_csv())?;
                    let code = if v.conclusion_holds() {
                        EXIT_OK
                    } else {
                        EXIT_HYPOTHESIS
                    };
                    Ok((code, format!("min gap {:e}", v.min_gap)))
                }
                Err(BsdeError::HypothesisViolated(report)) => {
                    if let Some(v) = &report.verdict {
                        w.write("compare.csv", &v.report())?;
                    }
                    Err(Failure::Rejected(format!("hypothesis violated: {report}")))
                }
                Err(e) => Err(e.into()),
            }
        }
        Subcommand::Converge => converge(config, &p, w),
        Subcommand::Oracle => oracle(config, &p, s, w),
    }
}

fn stat_row(out: &mut String, name: &str, e: &Estimate) {
    let _ = writeln!(out, "{name},{:e},{:e},{}", e.mean, e.stderr, e.z_score());
}

fn verify(
    config: &ExperimentConfig,
    p: &MeanFieldProblem,
    s: &Settings,
    w: &mut Writer,
) -> Result<(i32, String), Failure> {
    let n_paths = config.verification.n_paths;
    let battery = martingale_battery(&p.gen, p.mu0.as_slice(), n_paths, s.seed)
        .map_err(BsdeError::from)?;
    let sol = solve_markovian(p, s.steps)?;
    let res = residual_check(
        &sol,
        p,
        &ResidualOptions {
            n_paths,
            seed: s.seed,
        },
    )?;
    let mut out = String::from("statistic,estimate,stderr,z_score\n");
    for (i, e) in battery.mean_m.iter().enumerate() {
        stat_row(&mut out, &format!("mean_M_T_{i}"), e);
    }
    for ((i, j), e) in &battery.qv_diff {
        stat_row(&mut out, &format!("qv_diff_{i}_{j}"), e);
    }
    stat_row(&mut out, "residual", &res.residual);
    stat_row(&mut out, "zdm", &res.zdm);
    w.write("verify.csv", &out)?;
    let ok = battery.within(3.0) && res.passes();
    let summary = format!(
        "martingale battery {}, residual {} (mean {:e}, max |R| {:e})",
        if battery.within(3.0) { "ok" } else { "FAILED" },
        if res.passes() { "ok" } else { "FAILED" },
        res.residual.mean,
        res.max_abs
    );
    Ok((if ok { EXIT_OK } else { EXIT_HYPOTHESIS }, summary))
}

fn named_closed_form(
    config: &ExperimentConfig,
    p: &MeanFieldProblem,
) -> Result<Option<crate::oracles::ClosedForm>, Failure> {
    let DriverSpec::Named { named } = &config.problem.driver else {
        return Ok(None);
    };
    let g = p.terminal_vector()?;
    let constant = g.iter().all(|&v| v == g[0]);
    let params = ClosedFormParams {
        gen: Some(p.gen.clone()),
        g: Some(g.as_slice().to_vec()),
        c: constant.then(|| g[0]),
        horizon: Some(p.horizon()),
    };
    match named {
        NamedDriver::ZeroDriver => Ok(Some(closed_form(named.name(), &params)?)),
        _ if constant => Ok(Some(closed_form(named.name(), &params)?)),
        _ => Ok(None),
    }
}

fn converge(
    config: &ExperimentConfig,
    p: &MeanFieldProblem,
    w: &mut Writer,
) -> Result<(i32, String), Failure> {
    let reference = match named_closed_form(config, p)? {
        Some(cf) => cf.vector(0.0),
        None => solve_markovian(p, config.converge.reference_steps)?
            .initial()
            .clone(),
    };
    let mut out = String::from("K,error\n");
    for &k in &config.converge.steps {
        let sol = solve_markovian(p, k)?;
        let err = (sol.initial() - &reference).amax();
        let _ = writeln!(out, "{k},{err:e}");
    }
    w.write("converge.csv", &out)?;
    Ok((EXIT_OK, format!("{} refinements", config.converge.steps.len())))
}

fn oracle(
    config: &ExperimentConfig,
    p: &MeanFieldProblem,
    s: &Settings,
    w: &mut Writer,
) -> Result<(i32, String), Failure> {
    match config.oracle.kind {
        OracleKind::Tree => {
            let dp = DiscreteProblem::from_problem(p, config.oracle.steps)?;
            let sol = tree_solve(&dp)?;
            w.write("oracle.csv", &sol.to_csv())?;
            Ok((EXIT_OK, format!("tree Y0 = {:?}", sol.y0.as_slice())))
        }
        OracleKind::ClosedForm => {
            let cf = named_closed_form(config, p)?.ok_or_else(|| {
                Failure::Rejected(
                    "closed_form oracle needs a named driver (and a constant terminal for the scalar forms)"
                        .into(),
                )
            })?;
            let grid = uniform_grid(p.horizon(), s.steps);
            let laws = crate::markov_chain::evolve_law(&p.gen, &p.mu0, &grid)
                .map_err(BsdeError::from)?;
            let mut out = String::from("t,state,u,mu\n");
            for (k, &t) in grid.iter().enumerate() {
                let u = cf.vector(t);
                for i in 0..p.n() {
                    let _ = writeln!(out, "{t},{i},{},{}", u[i], laws.laws[k][i]);
                }
            }
            w.write("oracle.csv", &out)?;
            Ok((EXIT_OK, format!("closed form u(0) = {:?}", cf.vector(0.0).as_slice())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(driver: &str, terminal: &str) -> String {
        format!(
            r#"{{
            "problem": {{
                "generator": {{"horizon": 1.0, "segments": [{{"t_start": 0.0, "rates": [[-1, 2], [1, -2]]}}]}},
                "mu0": [0.5, 0.5],
                "terminal": {terminal},
                "driver": {driver}
            }},
            "second_problem": {{"terminal": [0.0, 0.0], "driver": {{"named": "zero_driver"}}}},
            "solver": {{"steps": 40}},
            "verification": {{"n_paths": 2000, "seed": 7}}
        }}"#
        )
    }

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mfbsde-harness-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn every_subcommand_runs() {
        let text = config(r#"{"named": "pure_meanfield_exp"}"#, "[1.0, 1.0]");
        for cmd in [
            Subcommand::Solve,
            Subcommand::Picard,
            Subcommand::Verify,
            Subcommand::Compare,
            Subcommand::Converge,
            Subcommand::Oracle,
        ] {
            let dir = tmp(cmd.name());
            let o = Overrides {
                out: Some(dir.clone()),
                ..Default::default()
            };
            let out = run_text(&text, cmd, &o);
            assert_eq!(out.exit_code, EXIT_OK, "{cmd:?}: {}", out.summary);
            assert!(out.artifacts.contains(&"manifest.json".to_string()));
            for a in &out.artifacts {
                assert!(dir.join(a).exists());
            }
            fs::remove_dir_all(dir).unwrap();
        }
    }

    #[test]
    fn solve_matches_closed_form() {
        let text = config(r#"{"named": "pure_meanfield_exp"}"#, "[1.0, 1.0]");
        let dir = tmp("solve-exact");
        let o = Overrides {
            out: Some(dir.clone()),
            steps: Some(200),
            ..Default::default()
        };
        assert_eq!(run_text(&text, Subcommand::Solve, &o).exit_code, 0);
        let csv = fs::read_to_string(dir.join("solution.csv")).unwrap();
        for line in csv.lines().skip(1).take(2) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], "0");
            let u: f64 = cols[2].parse().unwrap();
            assert!((u - 1f64.exp()).abs() < 1e-8);
        }
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn bad_generator_exits_2_with_location() {
        let text = config(r#"{"named": "zero_driver"}"#, "[1.0, 1.0]")
            .replace("[[-1, 2], [1, -2]]", "[[-1, 2], [1.1, -2]]");
        let dir = tmp("bad");
        let o = Overrides {
            out: Some(dir.clone()),
            ..Default::default()
        };
        let out = run_text(&text, Subcommand::Solve, &o);
        assert_eq!(out.exit_code, EXIT_HYPOTHESIS);
        assert!(out.summary.contains("column 1") && out.summary.contains("segment 1"), "{}", out.summary);
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn schema_error_exits_2() {
        let out = run_text("{\"problem\": 3}", Subcommand::Solve, &Overrides::default());
        assert_eq!(out.exit_code, EXIT_HYPOTHESIS);
        assert!(out.summary.contains("problem"));
    }

    #[test]
    fn compare_rejects_unordered_terminals() {
        let text = config(r#"{"named": "zero_driver"}"#, "[-1.0, 1.0]");
        let dir = tmp("cmp");
        let o = Overrides {
            out: Some(dir.clone()),
            ..Default::default()
        };
        let out = run_text(&text, Subcommand::Compare, &o);
        assert_eq!(out.exit_code, EXIT_HYPOTHESIS);
        let _ = fs::remove_dir_all(dir);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let text = config(
            r#"{"expr": "0.5*sin(yp) - 0.2*y + 0.1*snorm(z)", "lipschitz": 0.5}"#,
            "\"i - 1.5\"",
        );
        for cmd in [Subcommand::Verify, Subcommand::Picard] {
            let read = |tag: &str| {
                let dir = tmp(&format!("det-{tag}-{}", cmd.name()));
                let o = Overrides {
                    out: Some(dir.clone()),
                    ..Default::default()
                };
                let out = run_text(&text, cmd, &o);
                let files: Vec<Vec<u8>> = out
                    .artifacts
                    .iter()
                    .map(|a| fs::read(dir.join(a)).unwrap())
                    .collect();
                fs::remove_dir_all(dir).unwrap();
                files
            };
            assert_eq!(read("a"), read("b"));
        }
    }
}
