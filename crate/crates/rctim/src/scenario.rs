//! Scenario files and tabular emission. A scenario is a TOML document with a
//! name, a seed list, an optional output path, and a `[config]` table
//! mirroring `SimulationConfig`; unknown keys are rejected so typos cannot
//! silently fall back to defaults. Suites run every seed under the selected
//! mechanisms and render rows deterministically.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{run_mechanism, Mechanism, RunResult, SimError, SimulationConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("scenario `{name}`: seeds list is empty")]
    NoSeeds { name: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed scenario: everything a suite needs. Every field has a default, so
/// an empty file runs the reference experiment on seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Output path suggestion; command-line flags take precedence.
    pub output: Option<String>,
    pub config: SimulationConfig,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            name: "scenario".to_string(),
            seeds: vec![0],
            output: None,
            config: SimulationConfig::default(),
        }
    }
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.seeds.is_empty() {
            return Err(ScenarioError::NoSeeds { name: self.name.clone() });
        }
        self.config.validate()?;
        Ok(())
    }
}

/// Parse and validate a scenario document. `origin` labels parse errors.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioFile, ScenarioError> {
    let scenario: ScenarioFile = toml::from_str(text).map_err(|source| ScenarioError::Parse {
        path: origin.to_string(),
        source,
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string())
}

/// One output row per (scenario, mechanism, seed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario: String,
    pub mechanism: Mechanism,
    pub seed: u64,
    pub total_dc_utility: f64,
    pub final_accuracy: f64,
    pub total_payments: f64,
    pub renegotiation_accepted_count: usize,
    pub rounds_completed: usize,
}

impl ResultRow {
    pub fn from_result(scenario: &str, result: &RunResult) -> Self {
        ResultRow {
            scenario: scenario.to_string(),
            mechanism: result.mechanism,
            seed: result.seed,
            total_dc_utility: result.total_dc_utility,
            final_accuracy: result.final_accuracy,
            total_payments: result.total_payments(),
            renegotiation_accepted_count: result.renegotiation_accepted(),
            rounds_completed: result.rounds_completed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutput {
    /// Sorted by (seed, mechanism); failed runs appear with zeroed metrics
    /// and `rounds_completed = 0`.
    pub rows: Vec<ResultRow>,
    /// Human-readable notes for runs that aborted or failed outright.
    pub failures: Vec<String>,
}

/// Run every seed under each selected mechanism. Seeds execute in parallel;
/// the output order does not depend on scheduling.
pub fn run_suite(scenario: &ScenarioFile, mechanisms: &[Mechanism]) -> SuiteOutput {
    let per_seed: Vec<(Vec<ResultRow>, Vec<String>)> = scenario
        .seeds
        .par_iter()
        .map(|&seed| {
            let config = SimulationConfig { seed, ..scenario.config.clone() };
            let mut rows = Vec::new();
            let mut failures = Vec::new();
            for &mechanism in mechanisms {
                match run_mechanism(&config, mechanism) {
                    Ok(result) => {
                        if let Some(msg) = &result.aborted {
                            failures.push(format!(
                                "{} seed {seed} {mechanism}: {msg}",
                                scenario.name
                            ));
                        }
                        rows.push(ResultRow::from_result(&scenario.name, &result));
                    }
                    Err(e) => {
                        failures.push(format!("{} seed {seed} {mechanism}: {e}", scenario.name));
                        rows.push(ResultRow {
                            scenario: scenario.name.clone(),
                            mechanism,
                            seed,
                            total_dc_utility: 0.0,
                            final_accuracy: 0.0,
                            total_payments: 0.0,
                            renegotiation_accepted_count: 0,
                            rounds_completed: 0,
                        });
                    }
                }
            }
            (rows, failures)
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        rows.extend(r);
        failures.extend(f);
    }
    rows.sort_by(|a, b| (a.seed, a.mechanism.as_str()).cmp(&(b.seed, b.mechanism.as_str())));
    failures.sort();
    SuiteOutput { rows, failures }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

/// Numeric rounding to six significant digits; emission goes through this so
/// CSV and JSONL carry the same values.
fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - exp);
    (x * scale).round() / scale
}

/// Fixed-point rendering of a value already rounded to six significant
/// digits.
fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str = "scenario,mechanism,seed,total_dc_utility,final_accuracy,total_payments,renegotiation_accepted_count,rounds_completed";

/// Render rows to a complete output document. CSV: fixed header, six
/// significant digits. JSONL: one object per row, same keys and values.
pub fn render(rows: &[ResultRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for row in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    csv_field(&row.scenario),
                    row.mechanism.as_str(),
                    row.seed,
                    format_sig6(round_sig6(row.total_dc_utility)),
                    format_sig6(round_sig6(row.final_accuracy)),
                    format_sig6(round_sig6(row.total_payments)),
                    row.renegotiation_accepted_count,
                    row.rounds_completed,
                ));
            }
            out
        }
        OutputFormat::Jsonl => {
            let mut out = String::new();
            for row in rows {
                let rounded = ResultRow {
                    total_dc_utility: round_sig6(row.total_dc_utility),
                    final_accuracy: round_sig6(row.final_accuracy),
                    total_payments: round_sig6(row.total_payments),
                    ..row.clone()
                };
                out.push_str(&serde_json::to_string(&rounded).expect("row serializes"));
                out.push('\n');
            }
            out
        }
    }
}

pub fn emit(
    rows: &[ResultRow],
    format: OutputFormat,
    path: impl AsRef<Path>,
) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    std::fs::write(path, render(rows, format)).map_err(|source| ScenarioError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_document_gives_the_reference_defaults() {
        let s = parse_scenario("", "<inline>").unwrap();
        assert_eq!(s.name, "scenario");
        assert_eq!(s.seeds, vec![0]);
        assert_eq!(s.config.total_rounds, 50);
        assert_eq!(s.config.num_dos, 45);
        assert_eq!(s.config.num_types, 10);
        assert_relative_eq!(s.config.budget, 400.0);
    }

    // what a CLI user sees: the message plus every source in the chain
    fn rendered(err: &dyn std::error::Error) -> String {
        let mut out = err.to_string();
        let mut cur = err.source();
        while let Some(e) = cur {
            out.push_str(": ");
            out.push_str(&e.to_string());
            cur = e.source();
        }
        out
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = parse_scenario("foo = 1", "<inline>").unwrap_err();
        assert!(rendered(&err).contains("foo"), "error was: {}", rendered(&err));
        let err = parse_scenario("[config]\nbudgett = 4.0", "<inline>").unwrap_err();
        assert!(rendered(&err).contains("budgett"), "error was: {}", rendered(&err));
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let err = parse_scenario("[config]\npartition = 4", "<inline>").unwrap_err();
        assert!(err.to_string().contains("partition"), "error was: {err}");
        let err = parse_scenario("seeds = []", "<inline>").unwrap_err();
        assert!(matches!(err, ScenarioError::NoSeeds { .. }));
    }

    fn small_scenario() -> ScenarioFile {
        parse_scenario(
            r#"
            name = "small"
            seeds = [1, 2, 3]
            [config]
            total_rounds = 4
            num_dos = 3
            num_types = 2
            partition = 2
            grid_points = 24
            "#,
            "<inline>",
        )
        .unwrap()
    }

    #[test]
    fn three_seeds_produce_six_sorted_rows() {
        let suite = run_suite(&small_scenario(), &[Mechanism::Rctim, Mechanism::Static]);
        assert_eq!(suite.rows.len(), 6);
        assert!(suite.failures.is_empty());
        let keys: Vec<(u64, &str)> =
            suite.rows.iter().map(|r| (r.seed, r.mechanism.as_str())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(keys[0], (1, "rctim"));
        assert_eq!(keys[1], (1, "static"));
    }

    #[test]
    fn suites_rerun_byte_identically() {
        let scenario = small_scenario();
        let mechs = [Mechanism::Rctim, Mechanism::Static];
        let a = render(&run_suite(&scenario, &mechs).rows, OutputFormat::Csv);
        let b = render(&run_suite(&scenario, &mechs).rows, OutputFormat::Csv);
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
    }

    #[test]
    fn failed_runs_become_zero_rows_and_the_suite_continues() {
        let mut scenario = small_scenario();
        // a budget no menu can satisfy (fixed upload cost alone exceeds it)
        scenario.config.budget = 1e-12;
        let suite = run_suite(&scenario, &[Mechanism::Rctim]);
        assert_eq!(suite.rows.len(), 3);
        assert!(!suite.failures.is_empty());
        assert!(suite.rows.iter().all(|r| r.rounds_completed == 0));
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(round_sig6(77.20123456)), "77.2012");
        assert_eq!(format_sig6(round_sig6(0.5)), "0.500000");
        assert_eq!(format_sig6(round_sig6(0.000123456789)), "0.000123457");
        assert_eq!(format_sig6(round_sig6(-1234567.89)), "-1234570");
        assert_eq!(format_sig6(round_sig6(400.0)), "400.000");
        assert_eq!(format_sig6(round_sig6(0.0)), "0");
    }

    #[test]
    fn csv_quotes_awkward_names() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn csv_and_jsonl_carry_equal_values() {
        let suite = run_suite(&small_scenario(), &[Mechanism::Rctim, Mechanism::Static]);
        let csv = render(&suite.rows, OutputFormat::Csv);
        let jsonl = render(&suite.rows, OutputFormat::Jsonl);
        let csv_lines: Vec<&str> = csv.lines().skip(1).collect();
        let json_lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(csv_lines.len(), json_lines.len());
        for (c, j) in csv_lines.iter().zip(&json_lines) {
            let fields: Vec<&str> = c.split(',').collect();
            let v: serde_json::Value = serde_json::from_str(j).unwrap();
            assert_eq!(fields[0], v["scenario"].as_str().unwrap());
            assert_eq!(fields[1], v["mechanism"].as_str().unwrap());
            assert_eq!(fields[2].parse::<u64>().unwrap(), v["seed"].as_u64().unwrap());
            for (i, key) in
                ["total_dc_utility", "final_accuracy", "total_payments"].iter().enumerate()
            {
                let from_csv: f64 = fields[3 + i].parse().unwrap();
                assert_relative_eq!(from_csv, v[*key].as_f64().unwrap(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_rows_render_to_a_bare_header() {
        assert_eq!(render(&[], OutputFormat::Csv), format!("{CSV_HEADER}\n"));
        assert_eq!(render(&[], OutputFormat::Jsonl), "");
    }

    #[test]
    fn emitted_payments_stay_within_budget() {
        let scenario = small_scenario();
        let suite = run_suite(&scenario, &[Mechanism::Rctim, Mechanism::Static]);
        for row in &suite.rows {
            assert!(row.total_payments <= scenario.config.budget);
        }
    }
}
