//! Scenario files: a market plus one experiment and its parameters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deflator::{
    analytic_deflator_expectation, solve_deflator, AnalyticExpectation, DeflatorSolution,
};
use crate::error::{Error, Result};
use crate::gop::{solve_gop, GopSolution};
use crate::market::{
    classify_regime, validate_market, MarketRegime, MarketSpec, RegimeReport, ValidationReport,
};
use crate::mc::{
    estimate_terminal_expectation, growth_dominance_test, pairwise_sum, supermartingale_sweep,
    DominanceReport, Functional, McConfig, McReport, SweepReport, Verdict,
};
use crate::path::SimulatedPath;
use crate::simulate::{
    simulate_assets, write_csv_header, write_csv_rows, PathDump, PathFormula, Strategy,
};

pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_STRATEGIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Validate,
    Gop,
    Simulate,
    MartingaleTest,
    SupermartingaleSweep,
    Dominance,
    SolveDeflator,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub experiment: Experiment,
    pub market: MarketSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub antithetic: bool,
    /// Evaluation time for expectations; defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<Functional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_strategies: Option<usize>,
    /// Grid steps for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default)]
    pub outputs: Outputs,
}

const BUILTIN: [(&str, &str); 4] = [
    ("elmm-regime", include_str!("../scenarios/elmm-regime.json")),
    (
        "gop-nonexistent",
        include_str!("../scenarios/gop-nonexistent.json"),
    ),
    (
        "constrained-strict",
        include_str!("../scenarios/constrained-strict.json"),
    ),
    (
        "constrained-binding",
        include_str!("../scenarios/constrained-binding.json"),
    ),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(name, _)| *name).collect()
}

pub fn builtin(name: &str) -> Result<Scenario> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown built-in scenario {name:?}")))?;
    Scenario::from_json_str(text).map_err(|e| match e {
        Error::Json(source) => Error::Parse {
            path: PathBuf::from(format!("builtin:{name}")),
            source,
        },
        other => other,
    })
}

impl Scenario {
    /// Wraps a bare market.
    pub fn for_market(market: MarketSpec, experiment: Experiment) -> Self {
        Scenario {
            name: String::new(),
            experiment,
            market,
            n_paths: None,
            seed: None,
            antithetic: false,
            t: None,
            checkpoints: None,
            strategy: None,
            functional: None,
            n_strategies: None,
            steps: None,
            outputs: Outputs::default(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_owned(),
            source,
        })?;
        scenario.check()?;
        Ok(scenario)
    }

    fn check(&self) -> Result<()> {
        self.market.check_structure()?;
        if self.n_paths == Some(0) {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> McConfig {
        McConfig {
            n_paths: self.n_paths.unwrap_or(DEFAULT_PATHS),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            antithetic: self.antithetic,
        }
    }

    fn checkpoints(&self) -> Vec<f64> {
        self.checkpoints.clone().unwrap_or_else(|| {
            [0.25, 0.5, 0.75, 1.0]
                .iter()
                .map(|f| f * self.market.horizon)
                .collect()
        })
    }

    fn strategy(&self) -> Strategy {
        self.strategy
            .clone()
            .unwrap_or_else(|| Strategy::cash(self.market.d))
    }
}

/// Either a scenario or a bare market, detected by the `market` key.
pub fn load_input(path: &Path, experiment: Experiment) -> Result<Scenario> {
    let text = read(path)?;
    let parse_err = |source| Error::Parse {
        path: path.to_owned(),
        source,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    if value.get("market").is_some() {
        Scenario::from_path(path)
    } else {
        let market: MarketSpec = serde_json::from_str(&text).map_err(parse_err)?;
        market.check_structure()?;
        Ok(Scenario::for_market(market, experiment))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub total_jumps: Vec<usize>,
    pub tie_shifts: usize,
    /// Sample means of the terminal values.
    pub mean_terminal_assets: Vec<f64>,
    pub mean_terminal_gop: f64,
    pub mean_terminal_deflator: f64,
    pub absorbed_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Report {
    Validate {
        validation: ValidationReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        regime: Option<RegimeReport>,
    },
    Gop {
        regime: RegimeReport,
        gop: GopSolution,
    },
    Simulate(SimulationSummary),
    MartingaleTest {
        regime: MarketRegime,
        expected: Verdict,
        result: McReport,
    },
    SupermartingaleSweep {
        strategy: Strategy,
        result: SweepReport,
    },
    Dominance(DominanceReport),
    SolveDeflator {
        solution: DeflatorSolution,
        #[serde(skip_serializing_if = "Option::is_none")]
        analytic: Option<AnalyticExpectation>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    #[serde(flatten)]
    pub report: Report,
    /// Set when the outcome contradicts the analytic regime.
    pub contradiction: bool,
}

impl ScenarioReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Runs the scenario's experiment, writing the path CSV if requested.
pub fn run(scenario: &Scenario) -> Result<ScenarioReport> {
    let spec = &scenario.market;
    let t = scenario.t.unwrap_or(spec.horizon);
    let (report, contradiction) = match scenario.experiment {
        Experiment::Validate => {
            let validation = validate_market(spec)?;
            let regime = if validation.valid {
                Some(classify_regime(spec)?)
            } else {
                None
            };
            (Report::Validate { validation, regime }, false)
        }
        Experiment::Gop => (
            Report::Gop {
                regime: classify_regime(spec)?,
                gop: solve_gop(spec)?,
            },
            false,
        ),
        Experiment::Simulate => (Report::Simulate(simulate(scenario)?), false),
        Experiment::MartingaleTest => {
            let functional = scenario.functional.clone().unwrap_or(Functional::Deflator);
            let result = estimate_terminal_expectation(spec, &functional, t, &scenario.config())?;
            let regime = analytic_deflator_expectation(spec, t)?.regime;
            let expected = match regime {
                MarketRegime::StrictSupermartingale => Verdict::StrictSupermartingale,
                _ => Verdict::ConsistentWithMartingale,
            };
            let contradiction =
                result.verdict != expected || result.reference_within_3se == Some(false);
            (
                Report::MartingaleTest {
                    regime,
                    expected,
                    result,
                },
                contradiction,
            )
        }
        Experiment::SupermartingaleSweep => {
            let strategy = scenario.strategy();
            let result = supermartingale_sweep(
                spec,
                &strategy,
                &scenario.checkpoints(),
                &scenario.config(),
            )?;
            let contradiction = !result.nonincreasing;
            (
                Report::SupermartingaleSweep { strategy, result },
                contradiction,
            )
        }
        Experiment::Dominance => {
            let n = scenario.n_strategies.unwrap_or(DEFAULT_STRATEGIES);
            let result = growth_dominance_test(spec, n, scenario.seed.unwrap_or(DEFAULT_SEED))?;
            let contradiction = result.violations > 0;
            (Report::Dominance(result), contradiction)
        }
        Experiment::SolveDeflator => {
            let solution = solve_deflator(spec)?;
            let analytic = analytic_deflator_expectation(spec, t).ok();
            (Report::SolveDeflator { solution, analytic }, false)
        }
    };
    Ok(ScenarioReport {
        scenario: scenario.name.clone(),
        report,
        contradiction,
    })
}

struct PathRecord {
    csv: Vec<u8>,
    terminal_assets: Vec<f64>,
    terminal_gop: f64,
    terminal_deflator: f64,
    jumps: Vec<usize>,
    tie_shifts: usize,
    absorbed: bool,
}

fn simulate(scenario: &Scenario) -> Result<SimulationSummary> {
    let spec = &scenario.market;
    let report = validate_market(spec)?;
    if !report.valid {
        return Err(Error::InvalidMarket(format!("{:?}", report.violations)));
    }
    let gop = solve_gop(spec)?;
    let formula = PathFormula::gop(spec, &gop)?;
    let steps = scenario.steps.unwrap_or(DEFAULT_STEPS);
    let config = scenario.config();
    let dump = scenario.outputs.paths_csv.is_some();

    let records: Vec<PathRecord> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = SimulatedPath::generate(spec, steps, config.seed, i)?;
            let assets = simulate_assets(spec, &path)?;
            let gop_path = formula.evaluate(&path);
            let deflator = gop_path.reciprocal();
            let mut csv = Vec::new();
            if dump {
                write_csv_rows(
                    &mut csv,
                    &PathDump {
                        path_id: i,
                        path: &path,
                        assets: &assets,
                        gop: &gop_path,
                        deflator: &deflator,
                    },
                )
                .expect("writing to memory");
            }
            Ok(PathRecord {
                csv,
                terminal_assets: assets.iter().map(|a| a.terminal()).collect(),
                terminal_gop: gop_path.terminal(),
                terminal_deflator: deflator.terminal(),
                jumps: (0..spec.n_jumps()).map(|k| path.jump_count(k)).collect(),
                tie_shifts: path.tie_shifts,
                absorbed: assets.iter().any(|a| a.absorbed),
            })
        })
        .collect::<Result<_>>()?;

    if let Some(out) = &scenario.outputs.paths_csv {
        let io_err = |source| Error::Io {
            path: out.clone(),
            source,
        };
        let mut file = std::io::BufWriter::new(fs::File::create(out).map_err(io_err)?);
        write_csv_header(&mut file, spec.d).map_err(io_err)?;
        for r in &records {
            file.write_all(&r.csv).map_err(io_err)?;
        }
        file.flush().map_err(io_err)?;
    }

    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&PathRecord) -> f64| {
        pairwise_sum(&records.iter().map(f).collect::<Vec<_>>()) / n
    };
    Ok(SimulationSummary {
        n_paths: records.len(),
        steps,
        seed: config.seed,
        total_jumps: (0..spec.n_jumps())
            .map(|k| records.iter().map(|r| r.jumps[k]).sum())
            .collect(),
        tie_shifts: records.iter().map(|r| r.tie_shifts).sum(),
        mean_terminal_assets: (0..spec.d)
            .map(|j| mean(&|r: &PathRecord| r.terminal_assets[j]))
            .collect(),
        mean_terminal_gop: mean(&|r: &PathRecord| r.terminal_gop),
        mean_terminal_deflator: mean(&|r: &PathRecord| r.terminal_deflator),
        absorbed_paths: records.iter().filter(|r| r.absorbed).count(),
    })
}
