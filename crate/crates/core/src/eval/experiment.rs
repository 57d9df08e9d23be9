//! Experiment grid: repetitions x dataset sizes x window x algorithm x N.
//!
//! Seeds: the behavior policy is trained from `derive(master, [BEHAVIOR])`.
//! Repetition `r` owns `rep = derive(master, [r])` and collects its dataset
//! of size `n` from `derive(rep, [COLLECT, n])`. Every rollout (behavior,
//! reference optimum and each improved policy) uses the same evaluation
//! stream `derive(master, [EVAL])`: common random numbers, so differences
//! between repetitions come from the datasets and identical policies get
//! identical estimates.
//!
//! Outputs (when `output` is set): `results.csv` with one row per
//! (repetition, size, k', algorithm, N) cell, `summary.csv` with the
//! aggregates, `plots/<env>_k<k>_n<N>_kp<k'>.csv` per panel and
//! `manifest.json` with the resolved parameters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cvar, normalized_improvement, reference_optimum, rollout_performance};
use crate::behavior::{train_behavior, QLearnConfig};
use crate::data::collect_dataset;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fsc::Fsc;
use crate::rng::{derive_seed, phase, seeded};
use crate::spi::{estimate_for_window, Algorithm, SafetyReport, SpibbConfig};

pub const DEFAULT_N_WEDGE_GRID: [u64; 9] = [5, 7, 10, 15, 20, 30, 50, 70, 100];
pub const FULL_TRAJECTORY_GRID: [usize; 13] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000];

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Behavior window.
    pub k: usize,
    pub k_prime_grid: Vec<usize>,
    pub n_wedge_grid: Vec<u64>,
    pub trajectory_grid: Vec<usize>,
    pub repetitions: usize,
    pub eval_episodes: usize,
    /// Rollouts for the behavior and reference-optimum values.
    pub reference_episodes: usize,
    pub delta: f64,
    pub v_max: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub qlearn: QLearnConfig,
    pub tau: f64,
    /// Fixed behavior controller; trained with `qlearn` when absent.
    pub behavior: Option<Fsc>,
    /// Window of the reference optimum; `max(k') + 1` when absent.
    pub k_max: Option<usize>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale grid: 50 repetitions, 2000 evaluation episodes, sizes
    /// {10, 100, 1000}, `k' in {k, k+1}`.
    pub fn desk(env: EnvSpec, k: usize) -> Self {
        ExperimentConfig {
            k,
            k_prime_grid: vec![k, k + 1],
            n_wedge_grid: DEFAULT_N_WEDGE_GRID.to_vec(),
            trajectory_grid: vec![10, 100, 1000],
            repetitions: 50,
            eval_episodes: 2000,
            reference_episodes: 2000,
            delta: 0.05,
            v_max: env.v_max(),
            seed: 0,
            max_steps: crate::DEFAULT_MAX_STEPS,
            qlearn: QLearnConfig { k, ..QLearnConfig::default() },
            tau: env.softmax_tau(),
            behavior: None,
            k_max: None,
            threads: None,
            output: None,
            env,
        }
    }

    /// Full grid: 500 repetitions, 10000 evaluation episodes, 13 sizes.
    pub fn full_scale(env: EnvSpec, k: usize) -> Self {
        ExperimentConfig {
            trajectory_grid: FULL_TRAJECTORY_GRID.to_vec(),
            repetitions: 500,
            eval_episodes: 10000,
            reference_episodes: 10000,
            ..Self::desk(env, k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_prime_grid.is_empty()
            || self.n_wedge_grid.is_empty()
            || self.trajectory_grid.is_empty()
            || self.repetitions == 0
            || self.eval_episodes == 0
            || self.reference_episodes == 0
            || self.k == 0
            || self.k_prime_grid.contains(&0)
        {
            return Err(Error::InvalidParameter(
                "experiment grids must be nonempty and counts positive".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.v_max >= 0.0) || !(self.tau > 0.0) {
            return Err(Error::InvalidParameter("invalid delta, v_max or tau".into()));
        }
        Ok(())
    }

    fn spibb(&self, n_wedge: u64, k_prime: usize) -> SpibbConfig {
        SpibbConfig {
            n_wedge,
            delta: self.delta,
            k_prime,
            v_max: self.v_max,
            tol: crate::DEFAULT_TOL,
            max_policy_iterations: 1000,
        }
    }
}

/// One cell of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub env: String,
    pub k: usize,
    pub k_prime: usize,
    pub algorithm: String,
    pub n_wedge: u64,
    pub size: usize,
    pub rep: usize,
    pub steps: usize,
    pub rho: Option<f64>,
    pub rho_stderr: Option<f64>,
    pub rho_bar: Option<f64>,
    pub zeta: Option<f64>,
    pub epsilon: Option<f64>,
    pub rho_improved_mle: Option<f64>,
    pub rho_behavior_mle: Option<f64>,
    pub state_count: usize,
    pub action_count: usize,
    pub obs_count: usize,
    pub delta: f64,
    pub v_max: f64,
    pub gamma: f64,
    pub behavior_rho: f64,
    pub max_rho: f64,
    pub error: String,
}

/// Aggregate over repetitions of one (k', algorithm, N, size) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub k: usize,
    pub k_prime: usize,
    pub algorithm: String,
    pub n_wedge: u64,
    pub size: usize,
    pub count: usize,
    pub errors: usize,
    pub mean: Option<f64>,
    pub cvar10: Option<f64>,
    pub cvar1: Option<f64>,
    pub rho_bar: Option<f64>,
    pub zeta_mean: Option<f64>,
    pub behavior_rho: f64,
    pub max_rho: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub behavior_rho: f64,
    pub behavior_stderr: f64,
    pub max_rho: f64,
    pub max_stderr: f64,
}

impl EvalReport {
    pub fn find(&self, algorithm: Algorithm, k_prime: usize, n_wedge: u64, size: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| {
            r.algorithm == algorithm.name() && r.k_prime == k_prime && r.n_wedge == n_wedge && r.size == size
        })
    }

    pub fn write_results_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_rows(&self.rows, out)
    }

    pub fn write_summary_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_rows(&self.summary, out)
    }

    /// Plot panels keyed by file name, each with columns
    /// `algorithm,size,mean,cvar10,cvar1,behavior_rho`.
    pub fn plot_panels(&self) -> BTreeMap<String, Vec<PlotRow>> {
        let mut panels: BTreeMap<String, Vec<PlotRow>> = BTreeMap::new();
        for r in &self.summary {
            let name = format!("{}_k{}_n{}_kp{}.csv", r.env, r.k, r.n_wedge, r.k_prime);
            panels.entry(name).or_default().push(PlotRow {
                algorithm: r.algorithm.clone(),
                size: r.size,
                mean: r.mean,
                cvar10: r.cvar10,
                cvar1: r.cvar1,
                behavior_rho: r.behavior_rho,
            });
        }
        panels
    }

    /// Write `results.csv`, `summary.csv` and `plots/` under `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("plots"))?;
        self.write_results_csv(std::fs::File::create(dir.join("results.csv"))?)?;
        self.write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?)?;
        for (name, rows) in self.plot_panels() {
            write_rows(&rows, std::fs::File::create(dir.join("plots").join(name))?)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub algorithm: String,
    pub size: usize,
    pub mean: Option<f64>,
    pub cvar10: Option<f64>,
    pub cvar1: Option<f64>,
    pub behavior_rho: f64,
}

fn write_rows<T: Serialize>(rows: &[T], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(input: impl std::io::Read) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Group rows by (env, k, k', algorithm, N, size) and aggregate the
/// successful ones.
pub fn aggregate(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (String, usize, usize, String, u64, usize);
    let groups = rows.iter().fold(BTreeMap::<Key, Vec<&ResultRow>>::new(), |mut acc, r| {
        let key = (r.env.clone(), r.k, r.k_prime, r.algorithm.clone(), r.n_wedge, r.size);
        acc.entry(key).or_default().push(r);
        acc
    });
    groups
        .into_iter()
        .map(|((env, k, k_prime, algorithm, n_wedge, size), group)| {
            let rhos: Vec<f64> = group.iter().filter_map(|r| r.rho).collect();
            let bars: Vec<f64> = group.iter().filter_map(|r| r.rho_bar).collect();
            let zetas: Vec<f64> = group.iter().filter_map(|r| r.zeta).collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            SummaryRow {
                env,
                k,
                k_prime,
                algorithm,
                n_wedge,
                size,
                count: rhos.len(),
                errors: group.len() - rhos.len(),
                mean: mean(&rhos),
                cvar10: cvar(&rhos, 10.0).ok(),
                cvar1: cvar(&rhos, 1.0).ok(),
                rho_bar: mean(&bars),
                zeta_mean: mean(&zetas),
                behavior_rho: group[0].behavior_rho,
                max_rho: group[0].max_rho,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    env: &'a str,
    env_params: &'a BTreeMap<String, f64>,
    discount: f64,
    k: usize,
    k_prime_grid: &'a [usize],
    n_wedge_grid: &'a [u64],
    trajectory_grid: &'a [usize],
    repetitions: usize,
    eval_episodes: usize,
    reference_episodes: usize,
    delta: f64,
    v_max: f64,
    seed: u64,
    max_steps: usize,
    qlearn: &'a QLearnConfig,
    tau: f64,
    behavior_supplied: bool,
    k_max: usize,
    behavior_rho: f64,
    behavior_stderr: f64,
    max_rho: f64,
    max_stderr: f64,
    version: &'a str,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    behavior: &'a Fsc,
    behavior_rho: f64,
    max_rho: f64,
    eval_seed: u64,
}

impl Context<'_> {
    fn row(&self, k_prime: usize, algorithm: Algorithm, n_wedge: u64, size: usize, rep: usize) -> ResultRow {
        let cfg = self.cfg;
        let pomdp = &cfg.env.pomdp;
        ResultRow {
            env: cfg.env.name.clone(),
            k: cfg.k,
            k_prime,
            algorithm: algorithm.name().into(),
            n_wedge,
            size,
            rep,
            steps: 0,
            rho: None,
            rho_stderr: None,
            rho_bar: None,
            zeta: None,
            epsilon: None,
            rho_improved_mle: None,
            rho_behavior_mle: None,
            state_count: 0,
            action_count: pomdp.num_actions(),
            obs_count: pomdp.num_observations(),
            delta: cfg.delta,
            v_max: cfg.v_max,
            gamma: pomdp.discount,
            behavior_rho: self.behavior_rho,
            max_rho: self.max_rho,
            error: String::new(),
        }
    }

    /// Every (k', algorithm, N) row of one (repetition, size) cell.
    fn cell(&self, rep: usize, size: usize) -> Vec<ResultRow> {
        let cfg = self.cfg;
        let rep_seed = derive_seed(cfg.seed, &[rep as u64]);
        let dataset = collect_dataset(
            &cfg.env,
            self.behavior,
            size,
            cfg.max_steps,
            derive_seed(rep_seed, &[phase::COLLECT, size as u64]),
        )
        .map_err(|e| e.to_string());
        let mut rows = Vec::new();
        for &k_prime in &cfg.k_prime_grid {
            let estimate = dataset
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|d| {
                    estimate_for_window(d, self.behavior, k_prime, cfg.env.pomdp.discount)
                        .map(|e| (d, e))
                        .map_err(|e| e.to_string())
                });
            for algorithm in [Algorithm::Spibb, Algorithm::BasicRl] {
                // BasicRL does not depend on N: solve and roll out once.
                let mut basic: Option<std::result::Result<(f64, f64, SafetyReport), String>> = None;
                for &n_wedge in &cfg.n_wedge_grid {
                    let mut row = self.row(k_prime, algorithm, n_wedge, size, rep);
                    let outcome = match (&estimate, algorithm, &basic) {
                        (Err(e), _, _) => Err(e.clone()),
                        (Ok(_), Algorithm::BasicRl, Some(done)) => done.clone(),
                        (Ok((_, est)), _, _) => {
                            let spibb = cfg.spibb(n_wedge, k_prime);
                            est.improve(algorithm, &spibb).and_then(|(policy, report)| {
                                rollout_performance(&cfg.env, &policy, cfg.eval_episodes, cfg.max_steps, self.eval_seed)
                                    .map(|(m, se)| (m, se, report))
                            })
                            .map_err(|e| e.to_string())
                        }
                    };
                    if algorithm == Algorithm::BasicRl && basic.is_none() {
                        basic = Some(outcome.clone());
                    }
                    if let Ok((d, _)) = &estimate {
                        row.steps = d.num_steps();
                    }
                    match outcome {
                        Ok((mean, se, report)) => {
                            row.rho = Some(mean);
                            row.rho_stderr = Some(se);
                            row.rho_bar = normalized_improvement(mean, self.behavior_rho, self.max_rho).ok();
                            row.zeta = report.zeta;
                            row.epsilon = report.epsilon;
                            row.rho_improved_mle = Some(report.rho_improved_mle);
                            row.rho_behavior_mle = Some(report.rho_behavior_mle);
                            row.state_count = report.inputs.state_count;
                        }
                        Err(e) => row.error = e,
                    }
                    rows.push(row);
                }
            }
        }
        rows
    }
}

/// Run the grid, writing the CSV outputs when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| run_inner(cfg)),
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<EvalReport> {
    let env = &cfg.env;
    let behavior = match &cfg.behavior {
        Some(b) => b.clone(),
        None => {
            let seed = derive_seed(cfg.seed, &[phase::BEHAVIOR]);
            let q = QLearnConfig { k: cfg.k, seed, ..cfg.qlearn.clone() };
            train_behavior(env, &q, cfg.tau, &mut seeded(seed))?.0
        }
    };
    if behavior.window() != Some(cfg.k) {
        return Err(Error::InvalidParameter(format!(
            "behavior controller is not a {}-window controller",
            cfg.k
        )));
    }
    let eval_seed = derive_seed(cfg.seed, &[phase::EVAL]);
    let (behavior_rho, behavior_stderr) =
        rollout_performance(env, &behavior, cfg.reference_episodes, cfg.max_steps, eval_seed)?;
    let k_max = cfg
        .k_max
        .unwrap_or_else(|| cfg.k_prime_grid.iter().copied().max().unwrap_or(cfg.k) + 1);
    let reference = reference_optimum(
        env,
        k_max,
        cfg.reference_episodes,
        cfg.max_steps,
        eval_seed,
    )?;
    let ctx = Context {
        cfg,
        behavior: &behavior,
        behavior_rho,
        max_rho: reference.rho,
        eval_seed,
    };
    let cells: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|r| cfg.trajectory_grid.iter().map(move |&n| (r, n)))
        .collect();
    let rows: Vec<ResultRow> = cells
        .par_iter()
        .map(|&(rep, size)| ctx.cell(rep, size))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let report = EvalReport {
        summary: aggregate(&rows),
        rows,
        behavior_rho,
        behavior_stderr,
        max_rho: reference.rho,
        max_stderr: reference.stderr,
    };
    if let Some(dir) = &cfg.output {
        report.write_outputs(dir)?;
        let manifest = Manifest {
            env: &env.name,
            env_params: &env.param_overrides,
            discount: env.pomdp.discount,
            k: cfg.k,
            k_prime_grid: &cfg.k_prime_grid,
            n_wedge_grid: &cfg.n_wedge_grid,
            trajectory_grid: &cfg.trajectory_grid,
            repetitions: cfg.repetitions,
            eval_episodes: cfg.eval_episodes,
            reference_episodes: cfg.reference_episodes,
            delta: cfg.delta,
            v_max: cfg.v_max,
            seed: cfg.seed,
            max_steps: cfg.max_steps,
            qlearn: &cfg.qlearn,
            tau: cfg.tau,
            behavior_supplied: cfg.behavior.is_some(),
            k_max,
            behavior_rho,
            behavior_stderr,
            max_rho: reference.rho,
            max_stderr: reference.stderr,
            version: env!("CARGO_PKG_VERSION"),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        behavior.save(dir.join("behavior.json"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_tiger;
    use crate::fsc::make_k_window_fsc;
    use crate::spi::zeta_bound;

    fn small(seed: u64) -> ExperimentConfig {
        let env = make_tiger(0.85).unwrap();
        let behavior = make_k_window_fsc(2, 2, 3)
            .unwrap()
            .with_action_map(vec![vec![0.8, 0.1, 0.1]; 6])
            .unwrap();
        ExperimentConfig {
            k_prime_grid: vec![2],
            n_wedge_grid: vec![0, 5],
            trajectory_grid: vec![20],
            repetitions: 2,
            eval_episodes: 200,
            reference_episodes: 200,
            seed,
            behavior: Some(behavior),
            k_max: Some(2),
            ..ExperimentConfig::desk(env, 2)
        }
    }

    #[test]
    fn row_count() {
        let mut cfg = small(1);
        cfg.repetitions = 1;
        cfg.n_wedge_grid = vec![5];
        cfg.k_prime_grid = vec![2, 3];
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2 * 2);
        assert!(r.rows.iter().all(|row| row.error.is_empty()));
    }

    #[test]
    fn zero_wedge_spibb_equals_basic_rl() {
        let r = run_experiment(&small(2)).unwrap();
        for rep in 0..2 {
            let get = |alg: &str| {
                r.rows
                    .iter()
                    .find(|row| row.rep == rep && row.algorithm == alg && row.n_wedge == 0)
                    .unwrap()
                    .rho
            };
            assert_eq!(get("SPIBB"), get("BasicRL"));
        }
    }

    #[test]
    fn stored_zeta_recomputes() {
        let r = run_experiment(&small(3)).unwrap();
        for row in r.rows.iter().filter(|row| row.n_wedge > 0 && row.algorithm == "SPIBB") {
            let inputs = crate::spi::BoundInputs {
                variant: crate::spi::BoundVariant::FiniteHistory,
                state_count: row.state_count,
                action_count: row.action_count,
                obs_count: row.obs_count,
                n_wedge: row.n_wedge,
                delta: row.delta,
                v_max: row.v_max,
                gamma: row.gamma,
                rho_improved_mle: row.rho_improved_mle.unwrap(),
                rho_behavior_mle: row.rho_behavior_mle.unwrap(),
            };
            assert_eq!(zeta_bound(&inputs).unwrap().zeta, row.zeta);
        }
    }

    #[test]
    fn aggregation_recomputes_from_csv() {
        let r = run_experiment(&small(4)).unwrap();
        let mut buf = Vec::new();
        r.write_results_csv(&mut buf).unwrap();
        let rows = read_results_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, r.rows);
        assert_eq!(aggregate(&rows), r.summary);
    }

    #[test]
    fn outputs_are_deterministic() {
        let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        for d in &dirs {
            let mut cfg = small(5);
            cfg.output = Some(d.path().to_path_buf());
            run_experiment(&cfg).unwrap();
        }
        for f in ["results.csv", "summary.csv", "manifest.json", "plots/tiger_k2_n5_kp2.csv"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }

    #[test]
    fn invalid_config() {
        let mut cfg = small(1);
        cfg.trajectory_grid.clear();
        assert!(run_experiment(&cfg).is_err());
    }
}
