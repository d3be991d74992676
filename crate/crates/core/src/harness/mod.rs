//! Monte-Carlo experiments: configuration, replication streams, risk
//! estimation and exponent fits.

pub mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{ScalingBasis, DEFAULT_DEPTH, DEFAULT_WAVELET};
use crate::error::{Error, Result};
use crate::estimator::{estimate, projected_t, DeltaPolicy};
use crate::families::{FamilyConfig, FamilyModel};
use crate::lepski::{self, LambdaChoice, LambdaMode, LevelGrid};
use crate::oracle::{PosteriorSpec, PriorConfig, PriorModel};
use crate::stats::{self, LinearFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_wavelet")]
    pub name: String,
    #[serde(default = "default_depth")]
    pub depth: u32,
}

fn default_wavelet() -> String {
    DEFAULT_WAVELET.to_string()
}

fn default_depth() -> u32 {
    DEFAULT_DEPTH
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            name: default_wavelet(),
            depth: default_depth(),
        }
    }
}

/// Which candidate levels the oracle and Lepski policies search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridChoice {
    /// `1..=⌊log₂ n⌋ − 1`.
    #[default]
    Desk,
    /// `m₁..=m_n` from the sample size and `γ_m²`.
    Asymptotic,
}

fn default_lambda_mode() -> LambdaMode {
    LambdaMode::Calibrated
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PolicyConfig {
    Fixed {
        m: i32,
    },
    Oracle {
        r: f64,
        #[serde(default)]
        grid: GridChoice,
    },
    Lepski {
        #[serde(default = "default_lambda_mode")]
        lambda_mode: LambdaMode,
        #[serde(default = "one")]
        lambda_mult: f64,
        #[serde(default)]
        grid: GridChoice,
        /// Bound on `|Ψ|` for theoretical λ when θ is unbounded.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi_sup: Option<f64>,
    },
}

impl PolicyConfig {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyConfig::Fixed { .. } => "fixed",
            PolicyConfig::Oracle { .. } => "oracle",
            PolicyConfig::Lepski { .. } => "lepski",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilyConfig,
    pub prior: PriorConfig,
    pub y_points: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub policy: PolicyConfig,
    pub seed: u64,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub diagnostics: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks the structural invariants and builds the model objects.
    pub fn resolve(&self) -> Result<(PosteriorSpec, ScalingBasis)> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.y_points.is_empty() || self.n_grid.is_empty() {
            return Err(Error::Config("y_points and n_grid must be non-empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        for &n in &self.n_grid {
            let m1 = (n as f64).ln().log2().ceil().max(1.0) as i32;
            if n < 4 || (n as f64) <= 2f64.powi(m1) {
                return Err(Error::Config(format!("sample size {n} is too small")));
            }
            if let PolicyConfig::Fixed { m } = self.policy {
                if m < 0 || 2f64.powi(m) >= n as f64 {
                    return Err(Error::Config(format!("fixed level {m} needs 0 ≤ m and 2^m < n = {n}")));
                }
            }
        }
        match self.policy {
            PolicyConfig::Oracle { r, .. } if !(r > 0.0) => {
                return Err(Error::Config(format!("oracle smoothness must be positive, got {r}")))
            }
            PolicyConfig::Lepski { lambda_mult, .. } if !(lambda_mult > 0.0) => {
                return Err(Error::Config(format!("lambda_mult must be positive, got {lambda_mult}")))
            }
            _ => {}
        }
        let family = FamilyModel::from_config(&self.family)?;
        let prior = PriorModel::from_config(&self.prior)?;
        for &y in &self.y_points {
            family.check_y(y)?;
        }
        let spec = PosteriorSpec::new(family, prior)?;
        let basis = ScalingBasis::build(&self.basis.name, self.basis.depth)?;
        Ok((spec, basis))
    }
}

/// Independent stream for replication `rep` at the `yi`-th y point and
/// `ni`-th sample size: the ChaCha key is the concatenation of the four
/// counters.
pub fn replication_rng(seed: u64, yi: usize, ni: usize, rep: usize) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([seed, yi as u64, ni as u64, rep as u64]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}

/// Draws `θ_i` from the prior and `X_i ~ q(·|θ_i)`.
pub fn draw_sample<R: Rng + ?Sized>(family: &FamilyModel, prior: &PriorModel, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let theta = prior.sample(rng);
            family.sample(theta, rng)
        })
        .collect()
}

fn grid_for(choice: GridChoice, n: usize, gamma: &BTreeMap<i32, f64>) -> Result<LevelGrid> {
    match choice {
        GridChoice::Desk => LevelGrid::desk(n),
        GridChoice::Asymptotic => LevelGrid::asymptotic(n, |m| {
            gamma
                .get(&m)
                .copied()
                .ok_or_else(|| Error::Config(format!("γ² not tabulated at level {m}")))
        }),
    }
}

fn restrict(gamma: &BTreeMap<i32, f64>, grid: &LevelGrid) -> BTreeMap<i32, f64> {
    grid.levels.iter().filter_map(|m| gamma.get(m).map(|g| (*m, *g))).collect()
}

/// One row of the experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub y: f64,
    pub n: usize,
    pub policy: String,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub mse: f64,
    pub mse_stderr: f64,
    pub bias_sq: Option<f64>,
    pub var_mc: f64,
    pub mean_mhat: f64,
    pub sd_mhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    /// Per-row sequences of `(t̂, m̂)` from the successful replications.
    #[serde(skip)]
    pub draws: Vec<Vec<(f64, i32)>>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Runs every `(y, n, replication)` cell of the configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, true)
}

/// Same as [`run_experiment`]; `parallel = false` runs replications on
/// the calling thread, which must give identical output.
pub fn run_experiment_with(config: &ExperimentConfig, parallel: bool) -> Result<ExperimentResult> {
    let (spec, basis) = config.resolve()?;
    let family = spec.family;
    let n_max = *config.n_grid.last().expect("non-empty n_grid");
    let top = (n_max as f64).log2().floor() as i32;
    let needs_gamma = !matches!(config.policy, PolicyConfig::Fixed { .. });

    let mut rows = Vec::new();
    let mut draws = Vec::new();
    for (yi, &y) in config.y_points.iter().enumerate() {
        let t_true = spec.bayes_t(y)?;
        let gamma = if needs_gamma {
            lepski::gamma_table(&family, &basis, y, &(0..=top).collect::<Vec<_>>())?
        } else {
            BTreeMap::new()
        };
        for (ni, &n) in config.n_grid.iter().enumerate() {
            let (grid, fixed_level) = match &config.policy {
                PolicyConfig::Fixed { m } => (None, Some(*m)),
                PolicyConfig::Oracle { r, grid } => {
                    let g = grid_for(*grid, n, &gamma)?;
                    (None, Some(lepski::oracle_level(&restrict(&gamma, &g), n, *r)?))
                }
                PolicyConfig::Lepski { grid, .. } => (Some(grid_for(*grid, n, &gamma)?), None),
            };
            let gamma_grid = grid.as_ref().map(|g| restrict(&gamma, g));

            let run_one = |rep: usize| -> Result<(f64, i32)> {
                let mut rng = replication_rng(config.seed, yi, ni, rep);
                let data = draw_sample(&family, &spec.prior, n, &mut rng);
                match (&config.policy, fixed_level) {
                    (_, Some(m)) => {
                        let est = estimate(&family, &basis, &data, y, m, DeltaPolicy::default())?;
                        Ok((est.t_hat, m))
                    }
                    (
                        PolicyConfig::Lepski {
                            lambda_mode,
                            lambda_mult,
                            psi_sup,
                            ..
                        },
                        None,
                    ) => {
                        let grid = grid.as_ref().expect("lepski grid");
                        let lambda = match lambda_mode {
                            LambdaMode::Calibrated => LambdaChoice::calibrated(*lambda_mult),
                            LambdaMode::Theory => {
                                LambdaChoice::theory(&family, &basis, &data, y, grid, *psi_sup, *lambda_mult)?
                            }
                        };
                        let gamma = gamma_grid.as_ref().expect("lepski gamma");
                        let trace = lepski::select_level(&family, &basis, &data, y, grid, lambda, gamma)?;
                        Ok((trace.t_hat(), trace.m_hat))
                    }
                    _ => unreachable!("non-lepski policies resolve a fixed level"),
                }
            };
            let outcomes: Vec<Result<(f64, i32)>> = if parallel {
                (0..config.replications).into_par_iter().map(run_one).collect()
            } else {
                (0..config.replications).map(run_one).collect()
            };

            let total = outcomes.len();
            let ok: Vec<(f64, i32)> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
            let failed = total - ok.len();
            if failed * 100 > total {
                return Err(Error::ExcessiveFailures { failed, total });
            }
            let bias_sq = match fixed_level {
                Some(m) if config.diagnostics => Some((projected_t(&spec, &basis, m, y)? - t_true).powi(2)),
                _ => None,
            };
            rows.push(summarize_cell(y, n, config.policy.label(), &ok, failed, t_true, bias_sq));
            draws.push(ok);
        }
    }
    Ok(ExperimentResult { rows, draws })
}

fn summarize_cell(
    y: f64,
    n: usize,
    policy: &str,
    ok: &[(f64, i32)],
    failed: usize,
    t_true: f64,
    bias_sq: Option<f64>,
) -> ResultRow {
    let sq: Vec<f64> = ok.iter().map(|(t, _)| (t - t_true).powi(2)).collect();
    let ts: Vec<f64> = ok.iter().map(|(t, _)| *t).collect();
    let ms: Vec<f64> = ok.iter().map(|(_, m)| *m as f64).collect();
    let (mse, mse_var) = stats::mean_var(&sq);
    let (_, var_mc) = stats::mean_var(&ts);
    let (mean_mhat, var_m) = stats::mean_var(&ms);
    ResultRow {
        y,
        n,
        policy: policy.to_string(),
        reps_ok: ok.len(),
        reps_failed: failed,
        mse,
        mse_stderr: (mse_var / ok.len() as f64).sqrt(),
        bias_sq,
        var_mc,
        mean_mhat,
        sd_mhat: var_m.sqrt(),
    }
}

/// Log-log fit of mse against n over the rows at one y point.
pub fn fit_rate(result: &ExperimentResult, y: f64) -> Result<LinearFit> {
    let (ns, mses): (Vec<f64>, Vec<f64>) = result
        .rows
        .iter()
        .filter(|r| r.y == y)
        .map(|r| (r.n as f64, r.mse))
        .unzip();
    if ns.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} sample sizes at y = {y}; need 3", ns.len())));
    }
    stats::loglog_fit(&ns, &mses)
}

/// Reference model for λ calibration: prior N(0, 1), σ = 1, y = 0.5.
pub fn reference_spec() -> PosteriorSpec {
    PosteriorSpec::new(
        FamilyModel::normal(1.0),
        PriorModel::Normal { mu0: 0.0, sigma0: 1.0 },
    )
    .expect("reference model is valid")
}

pub const REFERENCE_Y: f64 = 0.5;

/// Smallest λ on the grid `10^{k/4}` for which every replication of the
/// reference model at sample size `n` selects a level within one of the
/// oracle level (with `r = s − 1`) on the desk grid.
pub fn calibrate_lambda(basis: &ScalingBasis, n: usize, reps: usize, seed: u64) -> Result<f64> {
    let spec = reference_spec();
    let grid = LevelGrid::desk(n)?;
    let gamma = lepski::gamma_table(&spec.family, basis, REFERENCE_Y, &grid.levels)?;
    let r = (basis.vanishing_moments() - 1) as f64;
    let m0 = lepski::oracle_level(&gamma, n, r)?;
    let records: Vec<Vec<lepski::LevelRecord>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replication_rng(seed, 0, 0, rep);
            let data = draw_sample(&spec.family, &spec.prior, n, &mut rng);
            lepski::level_records(&spec.family, basis, &data, REFERENCE_Y, &grid, &gamma)
        })
        .collect::<Result<_>>()?;
    for k in -80..=40 {
        let lambda = 10f64.powf(k as f64 / 4.0);
        let mut all_close = true;
        for recs in &records {
            let m_hat = lepski::select_from_records(recs, lambda)?.m_hat;
            if (m_hat - m0).abs() > 1 {
                all_close = false;
                break;
            }
        }
        if all_close {
            return Ok(lambda);
        }
    }
    Err(Error::Config("no λ on the calibration grid reaches the oracle level".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "family": {"family": "normal", "sigma": 1.0},
                "prior": {"prior": "point_mass", "theta0": 0.7},
                "y_points": [0.7],
                "n_grid": [1024],
                "replications": 4,
                "policy": {"kind": "fixed", "m": 1},
                "seed": 7
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = replication_rng(1, 0, 0, 0).random();
        let b: u64 = replication_rng(1, 0, 0, 0).random();
        let c: u64 = replication_rng(1, 0, 0, 1).random();
        let d: u64 = replication_rng(1, 1, 0, 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn config_validation() {
        let mut cfg = point_mass_config();
        cfg.replications = 0;
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        let mut cfg = point_mass_config();
        cfg.n_grid = vec![2048, 1024];
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        let mut cfg = point_mass_config();
        cfg.policy = PolicyConfig::Fixed { m: 11 };
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"family": {"family": "normal"}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn policy_json_round_trip() {
        let p: PolicyConfig = serde_json::from_str(r#"{"kind": "lepski"}"#).unwrap();
        assert_eq!(
            p,
            PolicyConfig::Lepski {
                lambda_mode: LambdaMode::Calibrated,
                lambda_mult: 1.0,
                grid: GridChoice::Desk,
                psi_sup: None
            }
        );
        let p: PolicyConfig = serde_json::from_str(r#"{"kind": "oracle", "r": 2, "grid": "asymptotic"}"#).unwrap();
        assert_eq!(p, PolicyConfig::Oracle { r: 2.0, grid: GridChoice::Asymptotic });
    }

    #[test]
    fn point_mass_single_rep_reproducible() {
        let mut cfg = point_mass_config();
        cfg.replications = 1;
        let a = run_experiment(&cfg).unwrap().to_csv_string().unwrap();
        let b = run_experiment(&cfg).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("y,n,policy,reps_ok,reps_failed,mse,mse_stderr,bias_sq,var_mc,mean_mhat,sd_mhat\n"));
    }

    #[test]
    fn parallel_equals_serial() {
        let cfg = point_mass_config();
        let a = run_experiment_with(&cfg, true).unwrap();
        let b = run_experiment_with(&cfg, false).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn fit_rate_needs_three_points() {
        let cfg = point_mass_config();
        let res = run_experiment(&cfg).unwrap();
        assert!(matches!(fit_rate(&res, 0.7), Err(Error::DegenerateFit(_))));
    }
}
