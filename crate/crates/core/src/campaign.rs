//! Seeded fault-injection campaigns over the tiled executor.
//!
//! Every trial draws a random problem (shape, tiling, inputs, fault) from a
//! ChaCha stream keyed by the campaign seed and the trial number, so all
//! schemes see the same problems and results do not depend on thread count
//! or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};
use crate::matrix::Matrix;
use crate::numeric::{DTypeTag, Element, ToleranceMode};
use crate::shapes::GemmShape;
use crate::tiled::{execute, Domain, FaultSite, FaultSpec, Scheme, TilingConfig};
use crate::f16;

/// Environment variable capping the worker threads of a campaign.
pub const THREADS_ENV: &str = "ABFT_GUARD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl SizeRange {
    fn validate(&self, name: &str) -> Result<()> {
        if self.min == 0 || self.min > self.max {
            return Err(AbftError::Validation(format!("{name}: need 1 <= min <= max, got {}..={}", self.min, self.max)));
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

/// Magnitude distribution of injected faults; the sign is a fair coin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeltaDistribution {
    /// Uniform integer magnitude in `min_abs..=max_abs`.
    Integer { min_abs: u32, max_abs: u32 },
    /// `2^e` with `e` uniform in `min_log2..max_log2`.
    LogUniform { min_log2: f64, max_log2: f64 },
}

impl DeltaDistribution {
    fn validate(&self, dtype: DTypeTag) -> Result<()> {
        match *self {
            DeltaDistribution::Integer { min_abs, max_abs } => {
                if min_abs == 0 || min_abs > max_abs {
                    return Err(AbftError::Validation(format!(
                        "delta: need 1 <= min_abs <= max_abs, got {min_abs}..={max_abs}"
                    )));
                }
            }
            DeltaDistribution::LogUniform { min_log2, max_log2 } => {
                if dtype == DTypeTag::ExactInt {
                    return Err(AbftError::Validation("delta: exact-int campaigns need integer deltas".into()));
                }
                if !(min_log2.is_finite() && max_log2.is_finite() && min_log2 < max_log2) {
                    return Err(AbftError::Validation(format!(
                        "delta: need finite min_log2 < max_log2, got {min_log2}..{max_log2}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let magnitude = match *self {
            DeltaDistribution::Integer { min_abs, max_abs } => f64::from(rng.random_range(min_abs..=max_abs)),
            DeltaDistribution::LogUniform { min_log2, max_log2 } => rng.random_range(min_log2..max_log2).exp2(),
        };
        if rng.random_bool(0.5) {
            magnitude
        } else {
            -magnitude
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::PROTECTED.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    /// Single-fault trials per scheme.
    pub trials: usize,
    /// Fault-free trials per scheme; defaults to `trials`.
    #[serde(default)]
    pub control_trials: Option<usize>,
    pub seed: u64,
    pub m: SizeRange,
    pub n: SizeRange,
    pub k: SizeRange,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    pub dtype: DTypeTag,
    pub delta: DeltaDistribution,
    /// Fixed tiling; a small random tiling is drawn per trial when absent.
    #[serde(default)]
    pub tiling: Option<TilingConfig>,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(AbftError::Validation("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(AbftError::Validation("schemes must not be empty".into()));
        }
        self.m.validate("m")?;
        self.n.validate("n")?;
        self.k.validate("k")?;
        self.delta.validate(self.dtype)?;
        if let Some(t) = &self.tiling {
            t.validate()?;
        }
        Ok(())
    }

    pub fn control_trials(&self) -> usize {
        self.control_trials.unwrap_or(self.trials)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialOutcome {
    Detected,
    /// Undetected, and the fault is inside the tolerance band.
    Masked,
    Missed,
    /// Fault-free trial, no verdict fired.
    Clean,
    /// Fault-free trial with a firing verdict.
    FalsePositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: Scheme,
    pub trials: usize,
    pub detected: usize,
    pub missed: usize,
    pub masked: usize,
    pub detection_rate: f64,
    pub control_trials: usize,
    pub false_positives: usize,
    pub false_positive_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub seed: u64,
    pub dtype: DTypeTag,
    pub schemes: Vec<SchemeReport>,
}

impl CampaignReport {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeReport> {
        self.schemes.iter().find(|r| r.scheme == scheme)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "scheme",
            "trials",
            "detected",
            "missed",
            "masked",
            "detection_rate",
            "control_trials",
            "false_positives",
            "false_positive_rate",
        ])
        .expect("in-memory write");
        for r in &self.schemes {
            w.write_record([
                r.scheme.to_string(),
                r.trials.to_string(),
                r.detected.to_string(),
                r.missed.to_string(),
                r.masked.to_string(),
                r.detection_rate.to_string(),
                r.control_trials.to_string(),
                r.false_positives.to_string(),
                r.false_positive_rate.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Random test matrix: integers in `-16..=16` in exact mode, uniform values
/// in `[-1, 1)` otherwise.
pub fn random_matrix<E: Element, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<E> {
    Matrix::from_fn(rows, cols, |_, _| {
        if E::TAG == DTypeTag::ExactInt {
            E::from_f64(f64::from(rng.random_range(-16i32..=16)))
        } else {
            E::from_f64(rng.random_range(-1.0..1.0))
        }
    })
}

/// Stream for one trial. Faulty and control trials use disjoint streams.
pub fn trial_rng(seed: u64, trial: usize, control: bool) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(trial as u64).to_le_bytes());
    key[16] = u8::from(control);
    ChaCha8Rng::from_seed(key)
}

/// A drawn problem instance, shared by every scheme for the same trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialProblem<E: Element> {
    pub a: Matrix<E>,
    pub b: Matrix<E>,
    pub tiling: TilingConfig,
    pub fault: Option<FaultSpec>,
}

pub fn draw_problem<E: Element, R: Rng + ?Sized>(rng: &mut R, config: &CampaignConfig, with_fault: bool) -> TrialProblem<E> {
    let shape = GemmShape { m: config.m.sample(rng), n: config.n.sample(rng), k: config.k.sample(rng) };
    let tiling = config.tiling.unwrap_or_else(|| TilingConfig::random_small(rng));
    let a = random_matrix::<E, _>(rng, shape.m, shape.k);
    let b = random_matrix::<E, _>(rng, shape.k, shape.n);
    let fault = with_fault.then(|| {
        let site = FaultSite::random(rng, shape, &tiling);
        FaultSpec { site, delta: config.delta.sample(rng) }
    });
    TrialProblem { a, b, tiling, fault }
}

/// Run one drawn problem under `scheme` and classify the result.
pub fn run_problem<E: Element>(problem: &TrialProblem<E>, scheme: Scheme, mode: ToleranceMode) -> Result<TrialOutcome> {
    let faults: Vec<FaultSpec> = problem.fault.into_iter().collect();
    let report = execute(&problem.a, &problem.b, &problem.tiling, scheme, &faults, mode)?;
    let Some(fault) = problem.fault else {
        return Ok(if report.detected { TrialOutcome::FalsePositive } else { TrialOutcome::Clean });
    };
    if report.detected {
        return Ok(TrialOutcome::Detected);
    }
    let (row, col) = fault.site.output_position(&problem.tiling);
    let owner = report.verdicts.iter().find(|v| match v.domain {
        Domain::Global => true,
        d @ Domain::Thread { .. } => d.contains(row, col),
    });
    Ok(match owner {
        Some(v) if v.verdict.masks(fault.delta) => TrialOutcome::Masked,
        _ => TrialOutcome::Missed,
    })
}

/// Worker count from `ABFT_GUARD_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    run_campaign_with_threads(config, threads_from_env())
}

pub fn run_campaign_with_threads(config: &CampaignConfig, threads: Option<usize>) -> Result<CampaignReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| AbftError::Validation(format!("thread pool: {e}")))?;
    let schemes = pool.install(|| match config.dtype {
        DTypeTag::ExactInt => run_typed::<i64>(config, ToleranceMode::Exact),
        DTypeTag::Binary16 => run_typed::<f16>(config, ToleranceMode::BINARY16),
        DTypeTag::Binary32 => run_typed::<f32>(config, ToleranceMode::BINARY32),
    })?;
    Ok(CampaignReport { schema_version: crate::io::SCHEMA_VERSION, seed: config.seed, dtype: config.dtype, schemes })
}

#[derive(Default, Clone, Copy)]
struct Tally {
    detected: usize,
    missed: usize,
    masked: usize,
    false_positives: usize,
}

impl Tally {
    fn add(mut self, o: TrialOutcome) -> Tally {
        match o {
            TrialOutcome::Detected => self.detected += 1,
            TrialOutcome::Masked => self.masked += 1,
            TrialOutcome::Missed => self.missed += 1,
            TrialOutcome::FalsePositive => self.false_positives += 1,
            TrialOutcome::Clean => {}
        }
        self
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            detected: self.detected + o.detected,
            missed: self.missed + o.missed,
            masked: self.masked + o.masked,
            false_positives: self.false_positives + o.false_positives,
        }
    }
}

fn run_typed<E: Element>(config: &CampaignConfig, mode: ToleranceMode) -> Result<Vec<SchemeReport>> {
    let n_schemes = config.schemes.len();
    let faulty = (0..config.trials).map(|t| (t, false));
    let control = (0..config.control_trials()).map(|t| (t, true));
    let jobs: Vec<(usize, bool)> = faulty.chain(control).collect();

    let tallies = jobs
        .par_iter()
        .map(|&(trial, is_control)| -> Result<Vec<Tally>> {
            let mut rng = trial_rng(config.seed, trial, is_control);
            let problem = draw_problem::<E, _>(&mut rng, config, !is_control);
            config
                .schemes
                .iter()
                .map(|&s| Ok(Tally::default().add(run_problem(&problem, s, mode)?)))
                .collect()
        })
        .try_reduce(|| vec![Tally::default(); n_schemes], |a, b| {
            Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
        })?;

    let control_trials = config.control_trials();
    Ok(config
        .schemes
        .iter()
        .zip(tallies)
        .map(|(&scheme, t)| SchemeReport {
            scheme,
            trials: config.trials,
            detected: t.detected,
            missed: t.missed,
            masked: t.masked,
            detection_rate: t.detected as f64 / config.trials as f64,
            control_trials,
            false_positives: t.false_positives,
            false_positive_rate: if control_trials == 0 { 0.0 } else { t.false_positives as f64 / control_trials as f64 },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dtype: DTypeTag, delta: DeltaDistribution) -> CampaignConfig {
        CampaignConfig {
            schema_version: 1,
            trials: 200,
            control_trials: None,
            seed: 7,
            m: SizeRange { min: 1, max: 24 },
            n: SizeRange { min: 1, max: 24 },
            k: SizeRange { min: 1, max: 24 },
            schemes: Scheme::PROTECTED.to_vec(),
            dtype,
            delta,
            tiling: None,
        }
    }

    #[test]
    fn exact_campaign_detects_everything() {
        let r = run_campaign_with_threads(
            &config(DTypeTag::ExactInt, DeltaDistribution::Integer { min_abs: 1, max_abs: 100 }),
            Some(2),
        )
        .unwrap();
        assert_eq!(r.schemes.len(), 5);
        for s in &r.schemes {
            assert_eq!((s.detected, s.missed, s.masked, s.false_positives), (200, 0, 0, 0), "{s:?}");
            assert_eq!(s.detection_rate, 1.0);
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = config(DTypeTag::Binary16, DeltaDistribution::LogUniform { min_log2: -14.0, max_log2: 4.0 });
        let one = run_campaign_with_threads(&c, Some(1)).unwrap();
        let four = run_campaign_with_threads(&c, Some(4)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.to_csv(), four.to_csv());
    }

    #[test]
    fn tiny_fp_deltas_are_masked_not_missed() {
        let c = config(DTypeTag::Binary16, DeltaDistribution::LogUniform { min_log2: -40.0, max_log2: -30.0 });
        let r = run_campaign_with_threads(&c, Some(2)).unwrap();
        for s in &r.schemes {
            assert_eq!(s.masked, s.trials, "{s:?}");
            assert_eq!(s.false_positives, 0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(DTypeTag::ExactInt, DeltaDistribution::LogUniform { min_log2: 0.0, max_log2: 1.0 });
        assert!(c.validate().is_err());
        c.delta = DeltaDistribution::Integer { min_abs: 0, max_abs: 3 };
        assert!(c.validate().is_err());
        c.delta = DeltaDistribution::Integer { min_abs: 1, max_abs: 3 };
        c.trials = 0;
        assert!(c.validate().is_err());
        c.trials = 1;
        c.m = SizeRange { min: 5, max: 4 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unprotected_misses() {
        let mut c = config(DTypeTag::ExactInt, DeltaDistribution::Integer { min_abs: 1, max_abs: 9 });
        c.schemes = vec![Scheme::Unprotected];
        c.trials = 20;
        let r = run_campaign_with_threads(&c, Some(1)).unwrap();
        assert_eq!(r.schemes[0].missed, 20);
    }
}
