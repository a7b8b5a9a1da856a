//! Verification campaigns: configuration, execution and reports.

mod config;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{CongruenceSpec, ExperimentConfig, Format, Ladder, Mode, OutputSpec, SamplerSpec};
pub use report::{config_from_json_report, emit_report, read_csv, render_svg, write_csv, write_json};

use crate::approx::Divergence;
use crate::counting::{
    count_ladder, dirichlet_solve, required_precision, verify_dirichlet, CountRequest, DirichletConstants,
    DirichletSolution, KernelMode, TruncatedMatrix,
};
use crate::error::{Error, Result};
use crate::sampler::{deepen, derive_seed, sample_matrix};
use crate::sring::{to_f64, NormProfile};
use crate::verify::{run_suites, SuiteResult};
use crate::volume::{volume_exact, volume_monte_carlo, Region, VolumeEstimate, VolumeResult};

/// One `(A, T)` cell of a campaign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    /// Seed of the matrix `A`.
    pub seed: u64,
    pub sample: u64,
    pub step: u32,
    pub profile: NormProfile,
    /// `V_psi(T)`.
    pub volume: f64,
    /// `N_psi,A(T)`.
    pub count: u64,
    /// `count * N^d / volume`.
    pub ratio: f64,
}

impl RunRecord {
    pub fn recomputed_ratio(&self, modulus_power: f64) -> f64 {
        ratio(self.count, modulus_power, self.volume)
    }
}

fn ratio(count: u64, modulus_power: f64, volume: f64) -> f64 {
    count as f64 * modulus_power / volume
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PrecisionEvent {
    pub sample: u64,
    pub prime: u64,
    pub from: u32,
    pub to: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMeta {
    pub sample: u64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSummary {
    pub step: u32,
    pub profile: NormProfile,
    pub volume: f64,
    pub median_count: f64,
    pub median_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountSummary {
    pub modulus: u64,
    pub d: usize,
    pub steps: Vec<StepSummary>,
    pub final_median_ratio: f64,
    /// `log_N (V / count)` at the final step, the exponent of `N` the counts follow.
    pub empirical_exponent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DichotomySummary {
    pub divergent: bool,
    pub mid_step: u32,
    pub final_step: u32,
    /// Fraction of samples with `N(T_final) = N(T_mid)`.
    pub plateau_fraction: f64,
    /// Fraction of samples with `N(T_final) > 10 N(T_mid)`.
    pub growth_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeRow {
    pub step: u32,
    pub profile: NormProfile,
    pub exact: VolumeResult,
    pub estimate: Option<VolumeEstimate>,
    /// `(estimate - exact) / std_error`.
    pub z: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirichletRow {
    pub sample: u64,
    pub step: u32,
    pub profile: NormProfile,
    pub solution: Option<DirichletSolution>,
    pub verified: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Volume { regions: Vec<VolumeRow> },
    Count(CountSummary),
    Dichotomy { counts: CountSummary, dichotomy: DichotomySummary },
    Dirichlet { rows: Vec<DirichletRow>, failures: u64 },
    Verify { suites: Vec<SuiteResult>, passed: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub warnings: Vec<String>,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    pub precision_events: Vec<PrecisionEvent>,
    pub timing: Vec<SampleMeta>,
}

impl RunOutput {
    /// False when a verification suite or Dirichlet solution failed.
    pub fn passed(&self) -> bool {
        match &self.summary {
            Summary::Verify { passed, .. } => *passed,
            Summary::Dirichlet { failures, .. } => *failures == 0,
            _ => true,
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        (values[k / 2 - 1] + values[k / 2]) / 2.0
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let warnings = config.validate()?;
    let mut out = RunOutput {
        config: config.clone(),
        warnings,
        records: Vec::new(),
        summary: Summary::Verify { suites: Vec::new(), passed: true },
        precision_events: Vec::new(),
        timing: Vec::new(),
    };
    out.summary = match config.mode {
        Mode::Volume => Summary::Volume { regions: run_volume(config)? },
        Mode::Count => Summary::Count(run_counts(config, &mut out)?),
        Mode::Asymptotic => {
            if let Divergence::Convergent(v) = config.psi()?.integral_diverges()? {
                return Err(Error::Config(format!(
                    "the volume integral converges (total {}), so V(T) stays bounded; use dichotomy mode",
                    v.total
                )));
            }
            Summary::Count(run_counts(config, &mut out)?)
        }
        Mode::Dichotomy => {
            let divergent = matches!(config.psi()?.integral_diverges()?, Divergence::Divergent);
            let counts = run_counts(config, &mut out)?;
            let dichotomy = dichotomy_summary(&out.records, divergent, config.samples);
            Summary::Dichotomy { counts, dichotomy }
        }
        Mode::Dirichlet => {
            let rows = run_dirichlet(config, &mut out)?;
            let failures = rows.iter().filter(|r| !r.verified).count() as u64;
            Summary::Dirichlet { rows, failures }
        }
        Mode::Verify => {
            let suites = run_suites(config.sampler.seed, config.verify_cases);
            let passed = suites.iter().all(|s| s.passed);
            Summary::Verify { suites, passed }
        }
    };
    Ok(out)
}

fn run_volume(config: &ExperimentConfig) -> Result<Vec<VolumeRow>> {
    let psi = config.psi()?;
    let mut rows = Vec::new();
    for (step, profile) in config.profiles()?.into_iter().enumerate() {
        let region = Region::new(psi.clone(), profile.clone())?;
        let exact = volume_exact(&region);
        let estimate = if *profile.real() >= BigRational::from_integer(1.into()) {
            Some(volume_monte_carlo(&region, config.mc_samples, derive_seed(config.sampler.seed, &[step as u64]))?)
        } else {
            None
        };
        let z = estimate.as_ref().map(|e| (e.estimate - exact.total.value()) / e.std_error);
        rows.push(VolumeRow { step: step as u32, profile, exact, estimate, z });
    }
    Ok(rows)
}

/// Retry `f` after deepening the matrix as long as it reports missing precision.
fn with_precision<T>(
    mut a: TruncatedMatrix,
    sample: u64,
    events: &mut Vec<PrecisionEvent>,
    mut f: impl FnMut(&TruncatedMatrix) -> Result<T>,
) -> Result<T> {
    loop {
        match f(&a) {
            Err(Error::InsufficientPrecision { prime, needed, available }) if needed > available => {
                a = deepen(&a, prime, needed)?;
                events.push(PrecisionEvent { sample, prime, from: available, to: needed });
            }
            other => return other,
        }
    }
}

struct SampleCounts {
    counts: Vec<u64>,
    events: Vec<PrecisionEvent>,
    elapsed_ms: f64,
    seed: u64,
}

fn run_counts(config: &ExperimentConfig, out: &mut RunOutput) -> Result<CountSummary> {
    let psi = config.psi()?;
    let profiles = config.profiles()?;
    let last = profiles.last().expect("validated nonempty").clone();
    let congruence = config.congruence()?;
    let base = config.sampler_config()?;
    let volumes: Vec<f64> = profiles
        .iter()
        .map(|p| Ok(volume_exact(&Region::new(psi.clone(), p.clone())?).total.value()))
        .collect::<Result<_>>()?;
    let mpow = to_f64(&config.modulus_power());

    let per_sample: Vec<Result<SampleCounts>> = (0..config.samples)
        .into_par_iter()
        .map(|i| {
            let started = Instant::now();
            let cfg = base.for_sample(i);
            let a = sample_matrix(&cfg)?;
            let req = CountRequest::new(a.clone(), psi.clone(), last.clone(), congruence.clone())?;
            let mut events = Vec::new();
            let mut a = a;
            for (p, k) in required_precision(&req) {
                if k > a.precision(p) {
                    events.push(PrecisionEvent { sample: i, prime: p, from: a.precision(p), to: k });
                    a = deepen(&a, p, k)?;
                }
            }
            let counts = with_precision(a, i, &mut events, |a| {
                count_ladder(&req.with_matrix(a.clone())?, &profiles, KernelMode::Fast)
            })?;
            Ok(SampleCounts { counts, events, elapsed_ms: started.elapsed().as_secs_f64() * 1e3, seed: cfg.seed })
        })
        .collect();

    for (i, s) in per_sample.into_iter().enumerate() {
        let s = s?;
        for (step, (&count, profile)) in s.counts.iter().zip(&profiles).enumerate() {
            out.records.push(RunRecord {
                seed: s.seed,
                sample: i as u64,
                step: step as u32,
                profile: profile.clone(),
                volume: volumes[step],
                count,
                ratio: ratio(count, mpow, volumes[step]),
            });
        }
        out.precision_events.extend(s.events);
        out.timing.push(SampleMeta { sample: i as u64, elapsed_ms: s.elapsed_ms });
    }

    let steps: Vec<StepSummary> = profiles
        .iter()
        .enumerate()
        .map(|(step, profile)| {
            let of_step = out.records.iter().filter(|r| r.step == step as u32);
            let mut counts: Vec<f64> = of_step.clone().map(|r| r.count as f64).collect();
            let mut ratios: Vec<f64> = of_step.map(|r| r.ratio).collect();
            StepSummary {
                step: step as u32,
                profile: profile.clone(),
                volume: volumes[step],
                median_count: median(&mut counts),
                median_ratio: median(&mut ratios),
            }
        })
        .collect();
    let fin = steps.last().expect("nonempty");
    let modulus = config.modulus();
    let empirical_exponent = (modulus > 1 && fin.median_count > 0.0)
        .then(|| (fin.volume / fin.median_count).ln() / (modulus as f64).ln());
    Ok(CountSummary {
        modulus,
        d: config.d(),
        final_median_ratio: fin.median_ratio,
        empirical_exponent,
        steps,
    })
}

fn dichotomy_summary(records: &[RunRecord], divergent: bool, samples: u64) -> DichotomySummary {
    let final_step = records.iter().map(|r| r.step).max().unwrap_or(0);
    let mid_step = final_step / 2;
    let at = |sample: u64, step: u32| {
        records.iter().find(|r| r.sample == sample && r.step == step).map_or(0, |r| r.count)
    };
    let (mut plateau, mut growth) = (0u64, 0u64);
    for s in 0..samples {
        let (mid, fin) = (at(s, mid_step), at(s, final_step));
        plateau += u64::from(fin == mid);
        growth += u64::from(fin > 10 * mid);
    }
    DichotomySummary {
        divergent,
        mid_step,
        final_step,
        plateau_fraction: plateau as f64 / samples as f64,
        growth_fraction: growth as f64 / samples as f64,
    }
}

fn run_dirichlet(config: &ExperimentConfig, out: &mut RunOutput) -> Result<Vec<DirichletRow>> {
    let profiles = config.profiles()?;
    let base = config.sampler_config()?;
    let constants = DirichletConstants::standard(&config.places, config.m);
    let mut rows = Vec::new();
    for i in 0..config.samples {
        let a = sample_matrix(&base.for_sample(i))?;
        for (step, profile) in profiles.iter().enumerate() {
            let solved = with_precision(a.clone(), i, &mut out.precision_events, |a| {
                let sol = dirichlet_solve(a, profile, &constants)?;
                let ok = verify_dirichlet(a, profile, &constants, &sol)?;
                Ok((sol, ok))
            });
            let row = match solved {
                Ok((sol, ok)) => DirichletRow {
                    sample: i,
                    step: step as u32,
                    profile: profile.clone(),
                    solution: Some(sol),
                    verified: ok,
                    error: None,
                },
                Err(e) => DirichletRow {
                    sample: i,
                    step: step as u32,
                    profile: profile.clone(),
                    solution: None,
                    verified: false,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Step details keyed by sample, for callers that want per-sample trajectories.
pub fn trajectories(records: &[RunRecord]) -> BTreeMap<u64, Vec<&RunRecord>> {
    let mut out: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.sample).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.step);
    }
    out
}
