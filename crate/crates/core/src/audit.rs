//! Privacy audits, attack simulation, utility metrics and experiment runs.
//!
//! The bound audits work on analytic release probabilities; sampling is
//! only exercised where the sampler itself is under test.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{UtteranceRecord, Voiceprint, VoiceprintDatabase};
use crate::error::{Error, Result};
use crate::mechanism::{PerturbationDistribution, PrivacyBudget};
use crate::metric::{distance_matrix, DistanceMatrix};
use crate::population::{generate_population, PopulationSpec};
use crate::release::{
    build_release_model, release_database, release_feature_level, release_model_level, PassthroughSynthesizer,
    ProtectedUtterance, ReleaseOptions,
};
use crate::rng::SeededRng;
use crate::text::fmt12;

/// Largest database the cubic triple audits accept by default.
pub const DEFAULT_AUDIT_CAP: usize = 200;

/// Default multiplicative slack on ratio bounds.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Analytic release distributions of every record over its own database.
struct LikelihoodTable {
    distances: DistanceMatrix,
    rows: Vec<PerturbationDistribution>,
}

impl LikelihoodTable {
    fn new(db: &VoiceprintDatabase, eps: PrivacyBudget) -> Self {
        let distances = distance_matrix(db);
        let ids: Vec<String> = db.ids().map(str::to_string).collect();
        let rows = (0..db.len())
            .map(|i| PerturbationDistribution::from_distances(ids.clone(), distances.row(i).to_vec(), eps))
            .collect();
        Self { distances, rows }
    }

    fn log_p(&self, input: usize, output: usize) -> f64 {
        self.rows[input].log_probabilities()[output]
    }

    fn p(&self, input: usize, output: usize) -> f64 {
        self.rows[input].probabilities()[output]
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::AuditCapExceeded { n, cap });
    }
    Ok(())
}

/// Identifies an `(x, x', x~)` triple by record id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Triple {
    pub input: String,
    pub neighbor: String,
    pub output: String,
}

/// Result of the exhaustive likelihood-ratio audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub epsilon: f64,
    /// Empirical effective budget: max over triples of `ln(ratio) / d(x, x')`.
    pub max_log_ratio_over_distance: f64,
    pub worst_triple: Option<Triple>,
    /// `ratio <= exp(eps * d)` for every triple.
    pub passes_factor1_bound: bool,
    /// `ratio <= exp(2 * eps * d)` for every triple.
    pub passes_factor2_bound: bool,
    pub factor1_violations: usize,
    pub factor2_violations: usize,
    /// `exp(-eps d(x,x~)) / exp(-eps d(x',x~)) <= exp(eps d(x,x'))` for every triple.
    pub passes_unnormalized_bound: bool,
    /// Largest `ln(unnormalized ratio) - eps * d(x, x')`; `<= 0` up to rounding.
    pub max_unnormalized_excess: f64,
    /// Pairs at distance 0 whose release distributions differ by more than the tolerance.
    pub zero_distance_violations: usize,
    pub triples_checked: usize,
    pub tolerance: f64,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yes_no = |b: bool| if b { "pass" } else { "FAIL" };
        let worst = self
            .worst_triple
            .as_ref()
            .map_or("-".to_string(), |t| format!("({}, {}, {})", t.input, t.neighbor, t.output));
        writeln!(f, "{:<28}{}", "n", self.n)?;
        writeln!(f, "{:<28}{}", "epsilon", fmt12(self.epsilon))?;
        writeln!(f, "{:<28}{}", "effective epsilon", fmt12(self.max_log_ratio_over_distance))?;
        writeln!(f, "{:<28}{}", "worst triple", worst)?;
        writeln!(
            f,
            "{:<28}{} ({} violations)",
            "bound exp(eps d)",
            yes_no(self.passes_factor1_bound),
            self.factor1_violations
        )?;
        writeln!(
            f,
            "{:<28}{} ({} violations)",
            "bound exp(2 eps d)",
            yes_no(self.passes_factor2_bound),
            self.factor2_violations
        )?;
        writeln!(
            f,
            "{:<28}{} (max excess {})",
            "unnormalized bound",
            yes_no(self.passes_unnormalized_bound),
            fmt12(self.max_unnormalized_excess)
        )?;
        writeln!(f, "{:<28}{}", "zero-distance violations", self.zero_distance_violations)?;
        writeln!(f, "{:<28}{}", "triples checked", self.triples_checked)?;
        write!(f, "{:<28}{}", "tolerance", fmt12(self.tolerance))
    }
}

#[derive(Clone, Debug)]
struct RatioPartial {
    best: f64,
    worst: Option<(usize, usize, usize)>,
    f1: usize,
    f2: usize,
    unnorm_excess: f64,
    zero: usize,
    triples: usize,
}

impl RatioPartial {
    fn empty() -> Self {
        Self {
            best: 0.0,
            worst: None,
            f1: 0,
            f2: 0,
            unnorm_excess: f64::NEG_INFINITY,
            zero: 0,
            triples: 0,
        }
    }

    // Earlier partials win ties, so folding in input order is deterministic.
    fn merge(mut self, other: RatioPartial) -> Self {
        if other.best > self.best {
            self.best = other.best;
            self.worst = other.worst;
        } else if self.worst.is_none() && other.worst.is_some() && other.best == self.best {
            self.worst = other.worst;
        }
        self.f1 += other.f1;
        self.f2 += other.f2;
        self.unnorm_excess = self.unnorm_excess.max(other.unnorm_excess);
        self.zero += other.zero;
        self.triples += other.triples;
        self
    }
}

/// Checks `Pr(x~|x) / Pr(x~|x') <= exp(k * eps * d(x, x'))` for `k = 1, 2`
/// over every ordered pair of distinct inputs and every output. Pairs at
/// distance 0 are checked for equal release distributions instead.
pub fn verify_voice_ind(db: &VoiceprintDatabase, eps: PrivacyBudget, tol: f64, cap: usize) -> Result<AuditReport> {
    check_cap(db.len(), cap)?;
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be >= 0, got {tol}")));
    }
    let n = db.len();
    let e = eps.epsilon();
    let table = LikelihoodTable::new(db, eps);
    let slack = tol.ln_1p();

    let partials: Vec<RatioPartial> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut acc = RatioPartial::empty();
            for y in (0..n).filter(|&y| y != x) {
                let d = table.distances.get(x, y);
                for t in 0..n {
                    acc.triples += 1;
                    let unnorm = -e * table.distances.get(x, t) + e * table.distances.get(y, t) - e * d;
                    acc.unnorm_excess = acc.unnorm_excess.max(unnorm);
                    if d == 0.0 {
                        if (table.p(x, t) - table.p(y, t)).abs() > tol {
                            acc.zero += 1;
                        }
                        continue;
                    }
                    let log_ratio = table.log_p(x, t) - table.log_p(y, t);
                    let eff = log_ratio / d;
                    if eff > acc.best || acc.worst.is_none() {
                        if eff > acc.best {
                            acc.best = eff;
                        }
                        acc.worst = Some((x, y, t));
                    }
                    if log_ratio > e * d + slack {
                        acc.f1 += 1;
                    }
                    if log_ratio > 2.0 * e * d + slack {
                        acc.f2 += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let total = partials.into_iter().fold(RatioPartial::empty(), RatioPartial::merge);
    let id = |i: usize| db.record(i).id().to_string();
    let unnorm_excess = if total.triples == 0 { 0.0 } else { total.unnorm_excess };
    Ok(AuditReport {
        n,
        epsilon: e,
        max_log_ratio_over_distance: total.best.max(0.0),
        worst_triple: total.worst.map(|(x, y, t)| Triple {
            input: id(x),
            neighbor: id(y),
            output: id(t),
        }),
        passes_factor1_bound: total.f1 == 0 && total.zero == 0,
        passes_factor2_bound: total.f2 == 0 && total.zero == 0,
        factor1_violations: total.f1,
        factor2_violations: total.f2,
        passes_unnormalized_bound: unnorm_excess <= tol,
        max_unnormalized_excess: unnorm_excess,
        zero_distance_violations: total.zero,
        triples_checked: total.triples,
        tolerance: tol,
    })
}

/// Result of the prior/posterior audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BayesReport {
    pub n: usize,
    pub epsilon: f64,
    /// Max over triples of `|(ln post ratio - ln prior ratio) - ln likelihood ratio|`.
    pub max_identity_residual: f64,
    /// Max over triples with `d > 0` of `(ln post ratio - ln prior ratio) / d`.
    pub max_shift_over_distance: f64,
    pub worst_triple: Option<Triple>,
    pub passes_factor1_bound: bool,
    pub passes_factor2_bound: bool,
    /// Max over all `(x, x~)` of `|Pr(x|x~) - Pr(x)|`.
    pub max_posterior_prior_gap: f64,
    pub tolerance: f64,
}

impl fmt::Display for BayesReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yes_no = |b: bool| if b { "pass" } else { "FAIL" };
        writeln!(f, "{:<28}{}", "n", self.n)?;
        writeln!(f, "{:<28}{}", "epsilon", fmt12(self.epsilon))?;
        writeln!(f, "{:<28}{}", "max posterior shift / d", fmt12(self.max_shift_over_distance))?;
        writeln!(f, "{:<28}{}", "identity residual", fmt12(self.max_identity_residual))?;
        writeln!(f, "{:<28}{}", "bound eps d", yes_no(self.passes_factor1_bound))?;
        writeln!(f, "{:<28}{}", "bound 2 eps d", yes_no(self.passes_factor2_bound))?;
        write!(f, "{:<28}{}", "max |posterior - prior|", fmt12(self.max_posterior_prior_gap))
    }
}

/// Checks that observing a release moves an adversary's log-odds between
/// any two inputs by at most `eps * d` (and `2 eps * d`), with posteriors
/// computed from `prior` by Bayes' rule, and measures how closely the
/// posterior shift equals the log-likelihood ratio.
pub fn bayes_bound_check(
    prior: &[f64],
    db: &VoiceprintDatabase,
    eps: PrivacyBudget,
    tol: f64,
    cap: usize,
) -> Result<BayesReport> {
    check_cap(db.len(), cap)?;
    let n = db.len();
    if prior.len() != n {
        return Err(Error::InvalidPrior(format!("length {} != database size {n}", prior.len())));
    }
    if prior.iter().any(|&p| !p.is_finite() || p <= 0.0) {
        return Err(Error::InvalidPrior("entries must be finite and > 0".into()));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidPrior(format!("sums to {total}, not 1")));
    }
    let e = eps.epsilon();
    let table = LikelihoodTable::new(db, eps);
    let log_prior: Vec<f64> = prior.iter().map(|p| p.ln()).collect();

    // ln Pr(x | x~) for every (x, x~), by Bayes' rule.
    let mut log_post = vec![0.0; n * n];
    let mut gap: f64 = 0.0;
    for t in 0..n {
        let evidence: f64 = (0..n).map(|x| table.p(x, t) * prior[x]).sum();
        let underflow = (0..n).any(|x| table.p(x, t) == 0.0) || evidence == 0.0;
        let log_evidence = if underflow {
            let terms: Vec<f64> = (0..n).map(|x| table.log_p(x, t) + log_prior[x]).collect();
            log_sum_exp(&terms)
        } else {
            evidence.ln()
        };
        for x in 0..n {
            let lp = if underflow {
                table.log_p(x, t) + log_prior[x] - log_evidence
            } else {
                (table.p(x, t) * prior[x] / evidence).ln()
            };
            log_post[x * n + t] = lp;
            gap = gap.max((lp.exp() - prior[x]).abs());
        }
    }

    let slack = tol.ln_1p();
    let mut residual: f64 = 0.0;
    let mut best = 0.0f64;
    let mut worst = None;
    let (mut f1, mut f2) = (0usize, 0usize);
    for x in 0..n {
        for y in (0..n).filter(|&y| y != x) {
            let d = table.distances.get(x, y);
            for t in 0..n {
                let shift = (log_post[x * n + t] - log_post[y * n + t]) - (log_prior[x] - log_prior[y]);
                let likelihood = table.log_p(x, t) - table.log_p(y, t);
                residual = residual.max((shift - likelihood).abs());
                if d == 0.0 {
                    if shift.abs() > slack {
                        f1 += 1;
                        f2 += 1;
                    }
                    continue;
                }
                if shift / d > best || worst.is_none() {
                    best = best.max(shift / d);
                    worst = Some((x, y, t));
                }
                if shift > e * d + slack {
                    f1 += 1;
                }
                if shift > 2.0 * e * d + slack {
                    f2 += 1;
                }
            }
        }
    }
    let id = |i: usize| db.record(i).id().to_string();
    Ok(BayesReport {
        n,
        epsilon: e,
        max_identity_residual: residual,
        max_shift_over_distance: best.max(0.0),
        worst_triple: worst.map(|(x, y, t)| Triple {
            input: id(x),
            neighbor: id(y),
            output: id(t),
        }),
        passes_factor1_bound: f1 == 0,
        passes_factor2_bound: f2 == 0,
        max_posterior_prior_gap: gap,
        tolerance: tol,
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Outcome of a re-identification attack.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackResult {
    pub attack: &'static str,
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
}

pub const NEAREST_NEIGHBOR_ATTACK: &str = "cosine-nearest-neighbor";

/// Index of the record most cosine-similar to `probe`; ties go to the
/// lowest index.
pub fn nearest_record(db: &VoiceprintDatabase, probe: &Voiceprint) -> Result<usize> {
    if probe.dim() != db.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            found: probe.dim(),
            context: Some(format!("released `{}`", probe.id())),
        });
    }
    let u = crate::embedding::unit_vector(probe.vector()).ok_or_else(|| Error::ZeroVector(Some(probe.id().into())))?;
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for i in 0..db.len() {
        let sim: f64 = db.unit(i).iter().zip(&u).map(|(a, b)| a * b).sum();
        if sim > best_sim {
            best_sim = sim;
            best = i;
        }
    }
    Ok(best)
}

/// Closed-set identification: each probe is attributed to its most
/// cosine-similar original record and scored against its true id.
pub fn identification_attack<'a>(
    original: &VoiceprintDatabase,
    probes: impl IntoIterator<Item = (&'a str, &'a Voiceprint)>,
) -> Result<AttackResult> {
    let mut trials = 0;
    let mut correct = 0;
    for (truth, probe) in probes {
        trials += 1;
        if original.record(nearest_record(original, probe)?).id() == truth {
            correct += 1;
        }
    }
    Ok(AttackResult {
        attack: NEAREST_NEIGHBOR_ATTACK,
        trials,
        correct,
        accuracy: if trials == 0 { 0.0 } else { correct as f64 / trials as f64 },
    })
}

/// Re-identification of released utterances; an utterance's true speaker is
/// the original record sharing its id.
pub fn reidentification_attack(original: &VoiceprintDatabase, released: &[ProtectedUtterance]) -> Result<AttackResult> {
    identification_attack(
        original,
        released.iter().map(|u| (u.id.as_str(), &u.released_voiceprint)),
    )
}

/// Mean over records of the coordinate-averaged squared distance between
/// unit-normalized original and released vectors. Records are paired by id.
pub fn mse(original: &VoiceprintDatabase, released: &VoiceprintDatabase) -> Result<f64> {
    if original.dim() != released.dim() {
        return Err(Error::DimensionMismatch {
            expected: original.dim(),
            found: released.dim(),
            context: Some("released database".into()),
        });
    }
    if original.len() != released.len() {
        return Err(Error::IdMismatch(format!(
            "original has {} records, released has {}",
            original.len(),
            released.len()
        )));
    }
    let dim = original.dim() as f64;
    let mut total = 0.0;
    for i in 0..original.len() {
        let id = original.record(i).id();
        let j = released
            .position(id)
            .ok_or_else(|| Error::IdMismatch(format!("`{id}` missing from released database")))?;
        let sq: f64 = original
            .unit(i)
            .iter()
            .zip(released.unit(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        total += sq / dim;
    }
    Ok(total / original.len() as f64)
}

/// One cell-trial of the experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub epsilon: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub mse: f64,
    pub attack_acc: f64,
    pub feature_online_s: Option<f64>,
    pub model_online_s: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct GridOptions {
    /// Measure online wall time of both pipelines for each trial. Off by
    /// default so the grid output is a pure function of its inputs.
    pub timing: bool,
}

/// Sweeps database size `n` and budget `eps`. For each `(n, eps, trial)` a
/// random `n`-subset of the population is released record by record and
/// scored for utility (MSE) and privacy (re-identification accuracy).
/// Cell `(ni, ei, trial)` uses `rng.child(&[ni, ei, trial])`.
pub fn run_experiment_grid(
    population: &VoiceprintDatabase,
    n_values: &[usize],
    eps_values: &[f64],
    trials: usize,
    rng: &SeededRng,
    options: &GridOptions,
) -> Result<Vec<ExperimentRow>> {
    for &n in n_values {
        if n == 0 || n > population.len() {
            return Err(Error::SampleTooLarge {
                requested: n,
                available: population.len(),
            });
        }
    }
    let budgets = eps_values
        .iter()
        .map(|&e| PrivacyBudget::new(e))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(n_values.len() * budgets.len() * trials);
    for (ni, &n) in n_values.iter().enumerate() {
        for (ei, &eps) in budgets.iter().enumerate() {
            for trial in 0..trials {
                cells.push((ni, n, ei, eps, trial));
            }
        }
    }
    let run_cell = |&(ni, n, ei, eps, trial): &(usize, usize, usize, PrivacyBudget, usize)| -> Result<ExperimentRow> {
        let cell = rng.child(&[ni as u64, ei as u64, trial as u64]);
        let mut pick = cell.child(&[0]);
        let mut indices = index::sample(&mut pick, population.len(), n).into_vec();
        indices.sort_unstable();
        let db = population.subset(&indices)?;

        let started = Instant::now();
        let released = release_database(&db, eps, &cell.child(&[1]))?;
        let feature_s = started.elapsed().as_secs_f64();

        let utility = mse(&db, &released.database)?;
        let attack = identification_attack(
            &db,
            released.database.records().iter().map(|r| (r.id(), r)),
        )?;

        let (feature_online_s, model_online_s) = if options.timing {
            let db = Arc::new(db);
            let model = build_release_model(Arc::clone(&db), eps, 0);
            let utterances: Vec<UtteranceRecord> =
                db.records().iter().map(|r| UtteranceRecord::new(Vec::new(), r.clone())).collect();
            let started = Instant::now();
            release_model_level(&utterances, &model, &PassthroughSynthesizer, &cell.child(&[2]), ReleaseOptions::default())?;
            (Some(feature_s), Some(started.elapsed().as_secs_f64()))
        } else {
            (None, None)
        };
        Ok(ExperimentRow {
            n,
            epsilon: eps.epsilon(),
            trial,
            trial_seed: cell.seed(),
            mse: utility,
            attack_acc: attack.accuracy,
            feature_online_s,
            model_online_s,
        })
    };
    if options.timing {
        cells.iter().map(run_cell).collect()
    } else {
        cells.par_iter().map(run_cell).collect()
    }
}

/// Writes experiment rows as CSV. Timing columns are empty when not measured.
pub fn write_experiment_csv<W: Write>(mut w: W, rows: &[ExperimentRow]) -> Result<()> {
    writeln!(w, "n,epsilon,trial,mse,attack_acc,feature_online_s,model_online_s")?;
    let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.n,
            fmt12(r.epsilon),
            r.trial,
            fmt12(r.mse),
            fmt12(r.attack_acc),
            opt(r.feature_online_s),
            opt(r.model_online_s)
        )?;
    }
    Ok(())
}

/// Mean and standard error of one `(n, eps)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub mean_mse: f64,
    pub se_mse: f64,
    pub mean_acc: f64,
    pub se_acc: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Aggregates rows per `(n, eps)` cell in first-appearance order.
pub fn summarize_grid(rows: &[ExperimentRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, u64)> = Vec::new();
    for r in rows {
        let k = (r.n, r.epsilon.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(n, e)| {
            let cell: Vec<&ExperimentRow> = rows.iter().filter(|r| r.n == n && r.epsilon.to_bits() == e).collect();
            let (mean_mse, se_mse) = mean_se(&cell.iter().map(|r| r.mse).collect::<Vec<_>>());
            let (mean_acc, se_acc) = mean_se(&cell.iter().map(|r| r.attack_acc).collect::<Vec<_>>());
            CellSummary {
                n,
                epsilon: f64::from_bits(e),
                trials: cell.len(),
                mean_mse,
                se_mse,
                mean_acc,
                se_acc,
            }
        })
        .collect()
}

/// Online perturbation time for one database size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub feature_online_s: f64,
    /// Offline model build; `None` when `n` exceeds the model cap.
    pub model_offline_s: Option<f64>,
    pub model_online_s: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub dim: usize,
    /// Largest `n` for which a model is built (tables take `O(n^2)` memory).
    pub model_cap: usize,
    /// Each timing is the minimum over this many runs.
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            dim: crate::embedding::DEFAULT_DIM,
            model_cap: 2000,
            repeats: 1,
        }
    }
}

fn min_time<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let started = Instant::now();
        std::hint::black_box(f()?);
        best = best.min(started.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// For each `n`, times releasing `n` utterances against an `n`-record
/// database with the feature-level pipeline, and with the model-level
/// pipeline from a prebuilt model.
pub fn bench_perturbation(
    db_sizes: &[usize],
    eps: PrivacyBudget,
    rng: &SeededRng,
    options: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if db_sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("database sizes must be ascending".into()));
    }
    let mut rows = Vec::with_capacity(db_sizes.len());
    for (k, &n) in db_sizes.iter().enumerate() {
        let db = Arc::new(generate_population(&PopulationSpec {
            speakers: n,
            utterances_per_speaker: 1,
            dim: options.dim,
            concentration: crate::population::DEFAULT_CONCENTRATION,
            seed: rng.child(&[k as u64]).seed(),
        })?);
        let utterances: Vec<UtteranceRecord> =
            db.records().iter().map(|r| UtteranceRecord::new(Vec::new(), r.clone())).collect();
        let release_rng = rng.child(&[k as u64, 1]);
        let feature_online_s = min_time(options.repeats, || {
            release_feature_level(&utterances, &db, eps, &PassthroughSynthesizer, &release_rng, ReleaseOptions::default())
        })?;
        let (model_offline_s, model_online_s) = if n <= options.model_cap {
            let started = Instant::now();
            let model = build_release_model(Arc::clone(&db), eps, 0);
            let offline = started.elapsed().as_secs_f64();
            let online = min_time(options.repeats, || {
                release_model_level(&utterances, &model, &PassthroughSynthesizer, &release_rng, ReleaseOptions::default())
            })?;
            (Some(offline), Some(online))
        } else {
            (None, None)
        };
        rows.push(BenchRow {
            n,
            feature_online_s,
            model_offline_s,
            model_online_s,
        });
    }
    Ok(rows)
}

/// Times model-level release of `count` utterances for each count, cycling
/// through the model's enrolled records.
pub fn bench_model_online(
    model: &crate::release::ReleaseModel,
    utterance_counts: &[usize],
    rng: &SeededRng,
    repeats: usize,
) -> Result<Vec<(usize, f64)>> {
    let db = model.database();
    utterance_counts
        .iter()
        .map(|&count| {
            let utterances: Vec<UtteranceRecord> = (0..count)
                .map(|i| UtteranceRecord::new(Vec::new(), db.record(i % db.len()).clone()))
                .collect();
            let secs = min_time(repeats, || {
                release_model_level(&utterances, model, &PassthroughSynthesizer, rng, ReleaseOptions::default())
            })?;
            Ok((count, secs))
        })
        .collect()
}

/// Renders bench rows in the layout of a "database size vs online
/// perturbation time" table.
pub fn format_bench_table(rows: &[BenchRow]) -> String {
    let secs = |x: Option<f64>| x.map_or("-".to_string(), |s| format!("{s:.4}s"));
    let mut header = vec!["Speech database size".to_string()];
    let mut feature = vec!["Perturbation time (feature-level)".to_string()];
    let mut model = vec!["Perturbation time (model-level)".to_string()];
    let mut offline = vec!["Model build time (offline)".to_string()];
    for r in rows {
        header.push(format!("n = {}", r.n));
        feature.push(secs(Some(r.feature_online_s)));
        model.push(secs(r.model_online_s));
        offline.push(secs(r.model_offline_s));
    }
    let table = [header, feature, model, offline];
    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(&cells.join(" | "));
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}
