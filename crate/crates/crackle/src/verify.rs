//! Desk-scale statistical checks of the limit theorems: trial batches,
//! Poisson goodness of fit, hit/miss frequencies, region coverage, moment
//! scaling and the maximal-lifespan law.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crackle_core::limits::{BatchTally, LimitEstimate, MeanMeasure, Shape, BATCH_SIZE};
use crackle_core::model::{RadialSampler, ScalingPlan};
use crackle_core::ph::{crackle_diagram_with, DiagramOptions, DiagramVariant, PersistencePair};
use crackle_core::rng::trial_seed;

use crate::error::{Error, Result};

/// Nominal size of the chi-square test.
pub const GOF_ALPHA: f64 = 0.01;
/// Smallest expected count per chi-square bin.
pub const MIN_EXPECTED: f64 = 5.0;
/// Below this mean the Poisson tests have no power.
pub const DEGENERATE_LAMBDA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub component_id: usize,
    pub m: usize,
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
    pub birth_scaled: f64,
    pub death_scaled: f64,
}

impl PairRecord {
    pub fn from_pair(p: &PersistencePair, m_scale: f64) -> Self {
        Self {
            component_id: p.component_id,
            m: p.component_size,
            dim: p.dim,
            birth: p.birth,
            death: p.death,
            birth_scaled: p.birth / m_scale,
            death_scaled: p.death / m_scale,
        }
    }

    pub fn lifespan_scaled(&self) -> f64 {
        self.death_scaled - self.birth_scaled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub seed: u64,
    /// Points sampled in `|x| >= R - 2M`.
    pub shell_points: usize,
    /// Points with `|x| >= R`.
    pub far_points: usize,
    pub skipped_components: usize,
    pub pairs: Vec<PairRecord>,
    /// Pairs of the variant without isolation from `B(0; R)`; empty unless requested.
    pub tilde_pairs: Vec<PairRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub tilde: bool,
    pub m_cap: usize,
    /// Trials computed in parallel before being handed to the sink.
    pub chunk: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self { tilde: false, m_cap: crackle_core::ph::DEFAULT_M_CAP, chunk: 256 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    pub plan: ScalingPlan,
    pub master_seed: u64,
    pub trials: Vec<TrialRecord>,
}

/// Runs `trials` independent trials; see [`run_trials_with`].
pub fn run_trials(plan: &ScalingPlan, trials: u64, master_seed: u64) -> TrialBatch {
    run_trials_with(plan, trials, master_seed, TrialOptions::default(), |_| {})
}

/// Samples one cloud per trial and computes its crackle diagram. Each trial
/// seed is derived from `(master_seed, index)`, so the batch does not depend
/// on the thread count. Finished trials reach `sink` in index order.
pub fn run_trials_with<F: FnMut(&TrialRecord)>(
    plan: &ScalingPlan,
    trials: u64,
    master_seed: u64,
    opts: TrialOptions,
    mut sink: F,
) -> TrialBatch {
    let sampler = RadialSampler::new(plan.tail);
    let mut out = Vec::with_capacity(trials as usize);
    let chunk = opts.chunk.max(1) as u64;
    let mut start = 0;
    while start < trials {
        let end = (start + chunk).min(trials);
        let done: Vec<TrialRecord> =
            (start..end).into_par_iter().map(|i| one_trial(&sampler, plan, i, master_seed, &opts)).collect();
        for rec in done {
            sink(&rec);
            out.push(rec);
        }
        start = end;
    }
    TrialBatch { plan: *plan, master_seed, trials: out }
}

fn one_trial(sampler: &RadialSampler, plan: &ScalingPlan, index: u64, master: u64, opts: &TrialOptions) -> TrialRecord {
    let seed = trial_seed(master, index);
    let mut rec = TrialRecord {
        index,
        seed,
        shell_points: 0,
        far_points: 0,
        skipped_components: 0,
        pairs: Vec::new(),
        tilde_pairs: Vec::new(),
        error: None,
    };
    let shell = (plan.r - 2.0 * plan.m_scale).max(0.0);
    let cloud = match sampler.sample_shell(plan.n, shell, seed) {
        Ok(c) => c,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.shell_points = cloud.len();
    let diag_opts = DiagramOptions { m_cap: opts.m_cap };
    let m = plan.m_scale;
    match crackle_diagram_with(&cloud, plan, DiagramVariant::Isolated, diag_opts) {
        Ok(d) => {
            rec.far_points = d.far_points;
            rec.skipped_components = d.skipped_components;
            rec.pairs = d.pairs.iter().map(|p| PairRecord::from_pair(p, m)).collect();
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    if opts.tilde && rec.error.is_none() {
        match crackle_diagram_with(&cloud, plan, DiagramVariant::ConnectedOnly, diag_opts) {
            Ok(d) => rec.tilde_pairs = d.pairs.iter().map(|p| PairRecord::from_pair(p, m)).collect(),
            Err(e) => rec.error = Some(e.to_string()),
        }
    }
    rec
}

/// Inclusive range of component sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeFilter {
    pub min: usize,
    pub max: usize,
}

impl SizeFilter {
    pub fn exactly(m: usize) -> Self {
        Self { min: m, max: m }
    }

    pub fn at_least(m: usize) -> Self {
        Self { min: m, max: usize::MAX }
    }

    pub fn between(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn any() -> Self {
        Self { min: 0, max: usize::MAX }
    }

    pub fn admits(&self, m: usize) -> bool {
        self.min <= m && m <= self.max
    }
}

/// Pairs of one trial that fall in `region` after scaling.
pub fn count_in(pairs: &[PairRecord], region: &Shape, filter: SizeFilter) -> u64 {
    pairs.iter().filter(|p| filter.admits(p.m) && region.contains(p.birth_scaled, p.death_scaled)).count() as u64
}

/// Per-trial counts; `tilde` selects the non-isolated variant.
pub fn counts(batch: &TrialBatch, region: &Shape, filter: SizeFilter, tilde: bool) -> Vec<u64> {
    batch
        .trials
        .iter()
        .map(|t| count_in(if tilde { &t.tilde_pairs } else { &t.pairs }, region, filter))
        .collect()
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[u64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: String,
    pub observed: f64,
    pub reference: f64,
    pub reference_stderr: f64,
    pub p_value: Option<f64>,
    pub tolerance: f64,
    pub rule: String,
    pub passed: bool,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

impl TestReport {
    fn new(name: &str, statistic: &str, rule: &str) -> Self {
        Self {
            name: name.into(),
            statistic: statistic.into(),
            observed: 0.0,
            reference: 0.0,
            reference_stderr: 0.0,
            p_value: None,
            tolerance: 0.0,
            rule: rule.into(),
            passed: false,
            flags: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    /// Non-finite values cannot be stored in JSON; they are flagged instead.
    fn detail(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.details.insert(key.into(), value);
        } else {
            self.flags.push(format!("{key} is not finite"));
        }
    }
}

/// Groups Poisson bins from the left until each holds an expected count of at
/// least [`MIN_EXPECTED`]; the last group is the upper tail.
fn pooled_bins(lambda: f64, n: f64, max_obs: usize) -> Vec<(usize, f64)> {
    // (first count of the group, expected trials in the group)
    let mut groups: Vec<(usize, f64)> = Vec::new();
    let mut pmf = (-lambda).exp();
    let mut below = 0.0;
    let mut open = (0usize, 0.0f64);
    let last = max_obs.max(1) + 64;
    for j in 0..=last {
        open.1 += n * pmf;
        below += pmf;
        if open.1 >= MIN_EXPECTED && n * (1.0 - below) >= MIN_EXPECTED {
            groups.push(open);
            open = (j + 1, 0.0);
        }
        pmf *= lambda / (j + 1) as f64;
    }
    // the tail group takes everything at or above its start
    let tail_start = open.0;
    let tail_mass = n * (1.0 - below_up_to(lambda, tail_start));
    groups.push((tail_start, tail_mass));
    if groups.len() > 1 && groups.last().unwrap().1 < MIN_EXPECTED {
        let t = groups.pop().unwrap();
        groups.last_mut().unwrap().1 += t.1;
    }
    groups
}

/// `P(N < j)` for `N ~ Poisson(lambda)`.
fn below_up_to(lambda: f64, j: usize) -> f64 {
    let mut pmf = (-lambda).exp();
    let mut acc = 0.0;
    for i in 0..j {
        acc += pmf;
        pmf *= lambda / (i + 1) as f64;
    }
    acc.min(1.0)
}

/// Chi-square statistic, degrees of freedom and p-value of `counts` against
/// `Poisson(lambda)`; `None` when fewer than two pooled bins remain.
pub fn chi_square_poisson(counts: &[u64], lambda: f64) -> Option<(f64, usize, f64)> {
    let n = counts.len() as f64;
    let max_obs = counts.iter().copied().max().unwrap_or(0) as usize;
    let groups = pooled_bins(lambda, n, max_obs);
    if groups.len() < 2 {
        return None;
    }
    let mut stat = 0.0;
    for (g, &(start, expected)) in groups.iter().enumerate() {
        let end = groups.get(g + 1).map_or(u64::MAX, |next| next.0 as u64);
        let observed = counts.iter().filter(|&&c| c >= start as u64 && c < end).count() as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let dof = groups.len() - 1;
    let p = ChiSquared::new(dof as f64).map(|d| d.sf(stat)).unwrap_or(0.0);
    Some((stat, dof, p))
}

/// Poisson check of per-trial counts against the limiting mean: chi-square
/// p-value above [`GOF_ALPHA`], mean within three combined standard errors,
/// and void frequency within three binomial standard errors of `e^{-λ}`.
pub fn poisson_gof(counts: &[u64], lambda: &LimitEstimate) -> TestReport {
    let mut r = TestReport::new(
        "poisson_gof",
        "chi_square_p_value",
        "p > 0.01 && |mean - lambda| <= 3 (se_mc + se_trials) && |void - e^-lambda| <= 3 se_binomial",
    );
    let n = counts.len() as f64;
    let (mean, var) = mean_var(counts);
    let lam = lambda.value;
    r.reference = lam;
    r.reference_stderr = lambda.stderr;
    r.tolerance = GOF_ALPHA;
    r.detail("trials", n);
    r.detail("mean", mean);
    r.detail("variance", var);

    let se_mean = (var / n).sqrt();
    let mean_tol = 3.0 * (lambda.stderr + se_mean);
    let mean_ok = (mean - lam).abs() <= mean_tol;
    r.detail("mean_tolerance", mean_tol);

    let void = counts.iter().filter(|&&c| c == 0).count() as f64 / n;
    let q = (-lam).exp();
    let void_tol = 3.0 * (q * (1.0 - q) / n).sqrt();
    let void_ok = if void_tol == 0.0 { void == q } else { (void - q).abs() <= void_tol };
    r.detail("void_observed", void);
    r.detail("void_expected", q);
    r.detail("void_tolerance", void_tol);

    let gof_ok = match chi_square_poisson(counts, lam) {
        Some((stat, dof, p)) => {
            r.p_value = Some(p);
            r.observed = p;
            r.detail("chi_square", stat);
            r.detail("dof", dof as f64);
            p > GOF_ALPHA
        }
        None => {
            r.flags.push("too few bins for chi-square".into());
            counts.iter().all(|&c| c == 0) == (lam == 0.0)
        }
    };
    if lam < DEGENERATE_LAMBDA {
        r.flags.push("degenerate: lambda below 0.05".into());
    }
    r.detail("gof_ok", gof_ok as u8 as f64);
    r.detail("mean_ok", mean_ok as u8 as f64);
    r.detail("void_ok", void_ok as u8 as f64);
    r.passed = gof_ok && mean_ok && void_ok;
    r
}

/// Fraction of trials hitting the region against `1 - e^{-λ}`.
pub fn hit_miss_estimate(counts: &[u64], lambda: &LimitEstimate) -> TestReport {
    let mut r = TestReport::new("hit_miss", "hit_frequency", "|freq - (1 - e^-lambda)| <= 3 se_binomial");
    let n = counts.len() as f64;
    let freq = counts.iter().filter(|&&c| c > 0).count() as f64 / n;
    let q = 1.0 - (-lambda.value).exp();
    let se = (q * (1.0 - q) / n).sqrt();
    r.observed = freq;
    r.reference = q;
    r.reference_stderr = (-lambda.value).exp() * lambda.stderr;
    r.tolerance = 3.0 * se;
    r.passed = if se == 0.0 { freq == q } else { (freq - q).abs() <= 3.0 * se };
    r.detail("trials", n);
    if lambda.value < DEGENERATE_LAMBDA {
        r.flags.push("degenerate: lambda below 0.05".into());
    }
    r
}

/// Per-trial fraction of `eps`-grid cells of `region` whose centers lie
/// within `eps` of a scaled pair from components of size `k+2 ..= p-1`.
pub fn coverage_fraction(batch: &TrialBatch, region: &Shape, eps: f64) -> Result<TestReport> {
    let plan = &batch.plan;
    if plan.p < plan.k + 3 {
        return Err(Error::EmptyRegion(format!("no sizes between {} and {}", plan.k + 2, plan.p - 1)));
    }
    let centers = region.grid_centers(eps);
    if centers.is_empty() {
        return Err(Error::EmptyRegion("no grid cell centers fall in the region".into()));
    }
    let filter = SizeFilter::between(plan.k + 2, plan.p - 1);
    let fractions: Vec<f64> = batch
        .trials
        .iter()
        .map(|t| {
            let pts: Vec<(f64, f64)> =
                t.pairs.iter().filter(|p| filter.admits(p.m)).map(|p| (p.birth_scaled, p.death_scaled)).collect();
            let covered = centers
                .iter()
                .filter(|c| pts.iter().any(|p| (p.0 - c.0).hypot(p.1 - c.1) < eps))
                .count();
            covered as f64 / centers.len() as f64
        })
        .collect();
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut r = TestReport::new("coverage", "mean_covered_fraction", "mean covered fraction of the eps-grid");
    r.observed = mean;
    r.reference = 1.0;
    r.tolerance = eps;
    r.passed = true;
    r.detail("cells", centers.len() as f64);
    r.detail("stderr", (var / n).sqrt());
    r.detail("trials", n);
    Ok(r)
}

/// Non-decreasing mean coverage along a ladder, ending at or above `threshold`.
pub fn coverage_trend(rungs: &[TestReport], threshold: f64) -> TestReport {
    let mut r = TestReport::new(
        "coverage_trend",
        "top_rung_fraction",
        "non-decreasing along the ladder (within 2 stderr) && top rung >= threshold",
    );
    let monotone = rungs.windows(2).all(|w| {
        let slack = 2.0 * (w[0].details["stderr"] + w[1].details["stderr"]);
        w[1].observed + slack >= w[0].observed
    });
    let top = rungs.last().map_or(0.0, |t| t.observed);
    for (i, rung) in rungs.iter().enumerate() {
        r.detail(&format!("rung{i}"), rung.observed);
    }
    r.observed = top;
    r.reference = threshold;
    r.tolerance = threshold;
    r.detail("monotone", monotone as u8 as f64);
    r.passed = monotone && top >= threshold;
    r
}

/// Summary of one rung of an `n`-ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    /// `n M^d f(R)`.
    pub density_scale: f64,
    pub mean: f64,
    pub variance: f64,
    pub trials: u64,
}

/// Least-squares slope of `log mean` against `log(n M^d f(R))` with a 95%
/// interval, and the fitted variance constant `κ` in `Var <= κ / (n M^d f(R))`.
pub fn moment_scaling(rungs: &[RungSummary], slope_range: (f64, f64)) -> Result<TestReport> {
    if rungs.len() < 2 {
        return Err(Error::InsufficientSpread("need at least two rungs".into()));
    }
    let xs: Vec<f64> = rungs.iter().map(|r| r.density_scale).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::InsufficientSpread(format!("n M^d f(R) spans only a factor {:.3}", hi / lo)));
    }
    if rungs.iter().any(|r| !(r.mean > 0.0)) {
        return Err(Error::DegenerateTest("a rung has zero mean count".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = rungs.iter().map(|r| r.mean.ln()).collect();
    let (slope, intercept, se) = least_squares(&lx, &ly);
    let mut r = TestReport::new("moment_scaling", "log_log_slope", "slope within the stated range");
    r.observed = slope;
    r.reference = -1.0;
    r.reference_stderr = se;
    r.tolerance = (slope_range.1 - slope_range.0) / 2.0;
    r.passed = slope >= slope_range.0 && slope <= slope_range.1;
    r.detail("intercept", intercept);
    r.detail("ci95_low", slope - 1.96 * se);
    r.detail("ci95_high", slope + 1.96 * se);
    // κ by least squares through the origin of Var on 1 / x
    let inv: Vec<f64> = xs.iter().map(|x| 1.0 / x).collect();
    let kappa = inv.iter().zip(rungs).map(|(u, r)| u * r.variance).sum::<f64>() / inv.iter().map(|u| u * u).sum::<f64>();
    let worst = rungs.iter().zip(&inv).map(|(r, u)| r.variance / (kappa * u)).fold(0.0, f64::max);
    r.detail("variance_kappa", kappa);
    r.detail("variance_worst_ratio", worst);
    for (i, rung) in rungs.iter().enumerate() {
        r.detail(&format!("rung{i}_scale"), rung.density_scale);
        r.detail(&format!("rung{i}_mean"), rung.mean);
    }
    Ok(r)
}

/// Slope, intercept and slope standard error of an ordinary least-squares line.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let se = if x.len() > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

/// Largest scaled lifespan among pairs (all sizes) born at or before `t`;
/// `None` when the trial has no such pair.
pub fn trial_lifespan(trial: &TrialRecord, t: f64) -> Option<f64> {
    trial.pairs.iter().filter(|p| p.birth_scaled <= t).map(|p| p.lifespan_scaled()).reduce(f64::max)
}

/// Frequency of `T > floor + delta` against `1 - e^{-λ(J_t)}`. Trials with no
/// pair born by `t` have `T = 0` and are left out of the frequency.
pub fn lifespan_law(batch: &TrialBatch, t: f64, floor: f64, delta: f64, lambda_jt: &LimitEstimate) -> TestReport {
    let mut r = TestReport::new(
        "lifespan_law",
        "exceedance_frequency",
        "|P(T > floor + delta) - (1 - e^-lambda(J_t))| <= 3 se_binomial",
    );
    let lifespans: Vec<f64> = batch.trials.iter().filter_map(|tr| trial_lifespan(tr, t)).collect();
    let empty = batch.trials.len() - lifespans.len();
    let n = lifespans.len() as f64;
    let exceed = lifespans.iter().filter(|&&l| l > floor + delta).count() as f64;
    let q = 1.0 - (-lambda_jt.value).exp();
    let freq = if n > 0.0 { exceed / n } else { 0.0 };
    let se = if n > 0.0 { (q * (1.0 - q) / n).sqrt() } else { 0.0 };
    r.observed = freq;
    r.reference = q;
    r.reference_stderr = (-lambda_jt.value).exp() * lambda_jt.stderr;
    r.tolerance = 3.0 * se;
    r.passed = n > 0.0 && if se == 0.0 { freq == q } else { (freq - q).abs() <= 3.0 * se };
    r.detail("trials_used", n);
    r.detail("trials_empty", empty as f64);
    r.detail("floor", floor);
    r.detail("delta", delta);
    if n == 0.0 {
        r.flags.push("every diagram was empty before t".into());
    }
    r
}

/// Whole-law check of `T` when the floor is zero: at each threshold `z`,
/// `P(T > z)` against `1 - e^{-λ_z}` with `λ_z` the mean measure of
/// `{x <= t, y - x > z}`. Passes when every threshold is within three binomial
/// standard errors.
pub fn lifespan_curve(batch: &TrialBatch, t: f64, thresholds: &[(f64, LimitEstimate)]) -> TestReport {
    let mut r = TestReport::new("lifespan_curve", "max_standardized_deviation", "every threshold within 3 se_binomial");
    let lifespans: Vec<f64> = batch.trials.iter().map(|tr| trial_lifespan(tr, t).unwrap_or(0.0)).collect();
    let n = lifespans.len() as f64;
    let mut worst = 0.0f64;
    let mut ok = true;
    for (i, (z, lam)) in thresholds.iter().enumerate() {
        let freq = lifespans.iter().filter(|&&l| l > *z).count() as f64 / n;
        let q = 1.0 - (-lam.value).exp();
        let se = (q * (1.0 - q) / n).sqrt();
        let dev = if se > 0.0 { (freq - q).abs() / se } else if freq == q { 0.0 } else { f64::MAX };
        ok &= dev <= 3.0;
        worst = worst.max(dev);
        r.detail(&format!("z{i}"), *z);
        r.detail(&format!("z{i}_observed"), freq);
        r.detail(&format!("z{i}_expected"), q);
    }
    r.observed = worst;
    r.reference = 0.0;
    r.tolerance = 3.0;
    r.passed = ok;
    r
}

/// Evaluates a mean-measure job on all regions with batches run in parallel
/// and merged in batch order.
pub fn estimate_parallel(job: &MeanMeasure, regions: &[Shape]) -> Result<Vec<LimitEstimate>> {
    let tallies: Vec<BatchTally> = (0..job.batch_count()).into_par_iter().map(|b| job.run_batch(b, regions)).collect();
    Ok(job.finish(tallies, regions.len())?)
}

/// Adds batches until every region with a nonzero estimate has
/// `stderr / value < rel_target`, or `max_samples` is reached. Batch streams
/// do not depend on the total, so the result depends only on where it stops.
pub fn estimate_to_precision(
    job: &MeanMeasure,
    regions: &[Shape],
    rel_target: f64,
    max_samples: u64,
) -> Result<Vec<LimitEstimate>> {
    let max_batches = max_samples.div_ceil(BATCH_SIZE);
    let mut tallies: Vec<BatchTally> = Vec::new();
    let mut step = job.batch_count().clamp(1, max_batches);
    loop {
        let from = tallies.len() as u64;
        let to = (from + step).min(max_batches);
        let full = MeanMeasure { samples: to * BATCH_SIZE, ..*job };
        let more: Vec<BatchTally> = (from..to).into_par_iter().map(|b| full.run_batch(b, regions)).collect();
        tallies.extend(more);
        let est = full.finish(tallies.iter().cloned(), regions.len());
        let done = to >= max_batches;
        match est {
            Ok(e) if done || e.iter().all(|x| x.value == 0.0 || x.stderr < rel_target * x.value) => return Ok(e),
            Err(err) if done => return Err(err.into()),
            _ => {}
        }
        step = to;
    }
}
