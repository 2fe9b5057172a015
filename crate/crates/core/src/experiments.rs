//! Experiment orchestration: configuration, replicate fan-out, log-log
//! regression with a bootstrap interval, and CSV/JSON output.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msf::MsfHandle;
use crate::resistance::{reff_laplacian, reff_root_to_shell};
use crate::rng::{mix2, RngStream};
use crate::walk::{self, ReturnMethod};

const BOOT_KEY: u64 = 0xb007_5742;
const WALK_KEY: u64 = 0x5741_4c4b;
/// Atoms below this are dropped by exact propagation; the dropped mass is
/// reported as a rigorous error bound.
pub const EPS_TRUNC: f64 = 1e-15;

/// Largest `n` kept exact when a handle falls back to the collision estimator.
pub const EXACT_SWITCH: u64 = 512;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Volume,
    Resistance,
    Spectral,
    Displacement,
    ExitTime,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Volume => "volume",
            Self::Resistance => "resistance",
            Self::Spectral => "spectral",
            Self::Displacement => "displacement",
            Self::ExitTime => "exit-time",
        }
    }

    fn default_scales(self) -> Vec<u64> {
        match self {
            Self::Volume | Self::Resistance => dyadic(3, 8),
            Self::Spectral => dyadic(6, 12),
            Self::Displacement => dyadic(6, 14),
            Self::ExitTime => dyadic(2, 6),
        }
    }

    fn default_replicates(self) -> usize {
        match self {
            Self::Volume | Self::Resistance => 200,
            Self::Spectral => 50,
            Self::Displacement => 50,
            Self::ExitTime => 100,
        }
    }

    fn default_walks(self) -> usize {
        match self {
            Self::Displacement => 200,
            Self::ExitTime => 4,
            Self::Spectral => 2000,
            _ => 1,
        }
    }

    /// Exponent reported in summaries, as a function of the fitted slope.
    pub fn exponent(self, slope: f64) -> f64 {
        match self {
            Self::Spectral => -2.0 * slope,
            _ => slope,
        }
    }
}

/// `2^lo, ..., 2^hi`.
pub fn dyadic(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|k| 1u64 << k).collect()
}

/// One experiment run. Missing fields take the experiment's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub scales: Vec<u64>,
    /// Handles (independent samples of M).
    #[serde(default)]
    pub replicates: usize,
    /// Walks per handle, for walk experiments.
    #[serde(default)]
    pub walks: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap_vertices: usize,
    /// Step cap for exit-time walks.
    #[serde(default = "default_step_cap")]
    pub cap_steps: u64,
    #[serde(default = "default_method")]
    pub method: ReturnMethod,
    /// Balls up to this many vertices also get the Laplacian resistance.
    #[serde(default = "default_lap_limit")]
    pub laplacian_limit: usize,
    #[serde(default)]
    pub csv_path: Option<String>,
    #[serde(default)]
    pub summary_path: Option<String>,
}

fn default_cap() -> usize {
    crate::invasion::DEFAULT_VERTEX_CAP
}

fn default_step_cap() -> u64 {
    walk::EXIT_STEP_CAP
}

fn default_method() -> ReturnMethod {
    ReturnMethod::ExactPropagation
}

fn default_lap_limit() -> usize {
    20_000
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            scales: experiment.default_scales(),
            replicates: experiment.default_replicates(),
            walks: experiment.default_walks(),
            seed: 0,
            cap_vertices: default_cap(),
            cap_steps: default_step_cap(),
            method: default_method(),
            laplacian_limit: default_lap_limit(),
            csv_path: None,
            summary_path: None,
        }
    }

    /// Parses JSON, fills defaults for empty fields and validates.
    pub fn from_json(s: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))?;
        if c.scales.is_empty() {
            c.scales = c.experiment.default_scales();
        }
        if c.replicates == 0 {
            c.replicates = c.experiment.default_replicates();
        }
        if c.walks == 0 {
            c.walks = c.experiment.default_walks();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition("scales must be non-empty and strictly ascending".into()));
        }
        if self.scales[0] == 0 && self.experiment != ExperimentKind::Volume && self.experiment != ExperimentKind::Resistance {
            return Err(Error::Precondition("walk scales must be >= 1".into()));
        }
        if self.scales.iter().any(|&s| s > u32::MAX as u64) {
            return Err(Error::Precondition("scale too large".into()));
        }
        if self.replicates == 0 || self.walks == 0 {
            return Err(Error::Precondition("replicates and walks must be >= 1".into()));
        }
        if self.experiment == ExperimentKind::Spectral && self.method != ReturnMethod::ExactPropagation && self.walks < 2 {
            return Err(Error::Precondition("Monte Carlo return estimates need walks >= 2".into()));
        }
        if self.cap_vertices == 0 || self.cap_steps == 0 {
            return Err(Error::Precondition("caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One measured value. `id` is the handle, or `handle * walks + walk` for
/// per-walk statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub id: u64,
    pub scale: u64,
    pub statistic: f64,
    pub stderr: f64,
    pub censored: bool,
    /// Independent check value, when one was computed.
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub scales_used: usize,
    /// Rows dropped because the statistic was not positive.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub kind: ExperimentKind,
    pub rows: Vec<EstimateRow>,
    pub fit: Option<LogLogFit>,
}

impl EstimateSeries {
    pub fn n_censored(&self) -> usize {
        self.rows.iter().filter(|r| r.censored).count()
    }

    /// Median of the uncensored positive statistics at each scale.
    pub fn medians(&self) -> Vec<(u64, f64)> {
        per_scale(&self.rows).into_iter().filter(|(_, v)| !v.is_empty()).map(|(s, v)| (s, crate::stats::median(&v))).collect()
    }
}

fn per_scale(rows: &[EstimateRow]) -> Vec<(u64, Vec<f64>)> {
    let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut scales: Vec<u64> = rows.iter().map(|r| r.scale).collect();
    scales.sort_unstable();
    scales.dedup();
    for s in scales {
        let v = rows.iter().filter(|r| r.scale == s && !r.censored && r.statistic > 0.0).map(|r| r.statistic).collect();
        out.push((s, v));
    }
    out
}

/// OLS of log median statistic on log scale over uncensored rows, with a
/// percentile bootstrap interval that resamples rows within each scale.
pub fn fit_loglog(rows: &[EstimateRow], seed: u64) -> Result<LogLogFit> {
    let excluded = rows.iter().filter(|r| !r.censored && !(r.statistic > 0.0)).count();
    let groups: Vec<(u64, Vec<f64>)> = per_scale(rows).into_iter().filter(|(s, v)| *s > 0 && !v.is_empty()).collect();
    if groups.len() < 3 {
        return Err(Error::Precondition(format!("need >= 3 scales with positive statistics, have {}", groups.len())));
    }
    let xs: Vec<f64> = groups.iter().map(|(s, _)| (*s as f64).ln()).collect();
    let ys: Vec<f64> = groups.iter().map(|(_, v)| crate::stats::median(v).ln()).collect();
    let (slope, intercept) = crate::stats::ols(&xs, &ys);
    let mut rng = RngStream::new(seed, BOOT_KEY);
    let mut boots = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut buf = Vec::new();
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ys: Vec<f64> = groups
            .iter()
            .map(|(_, v)| {
                buf.clear();
                buf.extend((0..v.len()).map(|_| v[rng.below(v.len() as u64) as usize]));
                crate::stats::median(&buf).ln()
            })
            .collect();
        boots.push(crate::stats::ols(&xs, &ys).0);
    }
    boots.sort_by(f64::total_cmp);
    Ok(LogLogFit {
        slope,
        intercept,
        ci_lo: crate::stats::quantile(&boots, 0.025),
        ci_hi: crate::stats::quantile(&boots, 0.975),
        scales_used: groups.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: ExperimentKind,
    pub slope: Option<f64>,
    pub exponent: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_censored: usize,
    pub medians: Vec<(u64, f64)>,
    pub wall_time: f64,
    pub config: ExperimentConfig,
}

/// Runs the experiment. Handles are independent and processed in parallel;
/// rows come back in handle order whatever the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(EstimateSeries, ExperimentSummary)> {
    config.validate()?;
    let started = Instant::now();
    let per_handle: Vec<Result<Vec<EstimateRow>>> =
        (0..config.replicates as u64).into_par_iter().map(|h| run_handle(config, h)).collect();
    let mut rows = Vec::new();
    for r in per_handle {
        rows.extend(r?);
    }
    let fit = fit_loglog(&rows, config.seed).ok();
    let series = EstimateSeries { kind: config.experiment, rows, fit };
    let summary = ExperimentSummary {
        experiment: config.experiment,
        slope: fit.map(|f| f.slope),
        exponent: fit.map(|f| config.experiment.exponent(f.slope)),
        ci_lo: fit.map(|f| config.experiment.exponent(f.ci_lo).min(config.experiment.exponent(f.ci_hi))),
        ci_hi: fit.map(|f| config.experiment.exponent(f.ci_lo).max(config.experiment.exponent(f.ci_hi))),
        n_censored: series.n_censored(),
        medians: series.medians(),
        wall_time: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok((series, summary))
}

fn handle_seed(config: &ExperimentConfig, h: u64) -> u64 {
    mix2(config.seed, h)
}

fn row(id: u64, scale: u64, statistic: f64) -> EstimateRow {
    EstimateRow { id, scale, statistic, stderr: 0.0, censored: false, oracle: None }
}

fn censored(id: u64, scale: u64) -> EstimateRow {
    EstimateRow { id, scale, statistic: f64::NAN, stderr: f64::NAN, censored: true, oracle: None }
}

fn run_handle(c: &ExperimentConfig, h: u64) -> Result<Vec<EstimateRow>> {
    let mut g = MsfHandle::new(handle_seed(c, h), c.cap_vertices)?;
    let mut out = Vec::new();
    match c.experiment {
        ExperimentKind::Volume => {
            for &r in &c.scales {
                match g.ensure_ball(r as u32) {
                    Ok(()) => out.push(row(h, r, g.ball_volume(r as u32)? as f64)),
                    Err(Error::Censored { .. }) => out.push(censored(h, r)),
                    Err(e) => return Err(e),
                }
            }
        }
        ExperimentKind::Resistance => {
            for &r in &c.scales {
                let r32 = r as u32;
                match reff_root_to_shell(&mut g, r32) {
                    Ok(x) => {
                        let mut e = row(h, r, x);
                        if g.ball_volume(r32 + 1)? as usize <= c.laplacian_limit {
                            let (tree, ids) = g.ball_tree(r32 + 1)?;
                            let sink: Vec<bool> = ids.iter().map(|&v| g.dist(v) > r32).collect();
                            e.oracle = Some(reff_laplacian(&tree.neighbors(), 0, &sink));
                        }
                        out.push(e);
                    }
                    Err(Error::Censored { .. }) => out.push(censored(h, r)),
                    Err(e) => return Err(e),
                }
            }
        }
        ExperimentKind::Spectral => {
            let mut rng = RngStream::new(handle_seed(c, h), WALK_KEY);
            let est = match c.method {
                ReturnMethod::ExactPropagation => match walk::return_prob_exact_series(&mut g, &c.scales, EPS_TRUNC) {
                    // Support outgrew memory: keep exact values at small n and
                    // switch to the collision estimator above.
                    Err(Error::Resource(_)) => {
                        let (small, large): (Vec<u64>, Vec<u64>) = c.scales.iter().partition(|&&n| n <= EXACT_SWITCH);
                        let mut est = walk::return_prob_exact_series(&mut g, &small, EPS_TRUNC)?;
                        est.extend(walk::return_prob_collision_series(&mut g, &large, c.walks, &mut rng)?);
                        Ok(est)
                    }
                    r => r,
                },
                ReturnMethod::Collision => walk::return_prob_collision_series(&mut g, &c.scales, c.walks, &mut rng),
                ReturnMethod::Hit => walk::return_prob_hit_series(&mut g, &c.scales, c.walks, &mut rng),
            };
            match est {
                Ok(est) => out.extend(est.iter().map(|e| EstimateRow { stderr: e.stderr, ..row(h, e.n, e.p2n) })),
                Err(Error::Censored { .. }) => out.extend(c.scales.iter().map(|&s| censored(h, s))),
                Err(e) => return Err(e),
            }
        }
        ExperimentKind::Displacement => {
            for w in 0..c.walks as u64 {
                let id = h * c.walks as u64 + w;
                let mut rng = RngStream::new(handle_seed(c, h), mix2(WALK_KEY, w));
                match walk::displacement(&mut g, &c.scales, &mut rng) {
                    Ok(d) => out.extend(c.scales.iter().zip(d).map(|(&n, d)| row(id, n, d as f64))),
                    Err(Error::Censored { .. }) => out.extend(c.scales.iter().map(|&s| censored(id, s))),
                    Err(e) => return Err(e),
                }
            }
        }
        ExperimentKind::ExitTime => {
            let radii: Vec<u32> = c.scales.iter().map(|&s| s as u32).collect();
            for w in 0..c.walks as u64 {
                let id = h * c.walks as u64 + w;
                let mut rng = RngStream::new(handle_seed(c, h), mix2(WALK_KEY, w));
                match walk::exit_times(&mut g, &radii, c.cap_steps, &mut rng) {
                    Ok(ex) => out.extend(ex.iter().map(|e| EstimateRow {
                        censored: e.censored,
                        ..row(id, e.radius as u64, e.steps as f64)
                    })),
                    Err(Error::Censored { .. }) => out.extend(c.scales.iter().map(|&s| censored(id, s))),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

fn num(x: f64) -> String {
    if x.is_finite() { format!("{x:e}") } else { String::new() }
}

/// CSV header for an experiment's rows.
pub fn csv_header(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Volume => "rep,r,volume,censored",
        ExperimentKind::Resistance => "handle,r,R_tree,R_lap,gap,censored",
        ExperimentKind::Spectral | ExperimentKind::Displacement | ExperimentKind::ExitTime => {
            "handle,scale,statistic,stderr,censored"
        }
    }
}

pub fn write_csv(series: &EstimateSeries, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{}", csv_header(series.kind))?;
    for r in &series.rows {
        match series.kind {
            ExperimentKind::Volume => writeln!(out, "{},{},{},{}", r.id, r.scale, num(r.statistic), r.censored)?,
            ExperimentKind::Resistance => {
                let lap = r.oracle.map_or(String::new(), num);
                let gap = r.oracle.map_or(String::new(), |o| num((o - r.statistic).abs()));
                writeln!(out, "{},{},{},{},{},{}", r.id, r.scale, num(r.statistic), lap, gap, r.censored)?
            }
            _ => writeln!(out, "{},{},{},{},{}", r.id, r.scale, num(r.statistic), num(r.stderr), r.censored)?,
        }
    }
    Ok(())
}

/// Summary as pretty JSON.
pub fn summary_json(s: &ExperimentSummary) -> String {
    serde_json::to_string_pretty(s).expect("summary serializes")
}

/// Parses `a:b:n` into `n` evenly spaced points from `a` to `b`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Parse(format!("grid {s:?}: {m}"));
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected a:b:n"));
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad("bad start"))?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad("bad end"))?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad("bad count"))?;
    if !a.is_finite() || !b.is_finite() || a >= b {
        return Err(bad("need finite a < b"));
    }
    if !(2..=10_000_000).contains(&n) {
        return Err(bad("count must be in 2..=10^7"));
    }
    Ok((0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect())
}

/// Parses a comma-separated list of positive integers.
pub fn parse_n_list(s: &str) -> Result<Vec<u64>> {
    let out: Vec<u64> = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<u64>().ok().filter(|&v| v > 0).ok_or_else(|| Error::Parse(format!("bad list entry {t:?}")))
        })
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Parse("empty list".into()));
    }
    Ok(out)
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Added to θ before the survival-equation check, to exercise the check.
    pub theta_offset: f64,
}

fn check(name: &str, value: f64, threshold: f64, passed: bool) -> CheckResult {
    CheckResult { name: name.into(), passed, value, threshold }
}

/// Reduced-scale invariant suite over every module.
pub fn validate(opts: ValidateOptions) -> Result<Vec<CheckResult>> {
    use crate::kernel;
    let seed = opts.seed;
    let mut out = Vec::new();

    let grid: Vec<f64> = (0..10_000).map(|i| 1.0 + 1e-4 + 29.0 * i as f64 / 9_999.0).collect();
    let mut worst: f64 = 0.0;
    for &l in &grid {
        worst = worst.max(kernel::survival_residual(l, kernel::theta(l)? + opts.theta_offset).abs());
    }
    out.push(check("survival equation residual", worst, 1e-12, worst <= 1e-12));

    let mut worst: f64 = 0.0;
    for i in 1..=1000 {
        let s = 1.0 + i as f64 / 1000.0 * 6.0;
        let st = kernel::dual(s)?;
        worst = worst.max((s * (-s).exp() - st * (-st).exp()).abs());
    }
    out.push(check("duality identity", worst, 1e-12, worst <= 1e-12));

    let mut worst: f64 = 0.0;
    for l in [1.2, 1.5, 2.0, 5.0] {
        worst = worst.max((crate::dist::BorelTannerTable::build(l)?.total() - 1.0).abs());
    }
    out.push(check("Borel-Tanner normalisation", worst, 1e-9, worst <= 1e-9));

    let mut rng = RngStream::new(seed, 1);
    let mut m = crate::stats::Moments::default();
    for _ in 0..100_000 {
        m.push(crate::pgwa::sample_pgwa_summary(2.0, &mut rng, u64::MAX)?.size as f64);
    }
    let z = (m.mean() - kernel::mean_size_g(2.0)?) / m.stderr();
    out.push(check("aggregation tree mean size vs g(2) |z|", z.abs(), 4.0, z.abs() <= 4.0));

    let mut rng = RngStream::new(seed, 2);
    let mut state = crate::invasion::PondChainState::initial(&mut rng);
    let mut ok = true;
    let mut ponds = 0.0;
    while state.outlet_weight > 1.05 && ponds < 200.0 {
        let (p, next) = crate::invasion::next_pond_capped(state, &mut rng, 1_000_000)?;
        ok &= next.outlet_weight < p.outlet_weight && next.outlet_weight > 1.0 && p.tree.is_valid() && next.validate().is_ok();
        state = next;
        ponds += 1.0;
    }
    out.push(check("pond chain outlets decrease", ponds, 0.0, ok));

    let mut bad = 0.0;
    for h in 0..20 {
        let mut g = MsfHandle::new(mix2(seed, h), 10_000_000)?;
        g.ensure_ball(16)?;
        bad += g.check_invariants().is_err() as u8 as f64;
    }
    out.push(check("root component invariants failing handles", bad, 0.0, bad == 0.0));

    let mut worst: f64 = 0.0;
    let mut over = 0.0;
    for h in 0..20 {
        let mut g = MsfHandle::new(mix2(seed, 100 + h), 10_000_000)?;
        let rec = reff_root_to_shell(&mut g, 12)?;
        let (tree, _) = g.ball_tree(13)?;
        let lap = crate::resistance::reff_laplacian_oracle(&tree, 0, 12);
        worst = worst.max((rec - lap).abs() / rec.max(1.0));
        over += (rec > 13.0) as u8 as f64;
    }
    out.push(check("resistance recursion vs Laplacian", worst, 1e-9, worst <= 1e-9));
    out.push(check("resistance above r+1 count", over, 0.0, over == 0.0));

    let mut num_sq = 0.0;
    let mut rng = RngStream::new(seed, 3);
    for h in 0..5 {
        let mut g = MsfHandle::new(mix2(seed, 200 + h), 10_000_000)?;
        let e = walk::return_prob_exact(&mut g, 64, 0.0)?;
        let c = walk::return_prob_collision(&mut g, 64, 2000, &mut rng)?;
        let z = (e.p2n - c.p2n) / c.stderr.max(1e-300);
        num_sq += z * z;
    }
    let z = (num_sq / 5.0).sqrt();
    out.push(check("exact vs collision return probability rms z", z, 3.0, z <= 3.0));

    let mut rng = RngStream::new(seed, 4);
    let mut ok = true;
    for _ in 0..10 {
        let g = crate::mst::WeightedGraph::complete(40, 1.0, &mut rng)?;
        let k = crate::mst::kruskal_mst(&g)?;
        ok &= k == crate::mst::prim_mst(&g)?;
    }
    let g = crate::mst::WeightedGraph::complete(20, 1.0, &mut rng)?;
    ok &= crate::mst::cycle_property_holds(&g, &crate::mst::kruskal_mst(&g)?);
    out.push(check("Kruskal equals Prim and cycle property", 0.0, 0.0, ok));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(pairs: &[(u64, f64)]) -> Vec<EstimateRow> {
        pairs.iter().enumerate().map(|(i, &(s, v))| row(i as u64, s, v)).collect()
    }

    #[test]
    fn exact_power_laws() {
        let grid = dyadic(3, 8);
        let f = fit_loglog(&rows(&grid.iter().map(|&x| (x, (x as f64).powi(3))).collect::<Vec<_>>()), 0).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        let f = fit_loglog(&rows(&grid.iter().map(|&x| (x, 7.0)).collect::<Vec<_>>()), 0).unwrap();
        assert!(f.slope.abs() < 1e-12);
    }

    #[test]
    fn log_corrected_power_law() {
        // Closed form: slope of ln(x^3 ln^2 x) against ln x by OLS.
        let grid = dyadic(3, 8);
        let xs: Vec<f64> = grid.iter().map(|&x| (x as f64).ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|&l| 3.0 * l + 2.0 * l.ln()).collect();
        let mx = xs.iter().sum::<f64>() / 6.0;
        let my = ys.iter().sum::<f64>() / 6.0;
        let oracle = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        let f = fit_loglog(&rows(&grid.iter().map(|&x| (x, (x as f64).powi(3) * (x as f64).ln().powi(2))).collect::<Vec<_>>()), 0)
            .unwrap();
        assert!((f.slope - oracle).abs() < 1e-12);
        assert!(f.slope > 3.0 && f.slope < 3.6);
    }

    #[test]
    fn fit_skips_censored_and_nonpositive_rows() {
        let mut r = rows(&[(8, 8.0), (16, 16.0), (32, 32.0), (32, -1.0)]);
        r.push(censored(9, 64));
        let f = fit_loglog(&r, 0).unwrap();
        assert_eq!(f.scales_used, 3);
        assert_eq!(f.excluded, 1);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(fit_loglog(&rows(&[(8, 1.0), (16, 2.0)]), 0).is_err());
    }

    #[test]
    fn bootstrap_interval_covers_the_slope() {
        let mut rng = RngStream::new(1, 1);
        let mut r = Vec::new();
        for &s in &dyadic(3, 8) {
            for i in 0..50 {
                r.push(row(i, s, (s as f64).powi(2) * (0.5 + rng.uniform())));
            }
        }
        let f = fit_loglog(&r, 3).unwrap();
        assert!(f.ci_lo <= f.slope && f.slope <= f.ci_hi);
        assert!(f.ci_hi - f.ci_lo < 0.3);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let c = ExperimentConfig::new(ExperimentKind::Spectral);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let d = ExperimentConfig::from_json(r#"{"experiment":"volume","seed":5}"#).unwrap();
        assert_eq!(d.scales, dyadic(3, 8));
        assert_eq!(d.replicates, 200);
        assert!(ExperimentConfig::from_json(r#"{"experiment":"volume","scales":[16,8]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment":"volume","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json("not json").is_err());
    }

    #[test]
    fn grid_and_list_parsing() {
        assert_eq!(parse_grid("1:2:3").unwrap(), vec![1.0, 1.5, 2.0]);
        for bad in ["1:2", "2:1:5", "1:2:1", "a:2:3", "1:inf:3", ""] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
        assert_eq!(parse_n_list("256, 1024,4096").unwrap(), vec![256, 1024, 4096]);
        for bad in ["", "1,,2", "0", "-3", "x"] {
            assert!(parse_n_list(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn runs_are_identical_across_thread_counts() {
        let mut c = ExperimentConfig::new(ExperimentKind::Displacement);
        c.scales = vec![4, 8, 16];
        c.replicates = 6;
        c.walks = 3;
        c.seed = 11;
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_experiment(&c).unwrap().0)
        };
        let (a, b) = (run(1), run(4));
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_csv(&a, &mut x).unwrap();
        write_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.rows.len(), 6 * 3 * 3);
    }

    #[test]
    fn validation_suite_passes_and_catches_a_bad_theta() {
        let report = validate(ValidateOptions { seed: 0, theta_offset: 0.0 }).unwrap();
        assert!(report.iter().all(|c| c.passed), "{report:?}");
        let report = validate(ValidateOptions { seed: 0, theta_offset: 1e-3 }).unwrap();
        assert!(!report[0].passed);
    }
}
