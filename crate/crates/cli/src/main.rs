use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use pwit_msf::experiments::{self, ExperimentConfig, ExperimentKind};
use pwit_msf::rng::{mix2, RngStream};
use pwit_msf::walk::ReturnMethod;
use pwit_msf::{dist, invasion, kernel, msf, mst, pgwa, walk};

const SAMPLE_KEY: u64 = 0x53_414d_504c;

#[derive(Parser, Debug)]
#[command(name = "pwit-msf", version, about = "Experiments on the root component of the wired minimal spanning forest of the PWIT")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path. Defaults to `<subcommand>.csv` under the output
    /// directory variable when set, else stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON experiment configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    cap_vertices: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// θ and related quantities at one λ.
    Theta {
        #[arg(long)]
        lambda: f64,
    },
    /// Kernel curves on a grid `a:b:n`.
    Curves {
        #[arg(long)]
        grid: String,
    },
    /// Independent draws from one of the samplers.
    Sample {
        #[arg(long, value_enum)]
        dist: SampleDist,
        /// Distribution parameter (λ, μ, size or outlet weight).
        #[arg(long)]
        param: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Pond chain or direct invasion.
    Ipc {
        #[arg(long, value_enum, default_value_t = IpcMode::Chain)]
        mode: IpcMode,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
    /// Aggregation trees.
    Pgwa {
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long)]
        depth: Option<u32>,
    },
    /// Ball volumes of the root component.
    MsfBall {
        /// Radii, comma separated.
        #[arg(long)]
        r: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        /// Also write the edge list of the first handle's largest ball here.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Raw walk traces.
    Walk {
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Return probabilities and the spectral dimension.
    Spectral {
        #[arg(long)]
        nmax: Option<u64>,
        #[command(flatten)]
        ex: ExperimentArgs,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Displacement of the walk.
    Displace {
        #[arg(long)]
        nmax: Option<u64>,
        #[command(flatten)]
        ex: ExperimentArgs,
    },
    /// Exit times from balls.
    Exit {
        #[arg(long)]
        rmax: Option<u64>,
        #[command(flatten)]
        ex: ExperimentArgs,
    },
    /// Effective resistance to the outside of balls.
    Resist {
        #[arg(long)]
        rmax: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Root-ball statistics of MST(K_n) against the root component.
    MstCompare {
        #[arg(long, default_value = "256,1024,4096")]
        n: String,
        #[arg(long, default_value = "1")]
        r: String,
        /// Roots per n, and independent root-component samples.
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
    },
    /// Reduced-scale invariant suite.
    Validate {
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_theta: f64,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Handles.
    #[arg(long)]
    handles: Option<usize>,
    /// Walks per handle.
    #[arg(long)]
    walks: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SampleDist {
    BorelTanner,
    Pgw,
    LabelledTree,
    OutletStep,
    TailPp,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum IpcMode {
    Chain,
    Invade,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Exact,
    Collision,
    Hit,
}

impl From<MethodArg> for ReturnMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => ReturnMethod::ExactPropagation,
            MethodArg::Collision => ReturnMethod::Collision,
            MethodArg::Hit => ReturnMethod::Hit,
        }
    }
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Theta { .. } => "theta",
            Cmd::Curves { .. } => "curves",
            Cmd::Sample { .. } => "sample",
            Cmd::Ipc { .. } => "ipc",
            Cmd::Pgwa { .. } => "pgwa",
            Cmd::MsfBall { .. } => "msf-ball",
            Cmd::Walk { .. } => "walk",
            Cmd::Spectral { .. } => "spectral",
            Cmd::Displace { .. } => "displace",
            Cmd::Exit { .. } => "exit",
            Cmd::Resist { .. } => "resist",
            Cmd::MstCompare { .. } => "mst-compare",
            Cmd::Validate { .. } => "validate",
        }
    }
}

/// Where the CSV goes and where its JSON summary goes.
struct Output {
    csv: Box<dyn Write>,
    summary: Option<PathBuf>,
}

fn open_output(cli: &Cli, name: &str) -> Result<Output> {
    let path = cli.out.clone().or_else(|| {
        std::env::var_os("PWIT_MSF_OUT_DIR").filter(|d| !d.is_empty()).map(|d| Path::new(&d).join(format!("{name}.csv")))
    });
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Output { csv: Box::new(BufWriter::new(f)), summary: Some(p.with_extension("summary.json")) })
        }
        None => Ok(Output { csv: Box::new(BufWriter::new(io::stdout())), summary: None }),
    }
}

fn fmt(x: f64) -> String {
    if x.is_finite() { format!("{x:e}") } else { String::new() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global().context("starting worker threads")?;
    }
    match &cli.cmd {
        Cmd::Theta { lambda } => {
            let mut out = open_output(cli, cli.cmd.name())?;
            writeln!(out.csv, "{CURVE_HEADER}")?;
            let h = if *lambda <= kernel::H_LAMBDA_MAX { kernel::second_moment_h(&[*lambda]).ok().map(|c| c.h_vals[0]) } else { None };
            writeln!(out.csv, "{}", curve_row(*lambda, h)?)?;
            out.csv.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Curves { grid } => {
            let grid = experiments::parse_grid(grid)?;
            if grid[0] <= 1.0 {
                bail!("grid must lie above 1");
            }
            let inside: Vec<f64> = grid.iter().copied().filter(|&l| l <= kernel::H_LAMBDA_MAX).collect();
            let hs = if inside.is_empty() { Vec::new() } else { kernel::second_moment_h(&inside)?.h_vals };
            let rows: Vec<String> =
                grid.par_iter().enumerate().map(|(i, &l)| curve_row(l, hs.get(i).copied())).collect::<Result<_>>()?;
            let mut out = open_output(cli, cli.cmd.name())?;
            writeln!(out.csv, "{CURVE_HEADER}")?;
            for r in rows {
                writeln!(out.csv, "{r}")?;
            }
            out.csv.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sample { dist, param, n } => sample(cli, *dist, *param, *n),
        Cmd::Ipc { mode, steps, reps } => ipc(cli, *mode, *steps, *reps),
        Cmd::Pgwa { lambda, reps, depth } => pgwa_cmd(cli, *lambda, *reps, *depth),
        Cmd::MsfBall { r, reps, dump } => {
            let mut c = base_config(cli, ExperimentKind::Volume)?;
            if let Some(r) = r {
                c.scales = experiments::parse_n_list(r)?;
            }
            if let Some(k) = reps {
                c.replicates = *k;
            }
            let code = experiment(cli, c.clone())?;
            if let Some(path) = dump {
                let mut h = msf::MsfHandle::new(mix2(c.seed, 0), c.cap_vertices)?;
                let r = *c.scales.last().unwrap() as u32;
                h.ensure_ball(r)?;
                let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
                writeln!(f, "# parent child weight activation_child")?;
                h.write_edge_list(r, &mut f)?;
                f.flush()?;
            }
            Ok(code)
        }
        Cmd::Walk { steps, reps } => {
            let seed = cli.seed;
            let cap = cli.cap_vertices.unwrap_or(invasion::DEFAULT_VERTEX_CAP);
            let traces: Vec<walk::WalkTrace> = (0..*reps as u64)
                .into_par_iter()
                .map(|w| {
                    let mut h = msf::MsfHandle::new(mix2(seed, w), cap)?;
                    let mut rng = RngStream::new(mix2(seed, w), SAMPLE_KEY);
                    walk::simulate_walk(&mut h, *steps, &mut rng)
                })
                .collect::<pwit_msf::Result<_>>()?;
            let mut out = open_output(cli, cli.cmd.name())?;
            writeln!(out.csv, "walk,step,vertex,distance")?;
            for (w, t) in traces.iter().enumerate() {
                for (k, (v, d)) in t.positions.iter().zip(&t.distances).enumerate() {
                    writeln!(out.csv, "{w},{k},{v},{d}")?;
                }
            }
            out.csv.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Spectral { nmax, ex, method } => {
            let mut c = base_config(cli, ExperimentKind::Spectral)?;
            if let Some(n) = nmax {
                c.scales = dyadic_up_to(c.scales[0], *n)?;
            }
            apply_args(&mut c, ex);
            if let Some(m) = method {
                c.method = (*m).into();
            }
            experiment(cli, c)
        }
        Cmd::Displace { nmax, ex } => {
            let mut c = base_config(cli, ExperimentKind::Displacement)?;
            if let Some(n) = nmax {
                c.scales = dyadic_up_to(c.scales[0], *n)?;
            }
            apply_args(&mut c, ex);
            experiment(cli, c)
        }
        Cmd::Exit { rmax, ex } => {
            let mut c = base_config(cli, ExperimentKind::ExitTime)?;
            if let Some(r) = rmax {
                c.scales = dyadic_up_to(c.scales[0], *r)?;
            }
            apply_args(&mut c, ex);
            experiment(cli, c)
        }
        Cmd::Resist { rmax, reps } => {
            let mut c = base_config(cli, ExperimentKind::Resistance)?;
            if let Some(r) = rmax {
                c.scales = dyadic_up_to(c.scales[0], *r)?;
            }
            if let Some(k) = reps {
                c.replicates = *k;
            }
            experiment(cli, c)
        }
        Cmd::MstCompare { n, r, reps } => {
            let ns: Vec<usize> = experiments::parse_n_list(n)?.into_iter().map(|v| v as usize).collect();
            let rs = parse_radii(r)?;
            let rows: Vec<Vec<mst::LocalLimitRow>> = rs
                .par_iter()
                .map(|&r| mst::locallimit_compare(&ns, r, *reps, *reps, cli.seed))
                .collect::<pwit_msf::Result<_>>()?;
            let mut out = open_output(cli, cli.cmd.name())?;
            writeln!(out.csv, "n,r,roots,tv,mean_root_degree")?;
            for row in rows.iter().flatten() {
                writeln!(out.csv, "{},{},{},{},{}", row.n, row.radius, row.roots, fmt(row.tv), fmt(row.mean_root_degree))?;
            }
            out.csv.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { perturb_theta } => {
            let report = experiments::validate(experiments::ValidateOptions { seed: cli.seed, theta_offset: *perturb_theta })?;
            let mut out = open_output(cli, cli.cmd.name())?;
            writeln!(out.csv, "check,passed,value,threshold")?;
            for c in &report {
                writeln!(out.csv, "{},{},{},{}", c.name, c.passed, fmt(c.value), fmt(c.threshold))?;
            }
            out.csv.flush()?;
            for c in report.iter().filter(|c| !c.passed) {
                eprintln!("FAIL {}: {} (threshold {})", c.name, c.value, c.threshold);
            }
            Ok(if report.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

const CURVE_HEADER: &str = "lambda,theta,theta_prime,s_star,f_ratio,g,h";

fn curve_row(l: f64, h: Option<f64>) -> Result<String> {
    Ok(format!(
        "{},{},{},{},{},{},{}",
        fmt(l),
        fmt(kernel::theta(l)?),
        fmt(kernel::theta_prime(l)?),
        fmt(kernel::dual(l)?),
        fmt(kernel::f_ratio(l)?),
        fmt(kernel::mean_size_g(l)?),
        h.map_or(String::new(), fmt)
    ))
}

fn parse_radii(s: &str) -> Result<Vec<u32>> {
    s.split(',').map(|t| t.trim().parse::<u32>().with_context(|| format!("bad radius {t:?}"))).collect()
}

fn dyadic_up_to(lo: u64, hi: u64) -> Result<Vec<u64>> {
    if hi < lo {
        bail!("maximum {hi} is below the first scale {lo}");
    }
    let mut v = vec![lo];
    while v.last().unwrap() * 2 <= hi {
        v.push(v.last().unwrap() * 2);
    }
    Ok(v)
}

fn apply_args(c: &mut ExperimentConfig, ex: &ExperimentArgs) {
    if let Some(h) = ex.handles {
        c.replicates = h;
    }
    if let Some(w) = ex.walks {
        c.walks = w;
    }
}

fn base_config(cli: &Cli, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let c = ExperimentConfig::from_json(&text)?;
            if c.experiment != kind {
                bail!("config is for {}, not {}", c.experiment.name(), kind.name());
            }
            c
        }
        None => {
            let mut c = ExperimentConfig::new(kind);
            c.seed = cli.seed;
            c
        }
    };
    if cli.seed != 0 {
        c.seed = cli.seed;
    }
    if let Some(cap) = cli.cap_vertices {
        c.cap_vertices = cap;
    }
    Ok(c)
}

fn experiment(cli: &Cli, c: ExperimentConfig) -> Result<ExitCode> {
    c.validate()?;
    let (series, summary) = experiments::run_experiment(&c)?;
    let mut out = open_output(cli, cli.cmd.name())?;
    experiments::write_csv(&series, &mut out.csv)?;
    out.csv.flush()?;
    let json = experiments::summary_json(&summary);
    match &out.summary {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => eprintln!("{json}"),
    }
    if let Some(f) = &series.fit {
        if f.excluded > 0 {
            eprintln!("warning: {} rows with non-positive statistic left out of the fit", f.excluded);
        }
    }
    let mut violations = 0;
    if c.experiment == ExperimentKind::Resistance {
        for r in &series.rows {
            if !r.censored && r.statistic > r.scale as f64 + 1.0 {
                violations += 1;
            }
            if let Some(o) = r.oracle {
                violations += ((o - r.statistic).abs() > 1e-9 * r.statistic.max(1.0)) as usize;
            }
        }
    }
    if violations > 0 {
        eprintln!("error: {violations} invariant violations");
        return Ok(ExitCode::from(2));
    }
    if summary.n_censored > 0 {
        eprintln!("error: {} rows hit a resource cap; outputs are partial", summary.n_censored);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn sample(cli: &Cli, d: SampleDist, p: f64, n: usize) -> Result<ExitCode> {
    let seed = cli.seed;
    let rows: Vec<String> = (0..n as u64)
        .into_par_iter()
        .map(|i| -> pwit_msf::Result<String> {
            let mut rng = RngStream::new(seed, mix2(SAMPLE_KEY, i));
            Ok(match d {
                SampleDist::BorelTanner => dist::sample_borel_tanner(p, &mut rng)?.to_string(),
                SampleDist::Pgw => dist::sample_pgw_size(p, &mut rng)?.to_string(),
                SampleDist::LabelledTree => {
                    if !(p >= 1.0 && p.fract() == 0.0 && p <= 1e7) {
                        return Err(pwit_msf::Error::Precondition(format!("tree size must be a positive integer, got {p}")));
                    }
                    let t = dist::sample_uniform_labelled_tree(p as usize, &mut rng)?;
                    t.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(" ")
                }
                SampleDist::OutletStep => fmt(dist::sample_outlet_step(p, &mut rng)?),
                SampleDist::TailPp => dist::sample_tail_poisson(p, &mut rng)?.iter().map(|&a| fmt(a)).collect::<Vec<_>>().join(" "),
            })
        })
        .collect::<pwit_msf::Result<_>>()?;
    let mut out = open_output(cli, cli.cmd.name())?;
    writeln!(out.csv, "draw,value")?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(out.csv, "{i},{r}")?;
    }
    out.csv.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn ipc(cli: &Cli, mode: IpcMode, steps: usize, reps: usize) -> Result<ExitCode> {
    let seed = cli.seed;
    let cap = cli.cap_vertices.unwrap_or(10_000_000);
    let per_rep: Vec<(Vec<String>, bool)> = (0..reps as u64)
        .into_par_iter()
        .map(|k| -> pwit_msf::Result<(Vec<String>, bool)> {
            let mut rng = RngStream::new(seed, mix2(SAMPLE_KEY, k));
            let mut rows = Vec::new();
            match mode {
                IpcMode::Chain => {
                    let mut state = invasion::PondChainState::initial(&mut rng);
                    for _ in 0..steps {
                        match invasion::next_pond_capped(state, &mut rng, cap) {
                            Ok((p, next)) => {
                                rows.push(format!(
                                    "{k},{},{},{},{},{},false",
                                    p.index,
                                    fmt(p.outlet_weight),
                                    p.size(),
                                    p.diameter(),
                                    p.exit_depth()
                                ));
                                state = next;
                            }
                            Err(pwit_msf::Error::Censored { .. }) => {
                                rows.push(format!("{k},{},{},,,,true", state.index, fmt(state.outlet_weight)));
                                return Ok((rows, true));
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
                IpcMode::Invade => {
                    let t = invasion::invade_pwit(steps, &mut rng)?;
                    for (i, (e, m)) in t.edges.iter().zip(t.running_max_series()).enumerate() {
                        rows.push(format!("{k},{},{},{},{},{}", i + 1, e.parent, e.child, fmt(e.weight), fmt(m)));
                    }
                }
            }
            Ok((rows, false))
        })
        .collect::<pwit_msf::Result<_>>()?;
    let mut out = open_output(cli, cli.cmd.name())?;
    match mode {
        IpcMode::Chain => writeln!(out.csv, "rep,pond,outlet_weight,size,diameter,exit_depth,censored")?,
        IpcMode::Invade => writeln!(out.csv, "rep,step,parent,child,weight,running_max")?,
    }
    let mut any_censored = false;
    for (rows, c) in &per_rep {
        any_censored |= c;
        for r in rows {
            writeln!(out.csv, "{r}")?;
        }
    }
    out.csv.flush()?;
    Ok(if any_censored { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn pgwa_cmd(cli: &Cli, lambda: f64, reps: usize, depth: Option<u32>) -> Result<ExitCode> {
    let seed = cli.seed;
    let cap = cli.cap_vertices.unwrap_or(10_000_000);
    let rows: Vec<pgwa::PgwaSummary> = (0..reps as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, mix2(SAMPLE_KEY, k));
            match depth {
                None => pgwa::sample_pgwa_summary(lambda, &mut rng, cap as u64),
                Some(d) => {
                    let t = pgwa::sample_pgwa_capped(lambda, &mut rng, Some(d), cap)?;
                    Ok(pgwa::PgwaSummary {
                        size: t.size() as u64,
                        height: t.height(),
                        level_counts: t.level_counts(),
                        censored: t.censored,
                    })
                }
            }
        })
        .collect::<pwit_msf::Result<_>>()?;
    let mut out = open_output(cli, cli.cmd.name())?;
    writeln!(out.csv, "rep,size,height,levels,censored")?;
    for (k, s) in rows.iter().enumerate() {
        let levels: Vec<String> = s.level_counts.iter().map(|c| c.to_string()).collect();
        writeln!(out.csv, "{k},{},{},{},{}", s.size, s.height, levels.join(" "), s.censored)?;
    }
    out.csv.flush()?;
    Ok(if rows.iter().any(|s| s.censored) { ExitCode::from(3) } else { ExitCode::SUCCESS })
}
