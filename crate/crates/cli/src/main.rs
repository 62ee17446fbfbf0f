//! `episync`: synchronize unsynchronized multi-view videos from the command
//! line. `simulate` makes a synthetic scene bundle with known offsets,
//! `pairwise` runs the Stage-1 offset-grid search, `sync` fuses the surviving
//! pairs into per-video offsets, `eval` scores a result against ground truth,
//! and `landscape` exports per-pair energy landscapes as CSV and SVG.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use episync_core::energy::EnergyKind;
use episync_core::global_sync::{solve_irls, Initialization, IrlsOptions, OffsetMeasurement, SyncError};
use episync_core::io::{self, IoError, PairRecord, ResultFile};
use episync_core::metrics::{self, EvalReport, MetricsError, PairPrediction};
use episync_core::pairwise::{search_all, search_pair, OffsetGrid, SearchOptions};
use episync_core::synth::{self, ScenarioSpec, SynthError};
use episync_core::tracklets::{
    filter_correspondences, match_instances, Scene, MIN_INSTANCE_CORRESPONDENCES,
};

#[derive(Parser)]
#[command(name = "episync", version, about = "Epipolar-error video synchronization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Pairwise energy term.
    #[arg(long, global = true, value_enum, default_value_t = EnergyArg::Sampson)]
    energy: EnergyArg,
    /// Offset grid lower bound, seconds. Requires --grid-max and --grid-step.
    #[arg(long, global = true)]
    grid_min: Option<f64>,
    /// Offset grid upper bound, seconds.
    #[arg(long, global = true)]
    grid_max: Option<f64>,
    /// Offset grid spacing, seconds.
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    /// Reliability threshold on the best/second-best local-minimum ratio.
    #[arg(long, global = true, default_value_t = 0.1)]
    theta_prominence: f64,
    /// Maximum number of landscape local minima before a pair is rejected.
    #[arg(long, global = true, default_value_t = 2)]
    max_minima: usize,
    /// Huber knee for the global solve, seconds. Default: 1.5 frame periods
    /// at 30 fps (0.05 s).
    #[arg(long, global = true)]
    huber_delta: Option<f64>,
    /// Minimum correspondence samples per landscape cell.
    #[arg(long, global = true, default_value_t = 30)]
    min_support: usize,
    /// Accuracy metric for eval.
    #[arg(long, global = true, value_enum, default_value_t = MetricArg::Auc)]
    metric: MetricArg,
    /// Simulation seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the pairwise search; default uses all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene bundle with known offsets.
    Simulate {
        /// Bundle output path; ground truth is embedded and also written to a
        /// `.truth.json` sidecar.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = PresetArg::Standard)]
        preset: PresetArg,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        points_per_instance: Option<usize>,
        #[arg(long)]
        duration_s: Option<f64>,
        /// Frame rate; repeat to give one per camera.
        #[arg(long)]
        fps: Vec<f64>,
        /// True offsets drawn uniformly from this range, seconds.
        #[arg(long)]
        offset_range_s: Option<f64>,
        #[arg(long)]
        noise_sigma_px: Option<f64>,
        #[arg(long)]
        dropout_rate: Option<f64>,
        /// Fraction of instance-mismatched correspondences to add.
        #[arg(long)]
        contamination_rate: Option<f64>,
        /// Apply a rigid per-camera pose perturbation of this magnitude.
        #[arg(long)]
        perturb_rot_deg: Option<f64>,
        /// Translation perturbation as a fraction of the mean baseline.
        #[arg(long)]
        perturb_trans_frac: Option<f64>,
    },
    /// Stage 1: per-pair offset grid search over a scene bundle.
    Pairwise {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Export each pair's landscape (CSV + SVG) into this directory.
        #[arg(long)]
        landscape_dir: Option<PathBuf>,
        /// Moving-average window (cells) applied before minima analysis.
        #[arg(long, default_value_t = 1)]
        smoothing_window: usize,
        /// Flip the prominence comparison to discard-if-ratio-below.
        #[arg(long)]
        invert_prominence: bool,
        /// Drop correspondences outside the optimal instance assignment.
        #[arg(long)]
        filter_instances: bool,
    },
    /// Stage 2: fuse Stage-1 pairwise offsets into per-video offsets.
    Sync {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Convergence threshold on the max offset change, seconds.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, value_enum, default_value_t = InitArg::Zero)]
        init: InitArg,
    },
    /// Score a result file against the ground truth of a bundle.
    Eval {
        input: PathBuf,
        /// Bundle whose embedded ground truth to score against.
        #[arg(long)]
        truth: PathBuf,
        /// Optional JSON report output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export energy landscapes without the full Stage-1 bookkeeping.
    Landscape {
        input: PathBuf,
        /// Restrict to one pair, e.g. `--pair cam00,cam01`.
        #[arg(long)]
        pair: Option<String>,
        /// Output directory.
        #[arg(short, long, default_value = "landscapes")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EnergyArg {
    Sampson,
    Epipolar,
    Cosine,
    Algebraic,
}

impl EnergyArg {
    fn kind(self) -> EnergyKind {
        match self {
            EnergyArg::Sampson => EnergyKind::Sampson,
            EnergyArg::Epipolar => EnergyKind::SymmetricEpipolar,
            EnergyArg::Cosine => EnergyKind::Cosine,
            EnergyArg::Algebraic => EnergyKind::Algebraic,
        }
    }

    fn name(self) -> &'static str {
        match self {
            EnergyArg::Sampson => "sampson",
            EnergyArg::Epipolar => "epipolar",
            EnergyArg::Cosine => "cosine",
            EnergyArg::Algebraic => "algebraic",
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MetricArg {
    /// Normalized AUC of the cumulative accuracy curve.
    Auc,
    /// Plain percent of errors under the threshold.
    Pct,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PresetArg {
    Standard,
    Aliased,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum InitArg {
    Zero,
    SpanningTree,
}

/// Errors carrying their process exit code: 1 usage, 2 data, 3 numerical.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SyncError> for CliError {
    fn from(e: SyncError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Simulate { .. } => simulate(&cli),
        Cmd::Pairwise { .. } => pairwise(&cli),
        Cmd::Sync { .. } => sync(&cli),
        Cmd::Eval { .. } => eval(&cli),
        Cmd::Landscape { .. } => landscape(&cli),
    }
}

fn simulate(cli: &Cli) -> Result<(), CliError> {
    let Cmd::Simulate {
        output,
        preset,
        cameras,
        points,
        points_per_instance,
        duration_s,
        fps,
        offset_range_s,
        noise_sigma_px,
        dropout_rate,
        contamination_rate,
        perturb_rot_deg,
        perturb_trans_frac,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let mut spec = match preset {
        PresetArg::Standard => ScenarioSpec::standard(cli.seed),
        PresetArg::Aliased => ScenarioSpec::aliased(cli.seed),
    };
    if let Some(n) = cameras {
        spec.n_cameras = *n;
    }
    if let Some(n) = points {
        spec.n_points = *n;
    }
    if let Some(n) = points_per_instance {
        spec.points_per_instance = *n;
    }
    if let Some(d) = duration_s {
        spec.duration_s = *d;
    }
    if !fps.is_empty() {
        spec.fps = fps.clone();
    }
    if let Some(r) = offset_range_s {
        spec.offset_range_s = *r;
    }
    if let Some(s) = noise_sigma_px {
        spec.noise_sigma_px = *s;
    }
    if let Some(d) = dropout_rate {
        spec.dropout_rate = *d;
    }
    if let Some(c) = contamination_rate {
        spec.contamination_rate = *c;
    }

    let mut bundle = synth::generate(&spec)?;
    if perturb_rot_deg.is_some() || perturb_trans_frac.is_some() {
        bundle = synth::perturb_poses(
            &bundle,
            perturb_rot_deg.unwrap_or(0.0),
            perturb_trans_frac.unwrap_or(0.0),
        );
    }
    io::save_bundle(output, &bundle)?;
    io::save_truth_sidecar(&truth_sidecar_path(output), &bundle.truth)?;
    println!(
        "wrote {} ({} cameras, {} tracklets, {} pair groups)",
        output.display(),
        bundle.scene.cameras.len(),
        bundle.scene.tracklets.len(),
        bundle.scene.correspondences.groups.len()
    );
    Ok(())
}

fn truth_sidecar_path(bundle: &Path) -> PathBuf {
    bundle.with_extension("truth.json")
}

fn grid_override(cli: &Cli) -> Result<Option<OffsetGrid>, CliError> {
    match (cli.grid_min, cli.grid_max, cli.grid_step) {
        (None, None, None) => Ok(None),
        (Some(min), Some(max), Some(step)) => {
            if step <= 0.0 || min > max {
                return Err(CliError::Usage(
                    "grid requires --grid-step > 0 and --grid-min <= --grid-max".into(),
                ));
            }
            Ok(Some(OffsetGrid::new(min, max, step)))
        }
        _ => Err(CliError::Usage(
            "--grid-min, --grid-max, and --grid-step must be given together".into(),
        )),
    }
}

fn search_options(cli: &Cli, smoothing_window: usize, invert_prominence: bool) -> SearchOptions {
    SearchOptions {
        kind: cli.energy.kind(),
        min_support: cli.min_support,
        theta_prominence: cli.theta_prominence,
        max_minima: cli.max_minima,
        smoothing_window,
        invert_prominence,
    }
}

/// Run `f` on a thread pool bounded by `--jobs`, or inline on the global pool.
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Keep only correspondences consistent with the optimal instance assignment
/// of each video pair.
fn filter_scene_instances(scene: &mut Scene) {
    let mut assignments = BTreeMap::new();
    for (key, group) in &scene.correspondences.groups {
        let mut ids_i = BTreeSet::new();
        let mut ids_j = BTreeSet::new();
        for p in group {
            ids_i.insert(scene.tracklets[&p.tracklet_i].instance_id);
            ids_j.insert(scene.tracklets[&p.tracklet_j].instance_id);
        }
        let ids_i: Vec<u32> = ids_i.into_iter().collect();
        let ids_j: Vec<u32> = ids_j.into_iter().collect();
        let row: BTreeMap<u32, usize> = ids_i.iter().copied().zip(0..).collect();
        let col: BTreeMap<u32, usize> = ids_j.iter().copied().zip(0..).collect();
        let mut counts = vec![vec![0u64; ids_j.len()]; ids_i.len()];
        for p in group {
            let r = row[&scene.tracklets[&p.tracklet_i].instance_id];
            let c = col[&scene.tracklets[&p.tracklet_j].instance_id];
            counts[r][c] += 1;
        }
        let matched = match_instances(&counts, MIN_INSTANCE_CORRESPONDENCES);
        let by_id: BTreeMap<usize, usize> = matched
            .into_iter()
            .map(|(r, c)| (ids_i[r] as usize, ids_j[c] as usize))
            .collect();
        assignments.insert(key.clone(), by_id);
    }
    scene.correspondences =
        filter_correspondences(&scene.correspondences, &scene.tracklets, &assignments);
}

fn pairwise(cli: &Cli) -> Result<(), CliError> {
    let Cmd::Pairwise {
        input,
        output,
        landscape_dir,
        smoothing_window,
        invert_prominence,
        filter_instances,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let (mut scene, _) = io::load_scene(input)?;
    if *filter_instances {
        filter_scene_instances(&mut scene);
    }
    let grid = grid_override(cli)?;
    let opts = search_options(cli, *smoothing_window, *invert_prominence);
    let results = with_jobs(cli.jobs, || search_all(&scene, grid, &opts))?;

    let mut pairs: Vec<PairRecord> = Vec::with_capacity(results.len());
    for r in &results {
        let landscape_path = match landscape_dir {
            Some(dir) => {
                let stem = format!("{}_{}", r.video_i, r.video_j);
                let title = format!("{} vs {} ({})", r.video_i, r.video_j, cli.energy.name());
                let (csv, _svg) = io::export_landscape(dir, &stem, &r.landscape, &title)?;
                Some(csv)
            }
            None => None,
        };
        pairs.push(io::pair_record(r, landscape_path));
    }
    let reliable = pairs.iter().filter(|p| p.reliable).count();
    let result = ResultFile::new(cli.energy.name().to_string(), pairs);
    io::save_result(output, &result)?;
    println!(
        "wrote {} ({} pairs, {} reliable)",
        output.display(),
        result.pairs.len(),
        reliable
    );
    Ok(())
}

fn sync(cli: &Cli) -> Result<(), CliError> {
    let Cmd::Sync {
        input,
        output,
        tol,
        max_iter,
        init,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let mut result = io::load_result(input)?;
    let mut videos = BTreeSet::new();
    let mut measurements = Vec::new();
    for p in &result.pairs {
        videos.insert(p.video_i.clone());
        videos.insert(p.video_j.clone());
        if p.reliable {
            if let Some(delta) = p.best_offset_s {
                measurements.push(OffsetMeasurement::new(
                    p.video_i.clone(),
                    p.video_j.clone(),
                    delta,
                ));
            }
        }
    }
    let videos: Vec<String> = videos.into_iter().collect();
    let opts = IrlsOptions {
        huber_delta: cli.huber_delta.unwrap_or(IrlsOptions::default().huber_delta),
        tol: *tol,
        max_iter: *max_iter,
        init: match init {
            InitArg::Zero => Initialization::Zero,
            InitArg::SpanningTree => Initialization::SpanningTree,
        },
    };
    if opts.huber_delta <= 0.0 {
        return Err(CliError::Usage("--huber-delta must be positive".into()));
    }
    let sol = solve_irls(&videos, &measurements, &opts)?;
    result.attach_solution(&sol);
    io::save_result(output, &result)?;
    println!(
        "wrote {} ({} videos, {} measurements, {} iterations)",
        output.display(),
        videos.len(),
        measurements.len(),
        sol.iterations
    );
    Ok(())
}

fn eval(cli: &Cli) -> Result<(), CliError> {
    let Cmd::Eval {
        input,
        truth,
        output,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let result = io::load_result(input)?;
    let (_, truth) = io::load_scene(truth)?;
    let truth = truth.ok_or_else(|| {
        CliError::Data("truth bundle carries no embedded ground truth".into())
    })?;

    let predictions: Vec<PairPrediction> = result
        .pairs
        .iter()
        .map(|p| PairPrediction {
            video_i: p.video_i.clone(),
            video_j: p.video_j.clone(),
            offset_s: if p.reliable { p.best_offset_s } else { None },
        })
        .collect();
    let pair_errors = metrics::pairwise_errors(&predictions, &truth.offsets)?;
    let errs: Vec<f64> = pair_errors.iter().map(|e| e.error_ms).collect();
    let score = |tau: f64| match cli.metric {
        MetricArg::Auc => metrics::auc_at(&errs, tau),
        MetricArg::Pct => metrics::pct_at(&errs, tau),
    };
    let a_at_100 = score(100.0)?;
    let a_at_500 = score(500.0)?;

    let videos = result.videos.as_ref().ok_or_else(|| {
        CliError::Data("result file has no per-video offsets; run `sync` first".into())
    })?;
    let solver = result.solver.as_ref().ok_or_else(|| {
        CliError::Data("result file has no solver record; run `sync` first".into())
    })?;

    // score each connected component against its own gauge reference
    let mut by_component: BTreeMap<usize, BTreeMap<String, f64>> = BTreeMap::new();
    for v in videos {
        by_component
            .entry(v.component)
            .or_default()
            .insert(v.id.clone(), v.offset_s);
    }
    let mut video_errors_ms = BTreeMap::new();
    let mut non_ref = Vec::new();
    for (c, predicted) in &by_component {
        if predicted.len() < 2 {
            continue; // singleton components have no recoverable offset
        }
        let reference = solver.references.get(*c).ok_or_else(|| {
            CliError::Data(format!("solver record lacks a reference for component {c}"))
        })?;
        let (errors, _, _) = metrics::video_errors(predicted, &truth.offsets, reference)?;
        for (v, e) in errors {
            if v != *reference {
                non_ref.push(e);
            }
            video_errors_ms.insert(v, e);
        }
    }
    if non_ref.is_empty() {
        return Err(CliError::Data(
            "no multi-video component to evaluate".into(),
        ));
    }
    let delta_mean_ms = non_ref.iter().sum::<f64>() / non_ref.len() as f64;
    let delta_med_ms = metrics::median(&non_ref);

    let report = EvalReport {
        pair_errors,
        a_at_100,
        a_at_500,
        video_errors_ms,
        delta_mean_ms,
        delta_med_ms,
    };
    print_report(&report, cli.metric);
    if let Some(path) = output {
        io::write_json(path, &report)?;
    }
    Ok(())
}

fn print_report(report: &EvalReport, metric: MetricArg) {
    println!("{:<24} {:>12}", "pair", "error_ms");
    for e in &report.pair_errors {
        let shown = if e.rejected {
            "rejected".to_string()
        } else {
            format!("{:.3}", e.error_ms)
        };
        println!("{:<24} {:>12}", format!("{}/{}", e.video_i, e.video_j), shown);
    }
    let name = match metric {
        MetricArg::Auc => "A",
        MetricArg::Pct => "pct",
    };
    println!("{name}@100: {:.3}   {name}@500: {:.3}", report.a_at_100, report.a_at_500);
    println!("{:<24} {:>12}", "video", "error_ms");
    for (v, e) in &report.video_errors_ms {
        println!("{v:<24} {e:>12.3}");
    }
    println!(
        "delta_mean_ms: {:.3}   delta_med_ms: {:.3}",
        report.delta_mean_ms, report.delta_med_ms
    );
}

fn landscape(cli: &Cli) -> Result<(), CliError> {
    let Cmd::Landscape {
        input,
        pair,
        output,
    } = &cli.cmd
    else {
        unreachable!()
    };
    let (scene, _) = io::load_scene(input)?;
    let keys: Vec<(String, String)> = match pair {
        Some(spec) => {
            let Some((a, b)) = spec.split_once(',') else {
                return Err(CliError::Usage(
                    "--pair expects two comma-separated video ids".into(),
                ));
            };
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let key = (a.to_string(), b.to_string());
            if !scene.correspondences.groups.contains_key(&key) {
                return Err(CliError::Data(format!(
                    "no correspondences between {a:?} and {b:?}"
                )));
            }
            vec![key]
        }
        None => scene.correspondences.groups.keys().cloned().collect(),
    };
    let grid = grid_override(cli)?;
    let opts = search_options(cli, 1, false);
    for (vi, vj) in keys {
        let g = grid.unwrap_or_else(|| {
            OffsetGrid::default_for(&scene.cameras[&vi], &scene.cameras[&vj])
        });
        let r = with_jobs(cli.jobs, || search_pair(&scene, &vi, &vj, &g, &opts))?
            .map_err(|e| CliError::Data(e.to_string()))?;
        let stem = format!("{vi}_{vj}");
        let title = format!("{vi} vs {vj} ({})", cli.energy.name());
        let (csv, svg) = io::export_landscape(output, &stem, &r.landscape, &title)?;
        println!("wrote {csv} and {svg}");
    }
    Ok(())
}
