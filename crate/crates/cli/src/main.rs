//! `offres` — synthetic off-resonance pipeline for 3D cones trajectories:
//! trajectory generation, phantom simulation, gridding reconstruction,
//! autofocus and network correction, corpus building and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use offres_cli::config::{load_config, Config, CONFIG_SCHEMA};
use offres_cli::{cfl, checkpoint, dataset, sweep, trajfile, Result};
use offres_core::forward;
use offres_core::metrics;
use offres_core::network;
use offres_core::phantom;
use offres_core::recon;
use offres_core::trajectory;
use offres_core::volume::FieldMap;

#[derive(Parser)]
#[command(name = "offres", version, about = "Off-resonance simulation and correction pipeline")]
struct Cli {
    /// JSON config file supplying defaults for all subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap worker-thread parallelism (1 = single threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the JSON schema of the config file and exit.
    #[arg(long)]
    config_schema: bool,
    #[command(subcommand)]
    command: Option<Commands>,
}

#[derive(Subcommand)]
enum Commands {
    /// Trajectory generation, scaling, density refinement, feasibility.
    Traj {
        #[command(subcommand)]
        cmd: TrajCmd,
    },
    /// Synthetic vessel phantoms.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Synthetic off-resonance field maps.
    Fieldmap {
        #[command(subcommand)]
        cmd: FieldmapCmd,
    },
    /// Off-resonance forward simulation.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Reconstruction.
    Recon {
        #[command(subcommand)]
        cmd: ReconCmd,
    },
    /// Training corpus building and splitting.
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Blind autofocus correction.
    Autofocus {
        #[command(subcommand)]
        cmd: AutofocusCmd,
    },
    /// Network lifecycle: init, train, apply, iterate.
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Quantitative evaluation.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
    /// Re-emit a sweep CSV in tidy sorted form.
    PlotData(PlotDataArgs),
}

#[derive(Subcommand)]
enum TrajCmd {
    /// Generate a cones trajectory.
    Gen(TrajGenArgs),
    /// Stretch the readout duration.
    Scale(TrajScaleArgs),
    /// Refine density compensation with the grid/degrid iteration.
    Dcf(TrajDcfArgs),
    /// Gradient and slew-rate feasibility report.
    Check(TrajCheckArgs),
}

#[derive(Args)]
struct TrajGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_cones: Option<usize>,
    #[arg(long)]
    interleaves: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    t_read_s: Option<f64>,
    #[arg(long)]
    twist: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    fov_cm: Option<f64>,
}

#[derive(Args)]
struct TrajScaleArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    factor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrajDcfArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 3.0)]
    kernel_width: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrajCheckArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    fov_cm: Option<f64>,
    #[arg(long, default_value_t = 40.0)]
    gmax_mt_per_m: f64,
    #[arg(long, default_value_t = 150.0)]
    smax_t_per_m_per_s: f64,
}

#[derive(Subcommand)]
enum PhantomCmd {
    Gen(PhantomGenArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Single extent or x,y,z.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    n_vessels: Option<usize>,
}

#[derive(Subcommand)]
enum FieldmapCmd {
    Gen(FieldmapGenArgs),
}

#[derive(Args)]
struct FieldmapGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    f_max_hz: Option<f64>,
    #[arg(long)]
    n_blobs: Option<usize>,
    #[arg(long)]
    ramp: bool,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Direct-sum signal equation (small sizes; the oracle).
    Exact(SimArgs),
    /// Frequency-segmented fast model.
    Fast(SimArgs),
    /// Spatially-localized point spread function.
    Psf(SimPsfArgs),
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    phantom: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    fieldmap: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_bins: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct SimPsfArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    f0_hz: f64,
    /// Source voxel as x,y,z; defaults to the volume center.
    #[arg(long)]
    location: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ReconCmd {
    /// Density-compensated gridding reconstruction.
    Grid(ReconGridArgs),
}

#[derive(Args)]
struct ReconGridArgs {
    #[arg(long)]
    ks: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    oversamp: Option<f64>,
    #[arg(long)]
    kernel_width: Option<f64>,
}

#[derive(Subcommand)]
enum CorpusCmd {
    Build(CorpusBuildArgs),
    Split(CorpusSplitArgs),
}

#[derive(Args)]
struct CorpusBuildArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Load the short-readout trajectory from files instead of generating
    /// it from the config.
    #[arg(long)]
    traj: Option<PathBuf>,
    #[arg(long)]
    n_phantoms: Option<usize>,
    /// Comma-separated readout scale factors.
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    n_freqs: Option<usize>,
    #[arg(long)]
    f_span_hz: Option<f64>,
    #[arg(long)]
    use_field_maps: bool,
}

#[derive(Args)]
struct CorpusSplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Subcommand)]
enum AutofocusCmd {
    /// Blind correction of k-space data.
    Run(AutofocusRunArgs),
    /// Consistency field map between corrected and uncorrected volumes.
    Fieldmap(AutofocusFieldmapArgs),
}

#[derive(Args)]
struct AutofocusRunArgs {
    #[arg(long)]
    ks: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fieldmap_out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    f_min_hz: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    f_max_hz: Option<f64>,
    #[arg(long)]
    n_freqs: Option<usize>,
    /// Dump per-candidate (frequency, mean metric) rows.
    #[arg(long)]
    metric_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AutofocusFieldmapArgs {
    #[arg(long)]
    corrected: PathBuf,
    #[arg(long)]
    uncorrected: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum NetCmd {
    /// Initialize a checkpoint from the config.
    Init(NetInitArgs),
    /// Train on a corpus manifest.
    Train(NetTrainArgs),
    /// Apply a checkpoint to a volume with tiled inference.
    Apply(NetApplyArgs),
    /// Apply a checkpoint repeatedly and report consecutive differences.
    Iterate(NetIterateArgs),
}

#[derive(Args)]
struct NetInitArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NetTrainArgs {
    /// Corpus root directory (manifest paths are relative to it).
    #[arg(long)]
    corpus_dir: PathBuf,
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct NetApplyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args)]
struct NetIterateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Write each iterate as PREFIX-k volumes.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// NRMSE / SSIM / PSNR between two volumes.
    Metrics(EvalMetricsArgs),
    /// Frequency sweep with selectable correctors, CSV output.
    Sweep(EvalSweepArgs),
}

#[derive(Args)]
struct EvalMetricsArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
struct EvalSweepArgs {
    #[arg(long)]
    ks: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Comma-separated subset of none,autofocus,net.
    #[arg(long, default_value = "none")]
    methods: String,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    n_freqs: Option<usize>,
    #[arg(long)]
    span_hz: Option<f64>,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args)]
struct PlotDataArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.config_schema {
        print!("{CONFIG_SCHEMA}");
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // All reductions are order-deterministic, so the thread count only
        // affects speed, never values.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let Some(command) = cli.command else {
        return Err(offres_cli::CliError::Format(
            "no subcommand given (try --help)".into(),
        ));
    };
    match command {
        Commands::Traj { cmd } => run_traj(cmd, &config),
        Commands::Phantom { cmd } => run_phantom(cmd, &config),
        Commands::Fieldmap { cmd } => run_fieldmap(cmd, &config),
        Commands::Sim { cmd } => run_sim(cmd, &config),
        Commands::Recon { cmd } => run_recon(cmd, &config),
        Commands::Corpus { cmd } => run_corpus(cmd, &config),
        Commands::Autofocus { cmd } => run_autofocus(cmd, &config),
        Commands::Net { cmd } => run_net(cmd, &config),
        Commands::Eval { cmd } => run_eval(cmd, &config),
        Commands::PlotData(args) => run_plot_data(args),
    }
}

fn parse_shape(text: &Option<String>, fallback: [usize; 3]) -> Result<[usize; 3]> {
    let Some(text) = text else { return Ok(fallback) };
    let parts: Vec<usize> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| offres_cli::CliError::Format(format!("bad shape component '{t}'")))
        })
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [n] => Ok([*n; 3]),
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(offres_cli::CliError::Format("shape must be N or X,Y,Z".into())),
    }
}

fn gen_config_traj(cfg: &Config) -> Result<trajectory::ConesTrajectory> {
    let t = &cfg.trajectory;
    let mut traj = trajectory::generate_cones(
        t.n_cones,
        t.interleaves_per_cone,
        t.samples_per_interleaf,
        t.t_read_s,
        t.twist,
        t.grid_size,
    )?;
    traj.meta.fov_cm = t.fov_cm;
    Ok(traj)
}

fn run_traj(cmd: TrajCmd, cfg: &Config) -> Result<()> {
    match cmd {
        TrajCmd::Gen(a) => {
            let t = &cfg.trajectory;
            let mut traj = trajectory::generate_cones(
                a.n_cones.unwrap_or(t.n_cones),
                a.interleaves.unwrap_or(t.interleaves_per_cone),
                a.samples.unwrap_or(t.samples_per_interleaf),
                a.t_read_s.unwrap_or(t.t_read_s),
                a.twist.unwrap_or(t.twist),
                a.grid_size.unwrap_or(t.grid_size),
            )?;
            traj.meta.fov_cm = a.fov_cm.unwrap_or(t.fov_cm);
            trajfile::write_traj(&a.out, &traj)?;
            println!("wrote trajectory '{}' with {} samples", traj.meta.id, traj.len());
            Ok(())
        }
        TrajCmd::Scale(a) => {
            let traj = trajfile::read_traj(&a.traj)?;
            let scaled = trajectory::scale_readout(&traj, a.factor)?;
            trajfile::write_traj(&a.out, &scaled)?;
            println!("scaled readout to {} s", scaled.meta.t_read);
            Ok(())
        }
        TrajCmd::Dcf(a) => {
            let traj = trajfile::read_traj(&a.traj)?;
            let refined = trajectory::refine_dcf_pipemenon(&traj, a.iterations, a.kernel_width)?;
            trajfile::write_traj(&a.out, &refined)?;
            println!("refined dcf with {} iterations", a.iterations);
            Ok(())
        }
        TrajCmd::Check(a) => {
            let traj = trajfile::read_traj(&a.traj)?;
            let fov = a.fov_cm.unwrap_or(traj.meta.fov_cm);
            let report =
                trajectory::check_feasibility(&traj, fov, a.gmax_mt_per_m, a.smax_t_per_m_per_s)?;
            println!(
                "{}",
                serde_json::json!({
                    "max_gradient_mt_per_m": report.max_gradient_mt_per_m,
                    "max_slew_t_per_m_per_s": report.max_slew_t_per_m_per_s,
                    "gradient_ok": report.gradient_ok,
                    "slew_ok": report.slew_ok,
                    "feasible": report.feasible,
                })
            );
            Ok(())
        }
    }
}

fn run_phantom(cmd: PhantomCmd, cfg: &Config) -> Result<()> {
    match cmd {
        PhantomCmd::Gen(a) => {
            let shape = parse_shape(&a.shape, cfg.phantom.shape)?;
            let vol = phantom::gen_vessel_phantom(
                shape,
                a.n_vessels.unwrap_or(cfg.phantom.n_vessels),
                cfg.seed,
            )?;
            cfl::write_volume(&a.out, &vol)?;
            println!("wrote phantom {:?}", shape);
            Ok(())
        }
    }
}

fn run_fieldmap(cmd: FieldmapCmd, cfg: &Config) -> Result<()> {
    match cmd {
        FieldmapCmd::Gen(a) => {
            let shape = parse_shape(&a.shape, cfg.phantom.shape)?;
            let map = phantom::gen_field_map_with_ramp(
                shape,
                a.f_max_hz.unwrap_or(cfg.fieldmap.f_max_hz),
                a.n_blobs.unwrap_or(cfg.fieldmap.n_blobs),
                a.ramp || cfg.fieldmap.ramp,
                cfg.seed,
            )?;
            cfl::write_fieldmap(&a.out, &map)?;
            println!("wrote field map {:?}, max |f| {:.1} Hz", shape, map.max_abs());
            Ok(())
        }
    }
}

fn load_fieldmap_or_zero(path: &Option<PathBuf>, shape: [usize; 3]) -> Result<FieldMap> {
    match path {
        Some(p) => Ok(cfl::read_fieldmap(p)?),
        None => Ok(FieldMap::zeros(shape)?),
    }
}

fn run_sim(cmd: SimCmd, cfg: &Config) -> Result<()> {
    match cmd {
        SimCmd::Exact(a) => {
            let img = cfl::read_volume(&a.phantom)?;
            let traj = trajfile::read_traj(&a.traj)?;
            let fmap = load_fieldmap_or_zero(&a.fieldmap, img.shape)?;
            let mut ks = forward::forward_exact_with_limit(
                &img,
                &fmap,
                &traj,
                cfg.sim.exact_cost_limit as u128,
            )?;
            let sigma = a.noise_sigma.unwrap_or(cfg.sim.noise_sigma);
            if sigma > 0.0 {
                ks = forward::add_complex_noise(&ks, sigma, cfg.seed ^ 0x0153)?;
            }
            cfl::write_kspace(&a.out, &ks)?;
            println!("simulated {} samples (exact)", ks.values.len());
            Ok(())
        }
        SimCmd::Fast(a) => {
            let img = cfl::read_volume(&a.phantom)?;
            let traj = trajfile::read_traj(&a.traj)?;
            let fmap = load_fieldmap_or_zero(&a.fieldmap, img.shape)?;
            let mut ks = forward::forward_freq_segmented_with_params(
                &img,
                &fmap,
                &traj,
                a.n_bins.unwrap_or(cfg.sim.n_bins),
                &cfg.grid.params(),
            )?;
            let sigma = a.noise_sigma.unwrap_or(cfg.sim.noise_sigma);
            if sigma > 0.0 {
                ks = forward::add_complex_noise(&ks, sigma, cfg.seed ^ 0x0153)?;
            }
            cfl::write_kspace(&a.out, &ks)?;
            println!("simulated {} samples ({} bins)", ks.values.len(), a.n_bins.unwrap_or(cfg.sim.n_bins));
            Ok(())
        }
        SimCmd::Psf(a) => {
            let traj = trajfile::read_traj(&a.traj)?;
            let n = traj.meta.grid_size;
            let location = match &a.location {
                Some(text) => parse_shape(&Some(text.clone()), [n / 2; 3])?,
                None => [n / 2; 3],
            };
            let psf = forward::psf_local(&traj, location, a.f0_hz, [n, n, n])?;
            let radius = forward::energy_radius(&psf, location, 0.9);
            cfl::write_volume(&a.out, &psf)?;
            println!("psf at {location:?}, f0 {} Hz: 90% energy radius {radius:.2} voxels", a.f0_hz);
            Ok(())
        }
    }
}

fn run_recon(cmd: ReconCmd, cfg: &Config) -> Result<()> {
    match cmd {
        ReconCmd::Grid(a) => {
            let ks = cfl::read_kspace(&a.ks)?;
            let traj = trajfile::read_traj(&a.traj)?;
            cfl::check_kspace(&ks, &traj)?;
            let mut params = cfg.grid.params();
            if let Some(o) = a.oversamp {
                params.oversamp = o;
            }
            if let Some(w) = a.kernel_width {
                params.kernel_width = w;
            }
            let n = traj.meta.grid_size;
            let vol = recon::grid_adjoint(&ks, &traj, [n, n, n], &params)?;
            cfl::write_volume(&a.out, &vol)?;
            println!("reconstructed {n}^3 volume");
            Ok(())
        }
    }
}

fn run_corpus(cmd: CorpusCmd, cfg: &Config) -> Result<()> {
    match cmd {
        CorpusCmd::Build(a) => {
            let traj = match &a.traj {
                Some(path) => trajfile::read_traj(path)?,
                None => gen_config_traj(cfg)?,
            };
            let factors = match &a.factors {
                Some(text) => text
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|_| {
                            offres_cli::CliError::Format(format!("bad factor '{t}'"))
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?,
                None => cfg.corpus.scale_factors.clone(),
            };
            let params = dataset::CorpusParams {
                n_phantoms: a.n_phantoms.unwrap_or(cfg.corpus.n_phantoms),
                n_vessels: cfg.phantom.n_vessels,
                scale_factors: factors,
                freqs_hz: dataset::uniform_freqs(
                    a.n_freqs.unwrap_or(cfg.corpus.n_freqs),
                    a.f_span_hz.unwrap_or(cfg.corpus.f_span_hz),
                ),
                seed: cfg.seed,
                use_field_maps: a.use_field_maps || cfg.corpus.use_field_maps,
                fieldmap_f_max_hz: cfg.fieldmap.f_max_hz,
                n_bins: cfg.sim.n_bins,
                grid: cfg.grid.params(),
            };
            let manifest = dataset::build_corpus(&traj, &params, &a.out_dir)?;
            println!(
                "built corpus: {} pairs under {}",
                manifest.entries.len(),
                a.out_dir.display()
            );
            Ok(())
        }
        CorpusCmd::Split(a) => {
            let manifest = dataset::read_manifest(&a.manifest)?;
            let fraction = a.train_fraction.unwrap_or(cfg.corpus.train_fraction);
            let (train, test) = dataset::split(&manifest, fraction, cfg.seed)?;
            let dir = a.manifest.parent().unwrap_or(Path::new("."));
            dataset::write_manifest(&dir.join("train_manifest.json"), &train)?;
            dataset::write_manifest(&dir.join("test_manifest.json"), &test)?;
            println!("split: {} train pairs, {} test pairs", train.entries.len(), test.entries.len());
            Ok(())
        }
    }
}

fn run_autofocus(cmd: AutofocusCmd, cfg: &Config) -> Result<()> {
    match cmd {
        AutofocusCmd::Run(a) => {
            let ks = cfl::read_kspace(&a.ks)?;
            let traj = trajfile::read_traj(&a.traj)?;
            cfl::check_kspace(&ks, &traj)?;
            let mut af = cfg.autofocus.to_config(cfg.grid.params());
            if let Some(v) = a.f_min_hz {
                af.f_min_hz = v;
            }
            if let Some(v) = a.f_max_hz {
                af.f_max_hz = v;
            }
            if let Some(v) = a.n_freqs {
                af.n_freqs = v;
            }
            let n = traj.meta.grid_size;
            let (corrected, fmap, trace) =
                offres_core::autofocus::autofocus_correct_with_trace(&ks, &traj, [n, n, n], &af)?;
            cfl::write_volume(&a.out, &corrected)?;
            if let Some(fm_out) = &a.fieldmap_out {
                cfl::write_fieldmap(fm_out, &fmap)?;
            }
            if let Some(csv) = &a.metric_csv {
                let mut text = String::from("f_hz,mean_metric\n");
                for (f, m) in &trace {
                    text.push_str(&format!("{f},{m}\n"));
                }
                offres_cli::write_text(csv, &text)?;
            }
            println!("autofocus corrected over {} candidates", af.n_freqs);
            Ok(())
        }
        AutofocusCmd::Fieldmap(a) => {
            let corrected = cfl::read_volume(&a.corrected)?;
            let uncorrected = cfl::read_volume(&a.uncorrected)?;
            let traj = trajfile::read_traj(&a.traj)?;
            let af = cfg.autofocus.to_config(cfg.grid.params());
            let map = offres_core::autofocus::estimate_consistency_fieldmap(
                &corrected,
                &uncorrected,
                &traj,
                &af,
            )?;
            cfl::write_fieldmap(&a.out, &map)?;
            println!("wrote consistency field map");
            Ok(())
        }
    }
}

/// Per-epoch observer: writes a checkpoint and appends to the loss CSV.
struct EpochWriter {
    out_dir: PathBuf,
    history_csv: PathBuf,
}

impl network::TrainObserver<f32> for EpochWriter {
    fn on_epoch(
        &mut self,
        stats: &network::EpochStats,
        state: &network::NetState<f32>,
    ) -> offres_core::Result<()> {
        let io_err = |e: offres_cli::CliError| {
            offres_core::Error::InvalidParameter(format!("checkpoint write failed: {e}"))
        };
        checkpoint::save_checkpoint(
            &self.out_dir.join(format!("epoch-{:03}", stats.epoch)),
            state,
            Some(stats.epoch),
        )
        .map_err(io_err)?;
        let line = format!("{},{},{}\n", stats.epoch, stats.train_l1, stats.val_l1);
        let mut text = if self.history_csv.exists() {
            std::fs::read_to_string(&self.history_csv)
                .map_err(|e| io_err(offres_cli::CliError::Io(e)))?
        } else {
            String::from("epoch,train_l1,val_l1\n")
        };
        text.push_str(&line);
        std::fs::write(&self.history_csv, text).map_err(|e| io_err(offres_cli::CliError::Io(e)))?;
        Ok(())
    }
}

fn run_net(cmd: NetCmd, cfg: &Config) -> Result<()> {
    match cmd {
        NetCmd::Init(a) => {
            let nc = cfg.net.to_config(cfg.seed);
            let state = network::NetState::new(network::net_init::<f32>(&nc)?);
            checkpoint::save_checkpoint(&a.out, &state, None)?;
            println!("initialized network with {} parameters", state.params.n_params());
            Ok(())
        }
        NetCmd::Train(a) => {
            let train_manifest = dataset::read_manifest(&a.train_manifest)?;
            let train_pairs = dataset::load_pairs(&a.corpus_dir, &train_manifest)?;
            let val_pairs = match &a.val_manifest {
                Some(path) => dataset::load_pairs(&a.corpus_dir, &dataset::read_manifest(path)?)?,
                None => Vec::new(),
            };
            std::fs::create_dir_all(&a.out_dir)?;
            let nc = cfg.net.to_config(cfg.seed);
            let epochs = a.epochs.unwrap_or(cfg.net.epochs);
            let history_csv = a.out_dir.join("history.csv");
            if history_csv.exists() {
                std::fs::remove_file(&history_csv)?;
            }
            let mut observer =
                EpochWriter { out_dir: a.out_dir.clone(), history_csv: history_csv.clone() };
            let (state, history) =
                network::train::<f32>(&nc, &train_pairs, &val_pairs, epochs, &mut observer)?;
            checkpoint::save_checkpoint(&a.out_dir.join("final"), &state, history.last().map(|h| h.epoch))?;
            println!(
                "trained {} epochs on {} pairs; final train L1 {:.6}",
                epochs,
                train_pairs.len(),
                history.last().map(|h| h.train_l1).unwrap_or(f64::NAN)
            );
            Ok(())
        }
        NetCmd::Apply(a) => {
            let state = checkpoint::load_checkpoint(&a.ckpt)?;
            let input = cfl::read_volume(&a.input)?;
            let out = network::apply(
                &state.params,
                &input,
                a.tile.unwrap_or(cfg.net.tile),
                a.overlap.unwrap_or(cfg.net.overlap),
            )?;
            cfl::write_volume(&a.out, &out)?;
            println!("applied network to {:?}", input.shape);
            Ok(())
        }
        NetCmd::Iterate(a) => {
            let state = checkpoint::load_checkpoint(&a.ckpt)?;
            let input = cfl::read_volume(&a.input)?;
            let report = metrics::iterate_apply(&state.params, &input, a.n)?;
            println!("k,diff_nrms,ratio_to_first");
            for (k, (d, r)) in report.diff_nrms.iter().zip(&report.ratios).enumerate() {
                println!("{},{},{}", k + 1, d, r);
            }
            if let Some(prefix) = &a.out_prefix {
                for (k, vol) in report.volumes.iter().enumerate() {
                    let mut base = prefix.as_os_str().to_owned();
                    base.push(format!("-{k}"));
                    cfl::write_volume(Path::new(&base), vol)?;
                }
            }
            Ok(())
        }
    }
}

fn run_eval(cmd: EvalCmd, cfg: &Config) -> Result<()> {
    match cmd {
        EvalCmd::Metrics(a) => {
            let x = cfl::read_volume(&a.x)?;
            let reference = cfl::read_volume(&a.reference)?;
            println!("nrmse,ssim,psnr_db");
            println!(
                "{},{},{}",
                metrics::nrmse(&x, &reference)?,
                metrics::ssim(&x, &reference)?,
                metrics::psnr(&x, &reference)?
            );
            Ok(())
        }
        EvalCmd::Sweep(a) => {
            let ks = cfl::read_kspace(&a.ks)?;
            let traj = trajfile::read_traj(&a.traj)?;
            cfl::check_kspace(&ks, &traj)?;
            let mut correctors = Vec::new();
            for name in a.methods.split(',') {
                match name.trim() {
                    "none" => correctors.push(sweep::Corrector::None),
                    "autofocus" => correctors.push(sweep::Corrector::Autofocus(
                        cfg.autofocus.to_config(cfg.grid.params()),
                    )),
                    "net" => {
                        let ckpt = a.ckpt.as_ref().ok_or_else(|| {
                            offres_cli::CliError::Format("method 'net' needs --ckpt".into())
                        })?;
                        let state = checkpoint::load_checkpoint(ckpt)?;
                        correctors.push(sweep::Corrector::Net {
                            params: state.params,
                            tile: cfg.net.tile,
                            overlap: cfg.net.overlap,
                        });
                    }
                    other => {
                        return Err(offres_cli::CliError::Format(format!(
                            "unknown method '{other}' (expected none, autofocus, net)"
                        )))
                    }
                }
            }
            let freqs = dataset::uniform_freqs(
                a.n_freqs.unwrap_or(cfg.eval.sweep_n_freqs),
                a.span_hz.unwrap_or(cfg.eval.sweep_span_hz),
            );
            let rows = sweep::sweep_eval(
                &ks,
                &traj,
                &correctors,
                &freqs,
                &cfg.grid.params(),
                Some(&a.out_csv),
            )?;
            println!("wrote {} sweep rows to {}", rows.len(), a.out_csv.display());
            Ok(())
        }
    }
}

fn run_plot_data(a: PlotDataArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)?;
    let mut rows = sweep::parse_csv(&text)?;
    rows.sort_by(|x, y| {
        x.f_hz
            .partial_cmp(&y.f_hz)
            .unwrap()
            .then_with(|| x.method.cmp(&y.method))
    });
    offres_cli::write_text(&a.out, &sweep::format_csv(&rows))?;
    println!("re-emitted {} rows", rows.len());
    Ok(())
}
