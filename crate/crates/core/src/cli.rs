//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix4;

use crate::config::{load_config, load_initial_pose, load_measurements};
use crate::correspondence::ObjectModel;
use crate::error::{Error, Result};
use crate::filter::register_from_state;
use crate::geom::Pose;
use crate::harness::{bench_action_selection, run_batch, run_comparison, ExperimentConfig, Strategy};
use crate::report::{bench_table, write_manifest, write_outputs, RunManifest};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tiqf", version, about = "Object pose from sparse touches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a set of surface measurements against a mesh.
    Register(RegisterArgs),
    /// Run simulated trials with one selection strategy.
    Simulate(RunArgs),
    /// Run random and active selection on the same trials.
    Compare(RunArgs),
    /// Time candidate generation and lookahead for 10, 100 and 1000 actions.
    BenchActions(BenchArgs),
    /// Print mesh statistics.
    MeshInfo(MeshArgs),
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// ASCII OBJ or PLY; the built-in egg when absent.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// CSV of x,y,z rows in meters.
    #[arg(long)]
    pub measurements: PathBuf,
    /// TOML with `rotation`, `translation` and optional `covariance`;
    /// identity with covariance I4 when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    /// Maximum touches per trial.
    #[arg(long)]
    pub touches: Option<usize>,
    /// Candidate actions per selection.
    #[arg(long)]
    pub actions: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// 6 = all bounding-box faces, 5 = no probing from below.
    #[arg(long)]
    pub faces: Option<usize>,
}

impl Overrides {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.mesh {
            c.mesh = Some(m.clone());
        }
        if let Some(v) = self.seed {
            c.master_seed = v;
        }
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.touches {
            c.n_touches_max = v;
        }
        if let Some(v) = self.actions {
            c.n_actions = v;
        }
        if let Some(v) = self.noise_sigma {
            c.noise_sigma = v;
        }
        if let Some(v) = self.trials {
            c.n_trials = v;
        }
        if let Some(v) = self.faces {
            c.faces = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Action counts to time.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000])]
    pub counts: Vec<usize>,
    /// Contacts already made when selecting.
    #[arg(long, default_value_t = 10)]
    pub contacts: usize,
    /// Timed runs per count; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` and runs the command; output goes to stdout, errors to
/// stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command, raw_args: Vec<String>) -> Result<()> {
    match command {
        Command::Register(a) => cmd_register(&a),
        Command::Simulate(a) => cmd_simulate(&a, raw_args),
        Command::Compare(a) => cmd_compare(&a, raw_args),
        Command::BenchActions(a) => cmd_bench_actions(&a),
        Command::MeshInfo(a) => cmd_mesh_info(&a),
    }
}

fn model_for(mesh: &Option<PathBuf>) -> Result<ObjectModel> {
    ExperimentConfig {
        mesh: mesh.clone(),
        ..Default::default()
    }
    .load_model()
}

pub fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let model = model_for(&a.mesh.clone().or(config.mesh.clone()))?;
    let measurements = load_measurements(&a.measurements)?;
    let (state, translation) = match &a.init {
        Some(p) => {
            let ip = load_initial_pose(p)?;
            (ip.state()?, ip.pose()?.translation)
        }
        None => {
            let p = Pose::IDENTITY;
            (
                crate::filter::FilterState::new(p.rotation, Matrix4::identity() * config.init_cov),
                p.translation,
            )
        }
    };
    let reg = register_from_state(
        &model,
        &measurements,
        &state,
        translation,
        &config.filter,
        config.filter.max_inner_iters,
    )?;
    let q = reg.pose.rotation;
    let t = reg.pose.translation;
    let residual = {
        let local: Vec<_> = measurements.iter().map(|z| reg.pose.inverse_transform_point(z)).collect();
        let sq: f64 = local
            .iter()
            .map(|p| {
                let (_, _, d2) = model.surface().closest_with_face(p);
                d2
            })
            .sum();
        (sq / local.len() as f64).sqrt()
    };
    println!("quaternion (w x y z): {:.9} {:.9} {:.9} {:.9}", q.w, q.x, q.y, q.z);
    println!("translation (m):      {:.9} {:.9} {:.9}", t.x, t.y, t.z);
    println!("covariance trace:     {:.6e}", reg.state.cov.trace());
    println!("iterations:           {}", reg.iterations);
    println!("converged:            {}", reg.converged);
    println!("delta (rot, trans):   {:.3e} {:.3e}", reg.delta.0, reg.delta.1);
    println!("surface residual (m): {:.3e}", residual);
    println!("measurements:         {}", measurements.len());
    Ok(())
}

fn start_run(command: &str, a: &RunArgs, raw_args: Vec<String>) -> Result<(ExperimentConfig, ObjectModel)> {
    let config = a.overrides.resolve()?;
    let model = config.load_model()?;
    write_manifest(&a.out_dir, &RunManifest::new(command, raw_args, &config))?;
    Ok((config, model))
}

pub fn cmd_simulate(a: &RunArgs, raw_args: Vec<String>) -> Result<()> {
    let (config, model) = start_run("simulate", a, raw_args)?;
    let batch = run_batch(&config, &model, config.strategy)?;
    print!("{}", write_outputs(&a.out_dir, &[&batch], &config)?);
    Ok(())
}

pub fn cmd_compare(a: &RunArgs, raw_args: Vec<String>) -> Result<()> {
    let (config, model) = start_run("compare", a, raw_args)?;
    let [random, active] = run_comparison(&config, &model)?;
    print!("{}", write_outputs(&a.out_dir, &[&random, &active], &config)?);
    Ok(())
}

pub fn cmd_bench_actions(a: &BenchArgs) -> Result<()> {
    let config = a.overrides.resolve()?;
    let model = config.load_model()?;
    println!(
        "mesh: {} faces; {} contacts; fastest of {} runs",
        model.mesh().faces().len(),
        a.contacts,
        a.repeats
    );
    let rows = bench_action_selection(&model, &a.counts, a.contacts, a.repeats, &config)?;
    print!("{}", bench_table(&rows));
    Ok(())
}

pub fn cmd_mesh_info(a: &MeshArgs) -> Result<()> {
    let (mesh, warnings) = match &a.mesh {
        Some(p) => {
            let loaded = crate::mesh::load_mesh(p)?;
            (loaded.mesh, loaded.warnings)
        }
        None => (crate::harness::default_mesh(), Vec::new()),
    };
    let b = mesh.bounding_box()?;
    let e = b.extent();
    println!("vertices:     {}", mesh.vertices().len());
    println!("faces:        {}", mesh.faces().len());
    println!("dropped:      {}", warnings.len());
    println!("bbox min:     {:.6} {:.6} {:.6}", b.min.x, b.min.y, b.min.z);
    println!("bbox max:     {:.6} {:.6} {:.6}", b.max.x, b.max.y, b.max.z);
    println!("extent:       {:.6} {:.6} {:.6}", e.x, e.y, e.z);
    println!("diagonal:     {:.6}", b.diagonal());
    println!("surface area: {:.6}", mesh.surface_area());
    Ok(())
}
