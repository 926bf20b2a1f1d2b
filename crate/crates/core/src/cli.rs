//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the optimization hits a non-finite
//! value, 2 for I/O, parse and argument errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::depth::{self, estimate_normals, gather_global, unproject};
use crate::error::{Error, Result};
use crate::fit::{self, FitConfig};
use crate::fixtures::FixtureKind;
use crate::geom::io::{read_mesh, write_mesh, write_point_cloud, write_tagged_mesh};
use crate::geom::{normalize_frame, sample_near_surface, sample_uniform, MeshIndex, Vec3};
use crate::grad::AdamConfig;
use crate::loss::LossConfig;
use crate::mesher::{self, MeshingConfig};
use crate::metrics::{self, MetricsConfig, MetricsReport};
use crate::model::{read_model, write_model, DEFAULT_ISOLEVEL};
use crate::rng;

#[derive(Debug, Parser)]
#[command(name = "ldif", version, about = "Fit, mesh and evaluate local deep implicit functions")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a watertight mesh.
    Fit(FitArgs),
    /// Extract the model's surface with marching cubes.
    Mesh(MeshArgs),
    /// Compare a predicted mesh with a reference mesh.
    Metrics(MetricsArgs),
    /// Export one ellipsoid per shape element, tagged by element index.
    Elements(ElementsArgs),
    /// Turn a depth image into an oriented point cloud.
    Unproject(UnprojectArgs),
    /// Write a built-in test shape.
    Fixtures(FixtureArgs),
    /// Write the labeled training samples of one fitting step as CSV.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input mesh (.ply or .obj), watertight.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV [default: the model path with a .loss.csv extension]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub elements: usize,
    #[arg(long, default_value_t = 32)]
    pub latent: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Symmetric elements [default: half the elements, rounded up]
    #[arg(long)]
    pub sym_count: Option<usize>,
    /// Symmetry plane normal: 0 = x, 1 = y, 2 = z.
    #[arg(long, default_value_t = 0)]
    pub sym_axis: usize,
    /// Keep the decoder fixed (pure Gaussian mixture unless --decoder-from is given).
    #[arg(long)]
    pub freeze_decoder: bool,
    /// Start from the decoder weights of an existing model.
    #[arg(long)]
    pub decoder_from: Option<PathBuf>,
    /// Initial steps with the decoder held fixed.
    #[arg(long, default_value_t = 500)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1024)]
    pub near_samples: usize,
    #[arg(long, default_value_t = 1024)]
    pub uniform_samples: usize,
    /// Near-surface displacement, relative to the longest bounding box edge.
    #[arg(long, default_value_t = 0.01)]
    pub near_sigma: f64,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Sigmoid sharpness.
    #[arg(long, default_value_t = 100.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_point: f64,
    #[arg(long, default_value_t = 10.0)]
    pub w_center: f64,
    /// Weight of near-surface samples.
    #[arg(long, default_value_t = 0.1)]
    pub w_surface: f64,
    /// Weight of uniform samples.
    #[arg(long, default_value_t = 1.0)]
    pub w_uniform: f64,
    #[arg(long, default_value_t = DEFAULT_ISOLEVEL, allow_negative_numbers = true)]
    pub isolevel: f64,
}

impl LossArgs {
    fn config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            w_point: self.w_point,
            w_center: self.w_center,
            w_surface: self.w_surface,
            w_uniform: self.w_uniform,
            isolevel: self.isolevel,
            ..LossConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid nodes per axis.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = DEFAULT_ISOLEVEL, allow_negative_numbers = true)]
    pub isolevel: f64,
    /// Also dump the sampled field (header line, then little-endian f32).
    #[arg(long)]
    pub field: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// F-Score distance threshold, relative to the reference's longest edge.
    #[arg(long, default_value_t = metrics::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Append the report as a CSV row, writing the header for a new file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ElementsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ISOLEVEL, allow_negative_numbers = true)]
    pub isolevel: f64,
}

#[derive(Debug, Args)]
pub struct UnprojectArgs {
    /// Depth image: 16-bit PNG or raw `DPTH w h` float file.
    #[arg(long)]
    pub depth: PathBuf,
    /// Camera file: `fx fy cx cy`, then the 3x4 extrinsic matrix row-major.
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = depth::GLOBAL_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// PNG depth units per scene unit (1000 for millimeter depth in meters).
    #[arg(long, default_value_t = 1000.0)]
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureName {
    Icosphere,
    Box,
    Torus,
    Chair,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureName,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub subdivisions: u32,
    /// Sphere radius.
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Box edge length.
    #[arg(long, default_value_t = 1.0)]
    pub size: f64,
    #[arg(long, default_value_t = 1.0)]
    pub major: f64,
    #[arg(long, default_value_t = 0.25)]
    pub minor: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub near_samples: usize,
    #[arg(long, default_value_t = 1024)]
    pub uniform_samples: usize,
    #[arg(long, default_value_t = 0.01)]
    pub near_sigma: f64,
    /// Fitting step whose samples are written.
    #[arg(long, default_value_t = 0)]
    pub step: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFinite(_) => 1,
        _ => 2,
    }
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Mesh(a) => cmd_mesh(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Elements(a) => cmd_elements(a),
        Command::Unproject(a) => cmd_unproject(a),
        Command::Fixtures(a) => cmd_fixtures(a),
        Command::Sample(a) => cmd_sample(a),
    }
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::InvalidArgument(format!("{} does not exist", path.display())))
    }
}

fn default_trace_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mesh = read_mesh(require(&a.mesh)?)?;
    let decoder = match &a.decoder_from {
        Some(p) => Some(read_model(require(p)?)?.decoder),
        None => None,
    };
    let cfg = FitConfig {
        n_elements: a.elements,
        latent_dim: a.latent,
        hidden: a.hidden,
        steps: a.steps,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
        near_count: a.near_samples,
        uniform_count: a.uniform_samples,
        near_sigma: a.near_sigma,
        freeze_decoder: a.freeze_decoder,
        warmup: a.warmup,
        sym_count: a.sym_count,
        sym_axis: a.sym_axis,
        loss: a.loss.config(),
        decoder,
        ..FitConfig::default()
    };
    let result = fit::fit(&mesh, &cfg)?;
    write_model(&a.out, &result.model)?;
    let trace = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.out));
    fit::write_trace(&trace, &result.trace)?;
    if let Some(last) = result.trace.last() {
        log::info!("final loss {:.6} after {} steps", last.values.total, result.trace.len());
    }
    Ok(())
}

pub fn cmd_mesh(a: &MeshArgs) -> Result<()> {
    let model = read_model(require(&a.model)?)?;
    let cfg = MeshingConfig {
        resolution: a.resolution,
        isolevel: a.isolevel,
        ..MeshingConfig::default()
    };
    if let Some(path) = &a.field {
        mesher::field_grid(&model, &cfg)?.write_raw(path)?;
    }
    let mesh = mesher::extract_mesh(&model, &cfg)?;
    write_mesh(&a.out, &mesh)
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let pred = read_mesh(require(&a.pred)?)?;
    let gt = read_mesh(require(&a.gt)?)?;
    let cfg = MetricsConfig {
        tau: a.tau,
        samples: a.samples,
        seed: a.seed,
    };
    let report = metrics::evaluate(&pred, &gt, &cfg)?;
    println!("{report}");
    if let Some(path) = &a.csv {
        append_csv(path, &report)?;
    }
    Ok(())
}

fn append_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", MetricsReport::CSV_HEADER)?;
    }
    writeln!(f, "{}", report.to_csv())?;
    Ok(())
}

pub fn cmd_elements(a: &ElementsArgs) -> Result<()> {
    let model = read_model(require(&a.model)?)?;
    let (mesh, tags) = mesher::element_ellipsoids(&model, a.isolevel);
    write_tagged_mesh(&a.out, &mesh, Some(&tags))
}

pub fn cmd_unproject(a: &UnprojectArgs) -> Result<()> {
    let depth = depth::read_depth(require(&a.depth)?, a.scale)?;
    let cam = depth::read_camera(require(&a.camera)?, depth.width, depth.height)?;
    let xyz = unproject(&depth, &cam)?;
    let cloud = gather_global(&estimate_normals(&xyz, &cam), a.count, a.seed)?;
    write_point_cloud(&a.out, &cloud.points, &cloud.normals)
}

pub fn cmd_fixtures(a: &FixtureArgs) -> Result<()> {
    let kind = match a.kind {
        FixtureName::Icosphere => FixtureKind::Icosphere {
            subdivisions: a.subdivisions,
            radius: a.radius,
        },
        FixtureName::Box => FixtureKind::Box {
            size: Vec3::repeat(a.size),
        },
        FixtureName::Torus => FixtureKind::Torus {
            major: a.major,
            minor: a.minor,
        },
        FixtureName::Chair => FixtureKind::Chair,
    };
    write_mesh(&a.out, &kind.mesh())
}

/// Same draws as step `a.step` of a fit with the same seed, mapped back to
/// the mesh's own coordinates.
pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    use std::fmt::Write as _;
    let (normalized, frame) = normalize_frame(&read_mesh(require(&a.mesh)?)?)?;
    let index = MeshIndex::watertight(&normalized)?;
    let grid = crate::geom::sdf_grid_from_index(&index)?;
    let loss = LossConfig::default();
    let mut samples = sample_near_surface(
        &index,
        a.near_samples,
        a.near_sigma,
        loss.w_surface,
        rng::substream_seed(a.seed, "near", a.step),
    )?;
    samples.extend(sample_uniform(
        &grid.bounds,
        a.uniform_samples,
        &index,
        loss.w_uniform,
        rng::substream_seed(a.seed, "uniform", a.step),
    ));
    let mut out = String::from("x,y,z,inside,weight\n");
    for i in 0..samples.len() {
        let p = frame.apply_inverse(&samples.points[i]);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.x, p.y, p.z, samples.inside[i] as u8, samples.weights[i]
        );
    }
    std::fs::write(&a.out, out)?;
    Ok(())
}
