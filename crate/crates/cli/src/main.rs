//! `prostate-fusion`: command-line front end to the TRUS/MRI fusion
//! pipeline.
//!
//! Exit codes: 0 success, 1 parse or I/O failure (including bad flags),
//! 2 numeric failure, 3 violated precondition. Diagnostics go to stderr.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusion_core::error::{Error, ErrorClass, Result};
use fusion_core::geometry::{ContourStack, Modality};
use fusion_core::io::{self, RunConfig};
use fusion_core::phantom::{generate_phantom, PhantomSpec};
use fusion_core::pipeline::{self, RegistrationMode, Scene};
use fusion_core::resample::CrossPosition;
use fusion_core::volumetry::d90;

#[derive(Debug, Parser)]
#[command(name = "prostate-fusion", version, about = "TRUS/MRI contour registration, fusion and volumetry")]
struct Cli {
    /// Worker threads for the data-parallel loops (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scene with known ground truth.
    Phantom(PhantomArgs),
    /// Register a TRUS contour stack onto MRI contour stacks.
    Register(RegisterArgs),
    /// Render quadrant composites and MRI contour overlays.
    Fuse(FuseArgs),
    /// Residual and urethra-landmark validation metrics.
    Metrics(MetricsArgs),
    /// Compare the volumes of two TRUS stacks.
    Volume(VolumeArgs),
    /// Dose-volume histogram and D90 for a seed implant.
    Dvh(DvhArgs),
    /// Run the HTTP review service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// key = value phantom spec; defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    /// TRUS contour stack.
    #[arg(long)]
    moving: PathBuf,
    /// MRI contour stacks, merged into one cloud.
    #[arg(long, required = true, num_args = 1..)]
    fixed: Vec<PathBuf>,
    #[arg(long, default_value = "elastic")]
    mode: RegistrationMode,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transform file to write.
    #[arg(long)]
    out: PathBuf,
    /// Report file; a `.csv` stats table is written next to it.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// MRI volume header.
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    trus: PathBuf,
    #[arg(long)]
    transform: PathBuf,
    /// TRUS volume header; without it the TRUS layer is drawn from the contour.
    #[arg(long)]
    trus_volume: Option<PathBuf>,
    /// MRI contour stacks to overlay.
    #[arg(long, num_args = 1..=3)]
    mri: Vec<PathBuf>,
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    slice: Option<i32>,
    #[arg(long)]
    all: bool,
    /// Cross position in pixels, `cx,cy`; image centre by default.
    #[arg(long, value_parser = parse_cross)]
    cross: Option<(usize, usize)>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    transform: PathBuf,
    #[arg(long)]
    trus: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    fixed: Vec<PathBuf>,
    #[arg(long, requires = "mri_landmarks")]
    trus_landmarks: Option<PathBuf>,
    #[arg(long, requires = "trus_landmarks")]
    mri_landmarks: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; per-slice urethra distances go to a `.csv` next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VolumeArgs {
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; per-slice surface differences go to a `.csv` next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DvhArgs {
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Dose grid `start:stop:step` in Gy.
    #[arg(long, default_value = pipeline::DEFAULT_BINS)]
    bins: String,
    /// Sampling pitch in mm.
    #[arg(long, default_value_t = pipeline::DEFAULT_PITCH)]
    pitch: f64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory that session file paths are relative to.
    #[arg(long, default_value = ".")]
    data: PathBuf,
}

fn parse_cross(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected cx,cy")?;
    Ok((
        a.trim().parse().map_err(|e| format!("cx: {e}"))?,
        b.trim().parse().map_err(|e| format!("cy: {e}"))?,
    ))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::parse(&read_text(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn read_stacks(paths: &[PathBuf]) -> Result<Vec<ContourStack>> {
    paths.iter().map(|p| io::read_contour_stack(p)).collect()
}

fn read_volume(header: &Path) -> Result<fusion_core::VolumeGrid> {
    io::read_volume(header, &io::raw_path_for(header))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => io::parse_phantom_spec(&read_text(p)?)?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.rng_seed = s;
    }
    let scene = generate_phantom(&spec)?;
    pipeline::export_phantom(&scene, &a.out)?;
    println!(
        "phantom: {} TRUS points, {} MRI points -> {}",
        scene.trus_cloud.len(),
        scene.mri_cloud.len(),
        a.out.display()
    );
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let trus = io::read_contour_stack(&a.moving)?;
    let target = pipeline::mri_cloud(&read_stacks(&a.fixed)?)?;
    let result = pipeline::register(&trus, &target, &cfg, a.mode)?;
    io::write_transform(&a.out, &result.transform(a.mode))?;
    let report = result.report(a.mode, trus.total_points(), target.len());
    if let Some(p) = &a.report {
        report.write(p)?;
        write_text(&p.with_extension("csv"), &result.table())?;
    }
    print!("{}", result.table());
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let trus_stack = io::read_contour_stack(&a.trus)?;
    let mut mri = read_stacks(&a.mri)?;
    for m in [Modality::MriTransverse, Modality::MriSagittal, Modality::MriCoronal] {
        if mri.len() < 3 && !mri.iter().any(|s| s.modality == m) {
            mri.push(ContourStack::new(m, 1.0, Vec::new())?);
        }
    }
    let mri_stacks: [ContourStack; 3] = mri
        .try_into()
        .map_err(|_| Error::InvalidInput("expected at most three MRI stacks".into()))?;
    let scene = Scene {
        trus_stack,
        mri_stacks,
        mri_volume: read_volume(&a.volume)?,
        trus_volume: a.trus_volume.as_deref().map(read_volume).transpose()?,
        trus_landmarks: None,
        mri_landmarks: None,
        seeds: None,
    };
    let f = io::read_transform(&a.transform)?;
    let slices: Vec<i32> = match a.slice {
        Some(k) => vec![k],
        None => scene.trus_stack.contours().iter().map(|c| c.slice_index).collect(),
    };
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let cross = a.cross.map(|(cx, cy)| CrossPosition { cx, cy });
    for k in slices {
        let r = pipeline::render_slice(&scene, &f, k, cross, cfg.projection_tolerance)?;
        io::write_pgm(&a.out.join(format!("slice_{k}.pgm")), &r.composite)?;
        if !a.mri.is_empty() {
            io::write_overlay(&a.out.join(format!("slice_{k}.overlay")), &r.overlay)?;
        }
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let trus = io::read_contour_stack(&a.trus)?;
    let target = pipeline::mri_cloud(&read_stacks(&a.fixed)?)?;
    let f = io::read_transform(&a.transform)?;
    let landmarks = match (&a.trus_landmarks, &a.mri_landmarks) {
        (Some(t), Some(m)) => Some((io::read_landmarks(t)?, io::read_centers(m)?)),
        _ => None,
    };
    let (report, urethra) = pipeline::metrics_report(
        &trus,
        &target,
        &f,
        &cfg,
        landmarks.as_ref().map(|(s, c)| (s, c.as_slice())),
    )?;
    report.write(&a.out)?;
    if let Some(u) = urethra {
        write_text(&a.out.with_extension("csv"), &io::per_slice_csv(&u))?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn volume(a: VolumeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let before = io::read_contour_stack(&a.before)?;
    let after = io::read_contour_stack(&a.after)?;
    let (report, diff) = pipeline::volume_report(&before, &after, cfg.volume_formula)?;
    report.write(&a.out)?;
    write_text(&a.out.with_extension("csv"), &io::surface_csv(&diff))?;
    print!("{}", report.to_text());
    Ok(())
}

fn dvh(a: DvhArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let seeds = io::read_seeds(&a.seeds)?;
    let target = io::read_contour_stack(&a.target)?;
    let bins = pipeline::parse_bins(&a.bins)?;
    let curve = pipeline::dvh(&seeds, &target, &cfg, &bins, a.pitch, cfg.registration.exec)?;
    write_text(&a.out, &io::dvh_csv(&curve))?;
    println!("D90: {} Gy", d90(&curve));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| Error::Io {
            path: PathBuf::from("<runtime>"),
            source,
        })?;
    eprintln!("serving on http://{addr}");
    rt.block_on(fusion_service::serve(addr, a.data.clone()))
        .map_err(|source| Error::Io { path: a.data, source })
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Parse => 1,
        ErrorClass::Numeric => 2,
        ErrorClass::Precondition => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: InvalidConfig: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Register(a) => register(a),
        Command::Fuse(a) => fuse(a),
        Command::Metrics(a) => metrics(a),
        Command::Volume(a) => volume(a),
        Command::Dvh(a) => dvh(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
