use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sgir::envmap::fit_envmap_to_sg;
use sgir::fields::ParameterField;
use sgir::image::{decode_image, encode_image, ImageBuffer, ImageFormat};
use sgir::inverse::{fit, fit_report, relight, FitConfig, FitError, FitProblem, LossWeights, Unknowns, ViewTarget};
use sgir::manifest::Manifest;
use sgir::mesh::marching_cubes;
use sgir::metrics::{psnr, ssim, MASK_THRESHOLD};
use sgir::render::{compare_with_mc, render, AovFrame, McComparison, RenderConfig, Scene, BOUNDS_PADDING};
use sgir::scene_file::{load_scene, Checkpoint, LobeFile};
use sgir::sg::{mixture_energy, SphericalGaussian};
use sgir::{MaterialSample, Vec3};

const THREADS_VAR: &str = "SGIR_THREADS";

/// Renders, fits and relights SDF scenes lit by spherical Gaussians.
///
/// Set SGIR_THREADS to limit the worker thread count. Concurrent runs must
/// not share output directories.
#[derive(Parser, Debug)]
#[command(name = "sgir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render every AOV of a scene to PFM files with a PPM preview.
    Render(RenderArgs),
    /// Fit light and/or materials to rendered target views.
    Fit(FitArgs),
    /// Re-render a fitted checkpoint under a new light.
    Relight(RelightArgs),
    /// Compare two images.
    Metrics(MetricsArgs),
    /// Compare closed-form shading against a Monte-Carlo reference.
    McCheck(McCheckArgs),
    /// Extract the zero level set as an OBJ mesh.
    ExportMesh(ExportMeshArgs),
    /// Fit spherical Gaussian lobes to a lat-long environment map.
    FitEnvmap(FitEnvmapArgs),
}

#[derive(Args, Debug)]
struct RenderArgs {
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `all` or a view index.
    #[arg(long, default_value = "all")]
    views: Views,
    /// Overrides the scene's render seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    scene: PathBuf,
    /// Directory written by `render`.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "light,materials")]
    unknowns: Vec<Unknown>,
    #[arg(long, default_value_t = FitConfig::default().iterations)]
    iters: usize,
    #[arg(long, default_value_t = FitConfig::default().lr, value_parser = positive_f64)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Lobe count of the re-initialized light (defaults to the scene's).
    #[arg(long)]
    init_lobes: Option<usize>,
    /// Start from the scene's light and materials instead of re-initializing.
    #[arg(long)]
    keep_init: bool,
    /// Let the light's total energy change during fitting.
    #[arg(long)]
    free_energy: bool,
    /// Also fit to the targets' albedo, roughness and metallic images.
    #[arg(long)]
    supervise_materials: bool,
}

#[derive(Args, Debug)]
struct RelightArgs {
    checkpoint: PathBuf,
    /// Lobe file (.toml) or environment map (.pfm, .ppm).
    #[arg(long)]
    light: PathBuf,
    /// Lobe count when fitting an environment map.
    #[arg(long, default_value_t = 16)]
    lobes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    views: Views,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "psnr,ssim")]
    metric: Vec<Metric>,
    /// Single-channel image; pixels ≥ 0.5 are compared.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Verify input hashes against this manifest first.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McCheckArgs {
    scene: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    views: Views,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExportMeshArgs {
    scene: PathBuf,
    #[arg(long, default_value_t = 64)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitEnvmapArgs {
    map: PathBuf,
    #[arg(long, default_value_t = 16)]
    lobes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Unknown {
    Light,
    Materials,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Metric {
    Psnr,
    Ssim,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Views {
    All,
    One(usize),
}

impl std::str::FromStr for Views {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Views::All),
            _ => s
                .parse()
                .map(Views::One)
                .map_err(|_| format!("expected `all` or a view index, got `{s}`")),
        }
    }
}

impl Views {
    fn select(self, count: usize) -> Result<Vec<usize>> {
        match self {
            Views::All => Ok((0..count).collect()),
            Views::One(i) if i < count => Ok(vec![i]),
            Views::One(i) => bail!("view {i} out of range (scene has {count} cameras)"),
        }
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

/// Marks an error as a numerical failure (exit code 3).
#[derive(Debug)]
struct Numerical(String);

impl fmt::Display for Numerical {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for Numerical {}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Numerical>() || matches!(c.downcast_ref::<FitError>(), Some(FitError::Divergence { .. }))
    })
}

fn view_dir(view: usize) -> String {
    format!("view_{view}")
}

fn read_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_image(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_frame(manifest: &mut Manifest, out: &Path, view: usize, frame: &AovFrame, ldr: &RenderConfig) -> Result<()> {
    let dir = view_dir(view);
    for (name, img) in frame.images() {
        let data = encode_image(img, ImageFormat::Pfm);
        manifest.write_file(out, &format!("{dir}/{name}.pfm"), &data)?;
    }
    let preview = match ldr.ldr {
        sgir::render::LdrEncoding::Srgb => frame.color.clone(),
        sgir::render::LdrEncoding::Linear => frame.color.map(sgir::image::srgb_decode),
    };
    manifest.write_file(out, &format!("{dir}/color.ppm"), &encode_image(&preview, ImageFormat::Ppm))?;
    Ok(())
}

fn check_finite(frame: &AovFrame, view: usize) -> Result<()> {
    for (name, img) in frame.images() {
        if img.data.iter().any(|v| !v.is_finite()) {
            return Err(Numerical(format!("view {view}: non-finite values in {name}")).into());
        }
    }
    Ok(())
}

fn render_views(scene: &Scene, cameras: &[sgir::Camera], cfg: &RenderConfig, views: Views, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Manifest::default();
    for v in views.select(cameras.len())? {
        let frame = render(scene, &cameras[v], cfg).with_context(|| format!("rendering view {v}"))?;
        check_finite(&frame, v)?;
        write_frame(&mut manifest, out, v, &frame, cfg)?;
        eprintln!(
            "view {v}: {}x{} px, {} hits, {} grazing, {} clamped",
            frame.width(),
            frame.height(),
            frame.stats.hits,
            frame.stats.grazing,
            frame.stats.clamped
        );
    }
    Ok(manifest)
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let (desc, mut loaded) = load_scene(&args.scene)?;
    if let Some(seed) = args.seed {
        loaded.render.seed = seed;
    }
    let mut manifest = render_views(&loaded.scene, &loaded.cameras, &loaded.render, args.views, &args.out)?;
    let mut echoed = desc;
    echoed.render = loaded.render;
    manifest.write_file(&args.out, "scene.toml", echoed.to_toml().as_bytes())?;
    manifest.save(&args.out)?;
    Ok(())
}

fn default_material() -> MaterialSample {
    MaterialSample::new(Vec3::splat(0.5), 0.5, 0.5, 0.5)
}

fn reset_material(field: &ParameterField) -> Result<ParameterField> {
    Ok(match field {
        ParameterField::Constant { .. } => ParameterField::constant(default_material()),
        ParameterField::Grid3d {
            origin,
            cell_size,
            resolution,
            ..
        } => ParameterField::grid_uniform(default_material(), *origin, *cell_size, *resolution)?,
        ParameterField::Neural { .. } => field.clone(),
    })
}

fn load_targets(dir: &Path, count: usize, supervise: bool) -> Result<Vec<(usize, ViewTarget)>> {
    let mut targets = Vec::new();
    for v in 0..count {
        let vd = dir.join(view_dir(v));
        if !vd.is_dir() {
            continue;
        }
        let mask = read_image(&vd.join("mask.pfm"))?.map(|m| if m >= MASK_THRESHOLD { 1.0 } else { 0.0 });
        let mut t = ViewTarget {
            color: read_image(&vd.join("color.pfm"))?,
            mask,
            albedo: None,
            roughness: None,
            metallic: None,
        };
        if supervise {
            t.albedo = Some(read_image(&vd.join("albedo.pfm"))?);
            t.roughness = Some(read_image(&vd.join("roughness.pfm"))?);
            t.metallic = Some(read_image(&vd.join("metallic.pfm"))?);
        }
        targets.push((v, t));
    }
    if targets.is_empty() {
        bail!("no view_<k> directories in {}", dir.display());
    }
    Ok(targets)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let (_, loaded) = load_scene(&args.scene)?;
    let targets = load_targets(&args.targets, loaded.cameras.len(), args.supervise_materials)?;
    let unknowns = Unknowns {
        light: args.unknowns.contains(&Unknown::Light),
        materials: args.unknowns.contains(&Unknown::Materials),
    };
    let scene = loaded.scene;
    let energy = mixture_energy(&scene.lights);
    let mut lights = scene.lights.clone();
    let mut materials = scene.materials.clone();
    if !args.keep_init {
        if unknowns.light {
            let n = args.init_lobes.unwrap_or(lights.len());
            if n == 0 {
                bail!("--init-lobes must be positive");
            }
            lights = sgir::inverse::init_light(n, energy);
        }
        if unknowns.materials {
            materials = materials.iter().map(reset_material).collect::<Result<_>>()?;
        }
    }
    let problem = FitProblem {
        geometry: scene.geometry,
        cameras: targets.iter().map(|(v, _)| loaded.cameras[*v].clone()).collect(),
        targets: targets.into_iter().map(|(_, t)| t).collect(),
        lights,
        materials,
        unknowns,
        light_energy: (unknowns.light && !args.free_energy).then_some(energy),
        weights: LossWeights::default(),
        render: loaded.render,
        background: scene.background,
    };
    let cfg = FitConfig {
        iterations: args.iters,
        lr: args.lr,
        seed: args.seed,
        ..FitConfig::default()
    };
    let result = fit(&problem, &cfg)?;
    let report = fit_report(&problem, &result, &cfg)?;
    for (v, p) in report.view_psnr.iter().enumerate() {
        eprintln!("view {v}: psnr {p:.2} dB");
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let fitted = Scene {
        lights: result.lights,
        materials: result.materials,
        ..problem.scene()
    };
    let lobes = LobeFile {
        lobes: fitted.lights.clone(),
    };
    let checkpoint = Checkpoint::new(fitted, loaded.cameras, loaded.render);
    let mut manifest = Manifest::default();
    manifest.write_file(&args.out, "checkpoint.json", checkpoint.to_json().as_bytes())?;
    manifest.write_file(&args.out, "lights.toml", lobes.to_toml().as_bytes())?;
    let report_text = toml::to_string(&report).context("serializing fit report")?;
    manifest.write_file(&args.out, "report.toml", report_text.as_bytes())?;
    manifest.save(&args.out)?;
    Ok(())
}

fn load_light(path: &Path, lobes: usize) -> Result<Vec<SphericalGaussian>> {
    if ImageFormat::from_path(path).is_some() {
        let map = read_image(path)?;
        let fitted = fit_envmap_to_sg(&map, lobes).with_context(|| format!("fitting {}", path.display()))?;
        eprintln!("fitted {} lobes, residual {:.4e}", fitted.lobes.len(), fitted.residual);
        Ok(fitted.lobes)
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(LobeFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?.lobes)
    }
}

fn cmd_relight(args: RelightArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let checkpoint = Checkpoint::from_json(&text).with_context(|| format!("parsing {}", args.checkpoint.display()))?;
    let lights = load_light(&args.light, args.lobes)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut manifest = Manifest::default();
    for v in args.views.select(checkpoint.cameras.len())? {
        let frame = relight(&checkpoint.scene, &lights, &checkpoint.cameras[v], &checkpoint.render)?;
        check_finite(&frame, v)?;
        write_frame(&mut manifest, &args.out, v, &frame, &checkpoint.render)?;
    }
    let lobes = LobeFile { lobes: lights };
    manifest.write_file(&args.out, "lights.toml", lobes.to_toml().as_bytes())?;
    manifest.save(&args.out)?;
    Ok(())
}

fn verify_against(manifest_path: &Path, files: &[&Path]) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let base = base.canonicalize().with_context(|| format!("resolving {}", base.display()))?;
    for f in files {
        let full = f.canonicalize().with_context(|| format!("resolving {}", f.display()))?;
        let rel = full
            .strip_prefix(&base)
            .with_context(|| format!("{} is outside the manifest directory", f.display()))?;
        let rel = rel.to_string_lossy().replace('\\', "/");
        let entry = manifest
            .entry(&rel)
            .with_context(|| format!("{rel} is not listed in {}", manifest_path.display()))?;
        let data = std::fs::read(&full).with_context(|| format!("reading {}", f.display()))?;
        if sgir::manifest::sha256_hex(&data) != entry.sha256 {
            bail!("{rel}: content hash does not match {}", manifest_path.display());
        }
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    if let Some(m) = &args.manifest {
        let mut files = vec![args.a.as_path(), args.b.as_path()];
        if let Some(mask) = &args.mask {
            files.push(mask);
        }
        verify_against(m, &files)?;
        println!("manifest=ok");
    }
    let a = read_image(&args.a)?;
    let b = read_image(&args.b)?;
    let mask = args.mask.as_deref().map(read_image).transpose()?;
    for m in &args.metric {
        match m {
            Metric::Psnr => println!("psnr={:?}", psnr(&a, &b, mask.as_ref())?),
            Metric::Ssim => println!("ssim={:?}", ssim(&a, &b)?),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct McRow {
    view: usize,
    #[serde(flatten)]
    stats: McComparison,
}

#[derive(Serialize)]
struct McReport {
    samples: usize,
    seed: u64,
    views: Vec<McRow>,
}

fn cmd_mc_check(args: McCheckArgs) -> Result<()> {
    let (_, loaded) = load_scene(&args.scene)?;
    let mut rows = Vec::new();
    println!("view\tpixels\tmean_rel_error\tmax_rel_error");
    for v in args.views.select(loaded.cameras.len())? {
        let stats = compare_with_mc(&loaded.scene, &loaded.cameras[v], &loaded.render, args.samples, args.seed)?;
        if !stats.mean_rel_error.is_finite() {
            return Err(Numerical(format!("view {v}: non-finite error")).into());
        }
        println!("{v}\t{}\t{:.6}\t{:.6}", stats.pixels, stats.mean_rel_error, stats.max_rel_error);
        rows.push(McRow { view: v, stats });
    }
    let report = McReport {
        samples: args.samples,
        seed: args.seed,
        views: rows,
    };
    let text = toml::to_string(&report).context("serializing report")?;
    std::fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn cmd_export_mesh(args: ExportMeshArgs) -> Result<()> {
    let (_, loaded) = load_scene(&args.scene)?;
    let geometry = &loaded.scene.geometry;
    let r = geometry
        .bounding_radius()
        .map_or(loaded.render.fallback_radius, |r| r * BOUNDS_PADDING);
    let mesh = marching_cubes(geometry, Vec3::splat(-r), Vec3::splat(r), args.res)?;
    let file = std::fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    mesh.write_obj(std::io::BufWriter::new(file))?;
    eprintln!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}

fn cmd_fit_envmap(args: FitEnvmapArgs) -> Result<()> {
    let map = read_image(&args.map)?;
    let fitted = fit_envmap_to_sg(&map, args.lobes)?;
    if !fitted.residual.is_finite() {
        return Err(Numerical("non-finite envmap residual".into()).into());
    }
    println!("residual={:?}", fitted.residual);
    println!("iterations={}", fitted.iterations);
    let lobes = LobeFile { lobes: fitted.lobes };
    std::fs::write(&args.out, lobes.to_toml()).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Relight(a) => cmd_relight(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::McCheck(a) => cmd_mc_check(a),
        Command::ExportMesh(a) => cmd_export_mesh(a),
        Command::FitEnvmap(a) => cmd_fit_envmap(a),
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(if is_numerical(&e) { 3 } else { 2 })
        }
    }
}
