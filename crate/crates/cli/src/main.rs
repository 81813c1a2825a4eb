use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cosmolod_core::build::{build, with_threads, BuildConfig};
use cosmolod_core::camera::Camera;
use cosmolod_core::cut::select_cut;
use cosmolod_core::dataset::Dataset;
use cosmolod_core::image::{image_psnr, Image};
use cosmolod_core::render::{render_reference, RenderInput};
use cosmolod_core::snapshot::{read_table_file, write_table_file};
use cosmolod_core::synth::{gen_synthetic, SynthConfig};
use cosmolod_server::ServeOptions;

#[derive(Parser)]
#[command(name = "cosmolod", version, about = "Level-of-detail octree blocks for multi-timestep particle data")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic clustered dataset.
    Gen(GenArgs),
    /// Build a dataset directory from snapshot files.
    Build(BuildArgs),
    /// Render a dataset at time t.
    Render(RenderArgs),
    /// Print the PSNR in dB between two PFM images.
    Psnr { a: PathBuf, b: PathBuf },
    /// Serve a dataset over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    points: usize,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value_t = 4)]
    snapshots: usize,
    #[arg(long = "box", default_value_t = 1.0)]
    box_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Plummer scale radius [default: 0.02 * box]
    #[arg(long)]
    plummer_scale: Option<f64>,
    /// Cluster speed per time unit [default: 0.01 * box]
    #[arg(long)]
    drift: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of snap_*.cpt files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16000)]
    node_capacity: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    max_depth: u32,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    t: f64,
    /// Draw every leaf block.
    #[arg(long, conflicts_with_all = ["tau", "budget", "raw"])]
    full: bool,
    /// Draw the raw snapshots in this directory instead of blocks.
    #[arg(long, conflicts_with_all = ["tau", "budget"])]
    raw: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    #[arg(long, default_value_t = 10_000_000)]
    budget: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Static files served under `/`.
    #[arg(long)]
    web_root: Option<PathBuf>,
}

fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| Ok(e?.path()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("snap_") && name.ends_with(".cpt")
        })
        .collect();
    files.sort();
    if files.len() < 2 {
        bail!("{} holds {} snapshot files, need at least 2", dir.display(), files.len());
    }
    Ok(files)
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_points: a.points,
        n_clusters: a.clusters,
        n_snapshots: a.snapshots,
        plummer_scale: a.plummer_scale.unwrap_or(0.02 * a.box_size),
        box_size: a.box_size,
        drift_speed: a.drift.unwrap_or(0.01 * a.box_size),
        seed: a.seed,
    };
    let tables = gen_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    let mut times = Vec::new();
    for (s, t) in tables.iter().enumerate() {
        write_table_file(t, &a.out.join(format!("snap_{s:03}.cpt")))?;
        times.push(t.snapshot_time);
    }
    fs::write(a.out.join("times.json"), serde_json::to_vec(&times)?)?;
    println!("wrote {} snapshots of {} points to {}", tables.len(), a.points, a.out.display());
    Ok(())
}

fn build_cmd(a: BuildArgs) -> Result<()> {
    let inputs = snapshot_files(&a.input)?;
    let cfg = BuildConfig {
        node_capacity: a.node_capacity,
        density_exponent: a.alpha,
        seed: a.seed,
        max_depth: a.max_depth,
    };
    let summary = with_threads(a.threads, || build(&inputs, &cfg, &a.out))??;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let cam: Camera = serde_json::from_slice(&fs::read(&a.camera).with_context(|| a.camera.display().to_string())?)
        .with_context(|| format!("parsing camera {}", a.camera.display()))?;
    let ds = Dataset::open(&a.dataset)?;
    let times = &ds.meta().snapshot_times;
    let img = if let Some(raw) = &a.raw {
        let tables = snapshot_files(raw)?
            .iter()
            .map(|p| read_table_file(p))
            .collect::<cosmolod_core::Result<Vec<_>>>()?;
        render_reference(RenderInput::Raw(&tables), &cam, a.t, times)?
    } else {
        let (s, _) = ds.meta().locate_time(a.t)?;
        let index = ds.index(s).expect("located interval exists");
        let paths: Vec<_> = if a.full {
            index.leaves().map(|e| e.path).collect()
        } else {
            let cut = select_cut(index, &ds.meta().root, s as u32, &cam, a.tau, a.budget)?;
            log::info!("cut: {} blocks, {} points", cut.entries.len(), cut.total_points);
            cut.entries.iter().map(|e| e.path).collect()
        };
        let blocks = paths
            .into_iter()
            .map(|p| Ok(ds.block(s, p)?.expect("indexed block")))
            .collect::<cosmolod_core::Result<Vec<_>>>()?;
        render_reference(RenderInput::Blocks(&blocks), &cam, a.t, times)?
    };
    fs::write(&a.out, img.to_pfm()).with_context(|| a.out.display().to_string())?;
    let preview = a.out.with_extension("ppm");
    fs::write(&preview, img.to_ppm_preview())?;
    println!("wrote {} and {}", a.out.display(), preview.display());
    Ok(())
}

fn psnr(a: &Path, b: &Path) -> Result<()> {
    let load = |p: &Path| -> Result<Image> {
        Ok(Image::from_pfm(&fs::read(p).with_context(|| p.display().to_string())?)?)
    };
    println!("{:.4}", image_psnr(&load(a)?, &load(b)?)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let opts = ServeOptions {
        dataset: a.dataset,
        addr: a.addr,
        web_root: a.web_root,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(cosmolod_server::serve(&opts))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Build(a) => build_cmd(a),
        Cmd::Render(a) => render(a),
        Cmd::Psnr { a, b } => psnr(&a, &b),
        Cmd::Serve(a) => serve(a),
    }
}
