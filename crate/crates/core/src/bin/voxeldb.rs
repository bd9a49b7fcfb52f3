use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use voxeldb::bench::{self, CutoutMode, CutoutSpec, SynthSpec, WriteSpec};
use voxeldb::service::http::{self, ServiceConfig};
use voxeldb::service::Service;
use voxeldb::store::ProjectKind;
use voxeldb::{DatasetConfig, Error, ProjectConfig, Result, VoxelType};

#[derive(Parser)]
#[command(name = "voxeldb", about = "Spatial voxel database: service, ingestion and measurement")]
struct Cli {
    /// Service configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    placement: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_mb: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve the REST interface.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    CreateDataset {
        name: String,
        /// Level-0 extent as X,Y,Z.
        #[arg(long, value_delimiter = ',', required = true)]
        extent: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        levels: u8,
        #[arg(long, default_value_t = 0)]
        time: u64,
        #[arg(long, default_value_t = 1)]
        channels: u32,
    },
    CreateProject {
        token: String,
        dataset: String,
        /// image or annotation
        #[arg(long, default_value = "image")]
        kind: String,
        #[arg(long, default_value = "uint8")]
        voxel_type: String,
        #[arg(long)]
        exceptions: bool,
        #[arg(long)]
        read_only: bool,
        #[arg(long)]
        no_compress: bool,
    },
    /// Print a project's configuration and placement.
    Describe { token: String },
    /// Load `<z>.png` slices into level 0 and build the hierarchy.
    Ingest { token: String, dir: PathBuf },
    SynthAnnotations {
        token: String,
        #[arg(long, default_value_t = 0)]
        synapses: usize,
        #[arg(long, default_value_t = 0)]
        dendrites: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    MeasureCutout {
        token: String,
        /// Cutout sizes in MiB.
        #[arg(long, value_delimiter = ',', default_value = "16")]
        sizes: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        parallel: Vec<usize>,
        #[arg(long, default_value = "aligned")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        level: u8,
        #[arg(long, default_value_t = 2)]
        requests: usize,
    },
    MeasureWrite {
        token: String,
        #[arg(long, default_value_t = 40)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value_t = 400)]
        objects: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Push annotations to every resolution level.
    Propagate { token: String },
}

fn config(cli: &Cli) -> Result<ServiceConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(p) = &cli.placement {
        cfg.placement = Some(p.clone());
    }
    if let Some(mb) = cli.cache_mb {
        cfg.cache_mb = mb;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    let store = Arc::new(cfg.open_store()?);
    let stdout = std::io::stdout();
    match cli.cmd {
        Cmd::Serve { listen } => {
            if let Some(l) = listen {
                cfg.listen = l;
            }
            http::serve(store, &cfg.listen)?;
        }
        Cmd::CreateDataset { name, extent, levels, time, channels } => {
            if extent.len() != 3 {
                return Err(Error::BadRequest("--extent takes X,Y,Z".into()));
            }
            let mut ds = DatasetConfig::new(name, [extent[0], extent[1], extent[2]]).with_levels(levels).with_channels(channels);
            if time > 0 {
                ds = ds.with_time(time);
            }
            store.create_dataset(ds)?;
        }
        Cmd::CreateProject { token, dataset, kind, voxel_type, exceptions, read_only, no_compress } => {
            let cfg = match kind.as_str() {
                "annotation" => ProjectConfig::annotation(&token, &dataset).with_exceptions(exceptions),
                "image" => {
                    let vt = VoxelType::parse(&voxel_type)
                        .ok_or_else(|| Error::BadRequest(format!("unknown voxel type {voxel_type:?}")))?;
                    ProjectConfig::image(&token, &dataset, vt).with_compression(!no_compress)
                }
                other => return Err(Error::BadRequest(format!("unknown project kind {other:?}"))),
            };
            store.create_project(cfg.read_only(read_only))?;
        }
        Cmd::Describe { token } => {
            let p = store.project(&token)?;
            let placement = store.router().placement(&token)?;
            let v = serde_json::json!({ "project": p.config, "dataset": p.dataset, "placement": *placement });
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
        }
        Cmd::Ingest { token, dir } => {
            let r = bench::ingest(&store, &token, &dir)?;
            println!("{} slices {}x{} z {}..{}, {} cuboids", r.slices, r.width, r.height, r.z_range.0, r.z_range.1, r.cuboids_written);
            bench::verify_index(&store, &token)?;
        }
        Cmd::SynthAnnotations { token, synapses, dendrites, seed } => {
            let ids = bench::synth_annotations(&store, &token, SynthSpec { synapses, dendrites, seed })?;
            println!("{} objects written", ids.len());
            bench::verify_index(&store, &token)?;
        }
        Cmd::MeasureCutout { token, sizes, parallel, mode, level, requests } => {
            let mode = CutoutMode::parse(&mode).ok_or_else(|| Error::BadRequest(format!("unknown mode {mode:?}")))?;
            let spec = CutoutSpec { level, sizes_mb: sizes, parallel, mode, requests_per_client: requests };
            let rows = bench::measure_cutout(&Service::new(store.clone()), &token, &spec)?;
            bench::write_csv(&rows, stdout.lock())?;
        }
        Cmd::MeasureWrite { token, batch, parallel, objects, seed } => {
            let row = bench::measure_write(&Service::new(store.clone()), &token, WriteSpec { batch, parallel, objects, seed })?;
            bench::write_csv(&[row], stdout.lock())?;
        }
        Cmd::Propagate { token } => {
            if store.project(&token)?.config.kind != ProjectKind::Annotation {
                return Err(Error::BadRequest(format!("{token} is not an annotation project")));
            }
            store.propagate_annotations(&token)?;
            bench::verify_index(&store, &token)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
