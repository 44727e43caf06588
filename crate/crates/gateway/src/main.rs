//! `floodmap` command line: preprocessing, the HTTP service, and the
//! ingest/aggregation operations against a local store.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use floodmap_core::aggregate::OverlayView;
use floodmap_core::raster::{load_dem, load_dem_filled, load_mask, save_mask, DemFormat, RawHeader, RgbRaster};
use floodmap_core::select::Connectivity;
use floodmap_core::session::{replay, SessionLog};
use floodmap_gateway::pipeline::{self, f64_bytes, PreprocessParams, ReplayData, Verification};
use floodmap_gateway::{GatewayError, Result, Store};

#[derive(Parser)]
#[command(name = "floodmap", version, about = "Elevation-guided flood annotation pipeline")]
struct Cli {
    /// Dataset store directory.
    #[arg(long, global = true, default_value = "floodmap-store")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Aggregate,
    Variance,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize, segment and mesh a DEM with its imagery; prints the dataset id.
    Preprocess {
        /// ESRI ASCII grid, or raw little-endian f32 when --dem-header is given.
        #[arg(long)]
        dem: PathBuf,
        #[arg(long)]
        dem_header: Option<PathBuf>,
        /// Replace no-data cells by their nearest valid value.
        #[arg(long)]
        fill_nodata: bool,
        /// RGB PNG with the DEM's dimensions.
        #[arg(long)]
        imagery: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = floodmap_core::topo::DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = floodmap_core::mesh::DEFAULT_MAX_ERROR)]
        mesh_max_error: f64,
        #[arg(long)]
        max_vertices: Option<usize>,
    },
    /// Append coarser segmentation levels to a dataset.
    Extend {
        #[arg(long)]
        dataset: String,
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Verify a mask against its session log and store both.
    Submit {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Store a mismatching pair with a warning instead of rejecting it.
        #[arg(long)]
        warn_only: bool,
    },
    /// Write mean, variance and soft-label maps and the binarized mask.
    Aggregate {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Mask whose labeled pixels override the crowd.
        #[arg(long)]
        correction: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score submissions and their aggregate against a reference submission.
    Metrics {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        reference: String,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Replay a session log against a dataset.
    Replay {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        log: PathBuf,
        /// Write the replayed mask here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compare the replayed mask with this one.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Render the aggregate or variance overlay to an RGBA PNG.
    ExportOverlay {
        #[arg(long)]
        dataset: String,
        #[arg(long, value_enum, default_value_t = ViewArg::Aggregate)]
        view: ViewArg,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GatewayError::BadRequest(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| GatewayError::BadRequest(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let store = Store::open(&cli.store)?;
    match cli.command {
        Command::Preprocess { dem, dem_header, fill_nodata, imagery, thresholds, mesh_max_error, max_vertices } => {
            let format = match dem_header {
                Some(h) => DemFormat::RawF32(RawHeader::parse(&String::from_utf8_lossy(&read(&h)?))?),
                None => DemFormat::AsciiGrid,
            };
            let bytes = read(&dem)?;
            let grid = if fill_nodata { load_dem_filled(&bytes, &format)? } else { load_dem(&bytes, &format)? };
            let imagery = RgbRaster::load_png(&read(&imagery)?)?;
            let params = PreprocessParams { thresholds, mesh_max_error, max_vertices };
            let bundle = pipeline::preprocess_dataset(&store, &grid, &imagery, &params)?;
            let m = &bundle.meta;
            eprintln!(
                "{}x{} {}; segments per level {:?}; mesh {} vertices, {} triangles, max error {}{}",
                m.width,
                m.height,
                if bundle.computed { "preprocessed" } else { "already stored" },
                m.segment_counts,
                m.mesh.vertices,
                m.mesh.triangles,
                m.mesh.max_error_bound,
                if m.degenerate { "; degenerate (constant) elevation" } else { "" },
            );
            println!("{}", m.id);
        }
        Command::Extend { dataset, thresholds } => {
            let meta = pipeline::append_thresholds(&store, &dataset, &thresholds)?;
            for (t, n) in meta.thresholds.iter().zip(&meta.segment_counts) {
                println!("{t}\t{n}");
            }
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(floodmap_gateway::http::serve(Arc::new(store), addr))?;
        }
        Command::Submit { dataset, mask, log, warn_only } => {
            let mask = load_mask(&read(&mask)?)?;
            let log = SessionLog::from_json(&read(&log)?)?;
            let verification = if warn_only { Verification::Warn } else { Verification::Enforce };
            let record = pipeline::submit_annotation(&store, &dataset, &mask, &log, verification)?;
            for w in &record.meta.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", record.meta.id);
        }
        Command::Aggregate { dataset, tau, correction, out } => {
            let correction = correction.map(|p| read(&p).and_then(|b| Ok(load_mask(&b)?))).transpose()?;
            let agg = pipeline::aggregate_dataset(&store, &dataset, correction.as_ref(), tau)?;
            std::fs::create_dir_all(&out)?;
            write(&out.join("mean.f64"), &f64_bytes(&agg.mean.values))?;
            write(&out.join("variance.f64"), &f64_bytes(&agg.variance.values))?;
            write(&out.join("softlabels.f64"), &f64_bytes(&agg.soft.flood_scores()))?;
            write(&out.join("binarized.png"), &save_mask(&agg.binarized)?)?;
            let d = agg.mean.dims;
            println!("{}x{}; {} pixels labeled after binarization", d.width, d.height, agg.binarized.labeled_count());
        }
        Command::Metrics { dataset, reference, tau } => {
            let report = pipeline::metrics(&store, &dataset, &reference, tau)?;
            println!("aggregate vs {}", report.reference);
            print!("{}", report.aggregate.to_report());
            for s in &report.submissions {
                println!("submission {}", s.id);
                print!("{}", s.metrics.to_report());
            }
        }
        Command::Replay { dataset, log, out, mask } => {
            let data = ReplayData::load(&store, &dataset)?;
            let log = SessionLog::from_json(&read(&log)?)?;
            let connectivity: Connectivity = log.header.defaults.connectivity;
            let state = replay(&log, &data.context(connectivity))?;
            println!("{} actions; {} pixels labeled", log.actions.len(), state.mask.labeled_count());
            if let Some(path) = mask {
                let expected = load_mask(&read(&path)?)?;
                let differing = state.mask.labels().iter().zip(expected.labels()).filter(|(a, b)| a != b).count();
                if expected.dims() != state.mask.dims() || differing > 0 {
                    return Err(GatewayError::ReplayMismatch { differing });
                }
            }
            if let Some(path) = out {
                write(&path, &save_mask(&state.mask)?)?;
            }
        }
        Command::ExportOverlay { dataset, view, tau, out } => {
            let view = match view {
                ViewArg::Aggregate => OverlayView::Aggregate,
                ViewArg::Variance => OverlayView::Variance,
            };
            write(&out, &pipeline::overlay(&store, &dataset, view, tau)?.to_png()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::FAILURE
        }
    }
}
