use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mpe_core::clothes::{GarmentRegion, OutfitColorProfile};
use mpe_core::color::RgbColor;
use mpe_core::eval::{render_table, AnnotationRecord};
use mpe_core::matchmaker::{ColorSource, Harmony};
use mpe_core::pipeline::{extract_batch_with_progress, ExtractOutcome, Substitution};
use mpe_core::predict::adapter;
use mpe_core::properties::{Category, FinishType, Format};
use mpe_service::service::{EvaluateRequest, IngestRequest, MatchOptions, OutfitRequest, Service};
use mpe_service::{read_records, ServiceConfig};

#[derive(Parser)]
#[command(name = "mpe", version, about = "Makeup material property extraction and color matching")]
struct Cli {
    /// TOML config file; MPE_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CatalogArgs {
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Root for relative image URIs (defaults to the catalog directory).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Keyword rules TOML.
    #[arg(long)]
    keywords: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load product records (JSON array or JSON lines) into a catalog.
    Ingest {
        #[command(flatten)]
        catalog: CatalogArgs,
        file: PathBuf,
        #[arg(long)]
        upsert: bool,
    },
    /// Run the pipeline and write one result file per product.
    Extract {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[arg(long)]
        backend: Option<String>,
        /// File with one product id per line, or `all`.
        #[arg(long, default_value = "all")]
        ids: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
        /// Also write `<id>.trace.json` with per-stage timings.
        #[arg(long)]
        trace: bool,
    },
    /// Rank catalog shades by color distance.
    Match {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// `product:shade`, `#RRGGBB`, or an outfit profile JSON file.
        #[arg(long)]
        from: String,
        #[arg(long)]
        category: Option<Category>,
        #[arg(long, default_value_t = 10.0)]
        max_delta_e: f64,
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        brand: Option<String>,
        #[arg(long)]
        finish: Option<FinishType>,
        #[arg(long, default_value = "exact")]
        harmony: Harmony,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Dominant colors of one garment region; prints an outfit profile.
    OutfitProfile {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, default_value = "upper")]
        region: GarmentRegion,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Score the pipeline against ground truth and annotations.
    Evaluate {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        /// Stages fed from ground truth, e.g. `m1,m3,m5`; repeat for several rows, `none` for none.
        #[arg(long)]
        substitute: Vec<String>,
        /// Only `brand` is supported.
        #[arg(long)]
        group_by: Option<String>,
        /// Write machine-readable reports here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the /v1 HTTP API.
    Serve {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        backend: Option<String>,
    },
    /// Answer adapter requests with an in-process backend (stdio, or a Unix socket).
    ServePredictor {
        #[arg(long, default_value = "reference")]
        backend: String,
        #[arg(long)]
        socket: Option<PathBuf>,
    },
}

fn config(cli_config: Option<&Path>, args: &CatalogArgs) -> Result<ServiceConfig> {
    let mut cfg = ServiceConfig::load(cli_config)?;
    if let Some(c) = &args.catalog {
        cfg.catalog = c.clone();
    }
    if let Some(i) = &args.images {
        cfg.image_root = Some(i.clone());
    }
    if let Some(k) = &args.keywords {
        cfg.keywords = Some(k.clone());
    }
    Ok(cfg)
}

fn safe_file_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_source(from: &str) -> Result<ColorSource> {
    if from.starts_with('#') {
        return Ok(ColorSource::Color { color: RgbColor::from_hex(from)? });
    }
    if Path::new(from).is_file() {
        let profile: OutfitColorProfile = serde_json::from_str(&fs::read_to_string(from)?)?;
        return Ok(ColorSource::Profile { profile });
    }
    let Some((product, shade)) = from.rsplit_once(':') else {
        bail!("--from must be product:shade, #RRGGBB or a profile file");
    };
    Ok(ColorSource::Shade { product_id: product.to_string(), shade_index: shade.parse().context("shade index")? })
}

fn run(cli: Cli) -> Result<()> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest { catalog, file, upsert } => {
            let cfg = config(cfg_path, &catalog)?;
            let service = Service::open(&cfg)?;
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let records = read_records(&text).context("parsing product records")?;
            let report = service.ingest(IngestRequest { records, upsert })?;
            print_json(&report)?;
        }
        Command::Extract { catalog, backend, ids, out, parallel, trace } => {
            let mut cfg = config(cfg_path, &catalog)?;
            if let Some(p) = parallel {
                cfg.parallelism = p;
            }
            cfg.pipeline.record_timings = trace;
            let service = Service::open(&cfg)?;
            let ids: Vec<String> = if ids == "all" {
                service.store.ids()
            } else {
                fs::read_to_string(&ids)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
            };
            let pipeline = service.pipeline(backend.as_deref())?;
            fs::create_dir_all(&out)?;
            let results = extract_batch_with_progress(
                &service.store,
                &ids,
                &pipeline,
                service.parallelism,
                &Substitution::none(),
                &|p| log::info!("{}/{}", p.done, p.total),
            )?;
            let (mut ok, mut filtered, mut failed) = (0, 0, 0);
            for (id, ex) in &results {
                match &ex.outcome {
                    ExtractOutcome::Extracted { properties } => {
                        ok += 1;
                        service.store.record_pipeline_result(id, properties.clone())?;
                    }
                    ExtractOutcome::FilteredOut { .. } => filtered += 1,
                    ExtractOutcome::Failed { .. } => failed += 1,
                }
                let name = safe_file_name(id);
                write_json(&out.join(format!("{name}.json")), &ex.outcome)?;
                if trace {
                    write_json(&out.join(format!("{name}.trace.json")), &ex.trace)?;
                }
            }
            eprintln!("extracted {ok}, filtered {filtered}, failed {failed}");
        }
        Command::Match { catalog, from, category, max_delta_e, format, brand, finish, harmony, limit } => {
            let cfg = config(cfg_path, &catalog)?;
            let service = Service::open(&cfg)?;
            let options = MatchOptions {
                category,
                max_delta_e: Some(max_delta_e),
                format,
                brand,
                finish,
                harmony: Some(harmony),
                limit,
            };
            let recs = match parse_source(&from)? {
                ColorSource::Profile { profile } => service.outfit(&OutfitRequest {
                    image: None,
                    mask: None,
                    region: None,
                    k: None,
                    threshold: None,
                    profile: Some(profile),
                    options,
                })?,
                source => {
                    let catalog = mpe_core::matchmaker::MatchCatalog::from_store(&service.store, Default::default());
                    catalog.similar_shades(&options.query(source))?
                }
            };
            print_json(&recs)?;
        }
        Command::OutfitProfile { image, mask, region, k } => {
            let img = mpe_core::predict::ImageData::open(&image, image.display().to_string())?;
            let mask = mpe_core::clothes::SegmentationMask::load(&mask)?;
            print_json(&mpe_core::clothes::outfit_colors(&img, &mask, region, k)?)?;
        }
        Command::Evaluate { catalog, annotations, backend, substitute, group_by, json } => {
            let cfg = config(cfg_path, &catalog)?;
            let service = Service::open(&cfg)?;
            if let Some(path) = annotations {
                let records: Vec<AnnotationRecord> = read_records(&fs::read_to_string(&path)?)?;
                service.put_annotations(records)?;
            }
            let group_by_brand = match group_by.as_deref() {
                None => false,
                Some("brand") => true,
                Some(other) => bail!("unsupported --group-by {other:?}"),
            };
            let modes = if substitute.is_empty() { vec!["none".to_string()] } else { substitute };
            let mut reports = Vec::new();
            for m in modes {
                let sub = if m == "none" { Substitution::none() } else { Substitution::parse(&m).map_err(anyhow::Error::msg)? };
                reports.push(service.evaluate(&EvaluateRequest {
                    substitute: sub,
                    group_by_brand,
                    backend: backend.clone(),
                    ids: None,
                })?);
            }
            print!("{}", render_table(&reports));
            if let Some(path) = json {
                write_json(&path, &reports)?;
            }
        }
        Command::Serve { catalog, port, backend } => {
            let mut cfg = config(cfg_path, &catalog)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(b) = backend {
                cfg.backend = b;
            }
            let service = Arc::new(Service::open(&cfg)?);
            service.backends.resolve(None)?;
            let addr = format!("{}:{}", cfg.bind, cfg.port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                log::info!("listening on {addr}");
                eprintln!("listening on http://{addr}/v1");
                axum::serve(listener, mpe_service::router(service))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
        Command::ServePredictor { backend, socket } => {
            let suite_backend = predictor_backend(&backend)?;
            match socket {
                Some(path) => serve_socket(&path, suite_backend)?,
                None => {
                    let stdin = std::io::stdin();
                    let stdout = std::io::stdout();
                    adapter::serve(suite_backend.as_ref(), None, stdin.lock(), stdout.lock())?;
                }
            }
        }
    }
    Ok(())
}

fn predictor_backend(name: &str) -> Result<Arc<dyn mpe_core::predict::Backend>> {
    use mpe_core::predict::mock::{MockBackend, MockScript};
    use mpe_core::predict::reference::ReferenceBackend;
    if name == "reference" {
        return Ok(Arc::new(ReferenceBackend::default()));
    }
    if let Some(path) = name.strip_prefix("mock:") {
        return Ok(Arc::new(MockBackend::new(MockScript::load(Path::new(path))?)));
    }
    bail!("serve-predictor supports reference or mock:<script>, got {name:?}")
}

#[cfg(unix)]
fn serve_socket(path: &Path, backend: Arc<dyn mpe_core::predict::Backend>) -> Result<()> {
    let _ = fs::remove_file(path);
    let listener = std::os::unix::net::UnixListener::bind(path)?;
    eprintln!("predictor listening on {}", path.display());
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = backend.clone();
        std::thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(r) => r,
                Err(e) => return log::warn!("socket clone: {e}"),
            };
            if let Err(e) = adapter::serve(backend.as_ref(), None, reader, stream) {
                log::warn!("adapter session ended: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(not(unix))]
fn serve_socket(_: &Path, _: Arc<dyn mpe_core::predict::Backend>) -> Result<()> {
    bail!("unix sockets are not available on this platform")
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
