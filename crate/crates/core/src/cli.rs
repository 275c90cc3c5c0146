//! Command-line front end.
//!
//! Exit status: 0 on success, 1 on any validation or runtime failure, 2 when the run
//! finished but skipped files, 64 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use crate::audit::{self, AuditReport};
use crate::error::{Error, Result};
use crate::evaluate;
use crate::manifest::{self, Manifest, IMAGES_DIR};
use crate::merge::{self, MergeInput, MergeOptions};
use crate::seed;
use crate::split::{self, SplitSpec};
use crate::standardize::{self, SourceDataset, StandardizeOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "cellmerge", version, about = "Standardize, merge, audit, split and evaluate blood-cell detection datasets")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, env = "CELLMERGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Side of the square canvas, in pixels.
    #[arg(long, global = true, default_value_t = standardize::DEFAULT_TARGET)]
    pub target_size: u32,
    /// Only log errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Output format for reports printed to standard output.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
    Svg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Letterbox one source dataset and write a standardized manifest.
    Standardize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source name recorded per image (default: the input directory name).
        #[arg(long)]
        name: Option<String>,
        /// Pseudo-box centre jitter, in pixels per axis.
        #[arg(long, default_value_t = standardize::DEFAULT_JITTER)]
        jitter: u32,
        /// Emit tables only; no image is decoded or written.
        #[arg(long)]
        pixel_free: bool,
    },
    /// Merge standardized datasets, in argument order.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Do not copy images.
        #[arg(long)]
        pixel_free: bool,
    },
    /// Class histogram, per-source composition and rare-class report.
    Audit {
        manifest: PathBuf,
        #[arg(long, default_value_t = 1500)]
        threshold: usize,
        /// Classes to remove, comma separated.
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
        /// Where to write the manifest after `--drop`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded image-level train/validation split.
    Split {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = split::DEFAULT_TRAIN_FRACTION)]
        train_fraction: f64,
        /// Reserved; not implemented.
        #[arg(long)]
        stratify_by_class: bool,
    },
    /// Score predictions against a manifest.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// A previous report.json to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the subcommand, returning the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let level = if cli.global.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    log::set_max_level(level);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            error!("cannot start worker pool: {e}");
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            EXIT_FAILURE
        }
    }
}

fn print_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

fn to_json_text(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn dataset_label(path: &Path) -> String {
    path.canonicalize()
        .unwrap_or_else(|_| path.to_path_buf())
        .to_string_lossy()
        .into_owned()
}

fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Standardize {
            input,
            out,
            name,
            jitter,
            pixel_free,
        } => {
            let src = SourceDataset::load(input, name.as_deref())?;
            let opts = StandardizeOptions {
                target: g.target_size,
                seed: g.seed,
                jitter_range: *jitter,
                pixel_free: *pixel_free,
            };
            let outcome = standardize::standardize_dataset(&src, out, &opts)?;
            let r = &outcome.report;
            info!(
                "{}: {} of {} images, {} annotations, {} skipped",
                r.source,
                r.images_out,
                r.images_in,
                r.annotations,
                r.skipped.len()
            );
            Ok(if r.skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Merge { inputs, out, pixel_free } => {
            let labels: Vec<String> = inputs.iter().map(|p| dataset_label(p)).collect();
            let manifests = inputs.iter().map(|p| Manifest::load(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<MergeInput<'_>> = labels.iter().zip(&manifests).map(|(l, m)| MergeInput::new(l, m)).collect();
            let outcome = merge::merge_datasets(&refs, out, MergeOptions { copy_images: !pixel_free })?;
            let comp = &outcome.report.composition;
            match g.format {
                Some(Format::Json) => print_stdout(&to_json_text(&outcome.report))?,
                _ => {
                    let mut rows: Vec<[String; 3]> = comp
                        .rows
                        .iter()
                        .map(|r| [r.source.clone(), r.images.to_string(), r.annotations.to_string()])
                        .collect();
                    rows.push(["Total".into(), comp.total_images.to_string(), comp.total_annotations.to_string()]);
                    print_stdout(&audit::render_table(&["Source", "Images", "Annotations"], &rows, true))?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Audit {
            manifest: dir,
            threshold,
            drop,
            out,
        } => {
            let m = Manifest::load(dir)?;
            let (m, dropped) = if drop.is_empty() {
                (m, None)
            } else {
                let (m2, report) = audit::drop_classes(&m, drop);
                (m2, Some(report))
            };
            let report = AuditReport::build(&m, *threshold, dropped)?;
            if let Some(out) = out {
                m.save(out, false)?;
                let src_images = m.images_dir.clone().unwrap_or_else(|| dir.join(IMAGES_DIR));
                if src_images.is_dir() {
                    let dest = out.join(IMAGES_DIR);
                    fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
                    for f in m.images.keys() {
                        let from = src_images.join(f);
                        fs::copy(&from, dest.join(f)).map_err(|e| Error::io(&from, e))?;
                    }
                }
                manifest::write_json(&out.join("audit.json"), &report)?;
            } else if !drop.is_empty() {
                info!("--drop without --out: reporting only, nothing written");
            }
            let text = match g.format.unwrap_or(Format::Text) {
                Format::Json => to_json_text(&report),
                Format::Text => report.to_text(),
                Format::Svg => audit::histogram_svg(&report.histogram, Some(*threshold)),
            };
            print_stdout(&text)?;
            Ok(EXIT_OK)
        }
        Command::Split {
            manifest: dir,
            out,
            train_fraction,
            stratify_by_class,
        } => {
            if *stratify_by_class {
                return Err(Error::InvalidInput("--stratify-by-class is reserved and not implemented".into()));
            }
            let m = Manifest::load(dir)?;
            let spec = SplitSpec {
                train_fraction: *train_fraction,
                seed: seed::derive_seed(g.seed, "split"),
            };
            let (mut train, mut val) = split::split(&m, &spec)?;
            split::write_split(&mut train, &mut val, &spec, out)?;
            info!("split {} images into {} train / {} val", m.image_count(), train.image_count(), val.image_count());
            Ok(EXIT_OK)
        }
        Command::Evaluate { gt, pred, out, baseline } => {
            let m = Manifest::load(gt)?;
            let records = evaluate::load_predictions(pred)?;
            let dets = evaluate::resolve_predictions(&m, &records)?;
            let summary = evaluate::coco_summary(&m, &dets)?;
            let base = baseline
                .as_ref()
                .map(|p| -> Result<evaluate::EvalSummary> {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::json(p, e))
                })
                .transpose()?;
            let text = evaluate::report_text(&summary, base.as_ref());
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            manifest::write_json(&out.join("report.json"), &summary)?;
            manifest::write_file(&out.join("report.txt"), text.as_bytes())?;
            match g.format {
                Some(Format::Json) => print_stdout(&to_json_text(&summary))?,
                _ => print_stdout(&text)?,
            }
            Ok(EXIT_OK)
        }
    }
}
