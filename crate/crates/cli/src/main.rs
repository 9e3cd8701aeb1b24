//! terrascope: batch land-cover raster analysis.
//!
//! Exit codes: 0 success, 2 input/parse error, 3 numeric failure.
//! `TERRASCOPE_THREADS` caps the worker count; results never depend on it.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::*;
use config::{require, Config};
use terrascope_core::gstat::WeightScheme;
use terrascope_core::Error as CoreError;

/// CLI-facing error: a message plus the process exit code.
#[derive(Debug)]
pub struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    pub fn input(message: String) -> Self {
        CliError { message, code: 2 }
    }

    pub fn from_core(err: CoreError) -> Self {
        let code = match err {
            // Valid-looking inputs whose mathematics degenerate.
            CoreError::DegenerateTransform
            | CoreError::DegenerateRange
            | CoreError::CollinearPoints
            | CoreError::TooFewDistinctSamples { .. }
            | CoreError::AllZeroValues
            | CoreError::EmptyWeights
            | CoreError::NoValidPixels
            | CoreError::DegenerateCovariance => 3,
            // Everything else is an input or parse problem.
            _ => 2,
        };
        CliError {
            message: err.to_string(),
            code,
        }
    }

    /// Prefixes the offending file so messages name file and line.
    pub fn contextualize(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

#[derive(Parser)]
#[command(
    name = "terrascope",
    version,
    about = "Land-use/land-cover raster analysis: edges, segmentation, classification, \
             spatial statistics, change detection, and area reports"
)]
struct Cli {
    /// JSON config file whose keys mirror the long flag names; flags on the
    /// command line override config values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EdgeMethodArg {
    Sobel,
    Laplacian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SegmentMethodArg {
    Threshold,
    Region,
    Edge,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Binary,
    InverseDistance,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChangeMethodName {
    Diff,
    Pca,
    Cva,
    Postclass,
    Thematic,
    Multiscale,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Detect edges (Sobel + non-maximum suppression, or Laplacian zero
    /// crossings) and write a 0/1 edge grid.
    Edges {
        /// Input grid (.asc, or .pgm with optional .wld world file)
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "sobel")]
        method: EdgeMethodArg,
        /// Magnitude threshold for non-maximum suppression
        #[arg(long)]
        nms_threshold: Option<f64>,
        /// Minimum Laplacian jump for a zero crossing
        #[arg(long)]
        min_slope: Option<f64>,
        /// Dilation half-width for edge linking
        #[arg(long)]
        dilate: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment a grid by thresholds, region growing, or edges.
    Segment {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<SegmentMethodArg>,
        /// Ascending cut values for the threshold method, e.g. `4,8`
        #[arg(long)]
        cuts: Option<String>,
        /// Seed CSV (`col,row` per line) for the region method
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Running-mean tolerance for the region method
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        nms_threshold: Option<f64>,
        #[arg(long)]
        dilate: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unsupervised k-means classification of one or more bands.
    Classify {
        /// Comma-separated band grids, e.g. `b1.asc,b2.asc`
        #[arg(long)]
        bands: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Fit on at most this many pixels (seeded uniform subsample)
        #[arg(long)]
        sample_cap: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the model JSON
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// General G high/low clustering statistic with optional permutation test.
    Gstat {
        /// Point CSV (`x,y,value` per line)
        #[arg(long)]
        points: Option<PathBuf>,
        /// Grid input; valid cells become the observations
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Cutoff distance
        #[arg(long)]
        d: Option<f64>,
        #[arg(long, value_enum, default_value = "binary")]
        scheme: SchemeArg,
        /// Number of permutations; omit to skip the significance test
        #[arg(long)]
        perms: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the JSON result here (it always prints to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-date change detection.
    Change {
        #[arg(long, value_enum)]
        method: Option<ChangeMethodName>,
        /// Date-A grid (diff/multiscale) or class grid (postclass/thematic)
        #[arg(long)]
        a: Option<PathBuf>,
        /// Date-B grid (diff/multiscale) or class grid (postclass/thematic)
        #[arg(long)]
        b: Option<PathBuf>,
        /// Date-A bands for pca/cva, comma-separated
        #[arg(long)]
        a_bands: Option<String>,
        /// Date-B bands for pca/cva, comma-separated
        #[arg(long)]
        b_bands: Option<String>,
        #[arg(long)]
        k_sigma: Option<f64>,
        /// Pyramid levels for the multiscale method
        #[arg(long)]
        levels: Option<usize>,
        /// Theme class ids for the thematic method, e.g. `1,3`
        #[arg(long)]
        theme: Option<String>,
        /// Change mask output; magnitude/direction/extra layers are written
        /// alongside with derived names
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class area report in hectares.
    Report {
        /// Class grid (integer labels, nodata for unclassified)
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Class-name CSV (`id,name` per line)
        #[arg(long)]
        names: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Also write the report here (it always prints to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify two dates, compare them, and report both areas.
    Pipeline {
        #[arg(long)]
        a_bands: Option<String>,
        #[arg(long)]
        b_bands: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        sample_cap: Option<usize>,
        #[arg(long)]
        names: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

const DEFAULT_SEED: u64 = 42;
const DEFAULT_K_SIGMA: f64 = 2.0;
const DEFAULT_MAX_ITER: usize = 100;
const DEFAULT_TOL: f64 = 1e-9;
const DEFAULT_SAMPLE_CAP: usize = 100_000;

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Some(stdout_text)) => {
            println!("{stdout_text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("terrascope: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

#[cfg(feature = "parallel")]
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("TERRASCOPE_THREADS") {
        if let Ok(threads) = raw.trim().parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool() {}

fn run(cli: Cli) -> Result<Option<String>, CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Edges {
            input,
            method,
            nms_threshold,
            min_slope,
            dilate,
            out,
        } => {
            run_edges(EdgesParams {
                input: require(cfg.path(input, "input"), "input")?,
                method: match method {
                    EdgeMethodArg::Sobel => EdgeMethod::Sobel,
                    EdgeMethodArg::Laplacian => EdgeMethod::Laplacian,
                },
                nms_threshold: cfg.real(nms_threshold, "nms-threshold")?.unwrap_or(0.0),
                min_slope: cfg.real(min_slope, "min-slope")?.unwrap_or(0.0),
                dilate: cfg.count(dilate, "dilate")?.unwrap_or(0),
                out: require(cfg.path(out, "out"), "out")?,
            })?;
            Ok(None)
        }
        Command::Segment {
            input,
            method,
            cuts,
            seeds,
            tolerance,
            nms_threshold,
            dilate,
            out,
        } => {
            let method = require(method, "method")?;
            let method = match method {
                SegmentMethodArg::Threshold => SegmentMethod::Threshold {
                    cuts: split_reals(&cfg.string(cuts, "cuts").unwrap_or_default(), "cuts")?,
                },
                SegmentMethodArg::Region => SegmentMethod::Region {
                    seeds: require(cfg.path(seeds, "seeds"), "seeds")?,
                    tolerance: require(cfg.real(tolerance, "tolerance")?, "tolerance")?,
                },
                SegmentMethodArg::Edge => SegmentMethod::Edge {
                    nms_threshold: cfg.real(nms_threshold, "nms-threshold")?.unwrap_or(0.0),
                    dilate: cfg.count(dilate, "dilate")?.unwrap_or(0),
                },
            };
            run_segment(SegmentParams {
                input: require(cfg.path(input, "input"), "input")?,
                method,
                out: require(cfg.path(out, "out"), "out")?,
            })?;
            Ok(None)
        }
        Command::Classify {
            bands,
            k,
            seed,
            max_iter,
            tol,
            sample_cap,
            out,
            model,
        } => {
            run_classify(ClassifyParams {
                bands: split_paths(&require(cfg.string(bands, "bands"), "bands")?),
                k: require(cfg.count(k, "k")?, "k")?,
                seed: cfg.seed(seed, "seed")?.unwrap_or(DEFAULT_SEED),
                max_iter: cfg.count(max_iter, "max-iter")?.unwrap_or(DEFAULT_MAX_ITER),
                tol: cfg.real(tol, "tol")?.unwrap_or(DEFAULT_TOL),
                sample_cap: cfg
                    .count(sample_cap, "sample-cap")?
                    .unwrap_or(DEFAULT_SAMPLE_CAP),
                out: require(cfg.path(out, "out"), "out")?,
                model_out: cfg.path(model, "model"),
            })?;
            Ok(None)
        }
        Command::Gstat {
            points,
            grid,
            d,
            scheme,
            perms,
            seed,
            out,
        } => {
            let source = match (cfg.path(points, "points"), cfg.path(grid, "grid")) {
                (Some(points), None) => GstatSource::Points(points),
                (None, Some(grid)) => GstatSource::Grid(grid),
                (Some(_), Some(_)) => {
                    return Err(CliError::input(
                        "give either --points or --grid, not both".to_string(),
                    ))
                }
                (None, None) => {
                    return Err(CliError::input(
                        "missing required --points or --grid".to_string(),
                    ))
                }
            };
            let json = run_gstat(GstatParams {
                source,
                d: require(cfg.real(d, "d")?, "d")?,
                scheme: match scheme {
                    SchemeArg::Binary => WeightScheme::Binary,
                    SchemeArg::InverseDistance => WeightScheme::InverseDistance,
                },
                perms: cfg.count(perms, "perms")?,
                seed: cfg.seed(seed, "seed")?.unwrap_or(DEFAULT_SEED),
                out: cfg.path(out, "out"),
            })?;
            Ok(Some(json))
        }
        Command::Change {
            method,
            a,
            b,
            a_bands,
            b_bands,
            k_sigma,
            levels,
            theme,
            out,
        } => {
            let method_name = require(method, "method")?;
            let a = cfg.path(a, "a");
            let b = cfg.path(b, "b");
            let a_bands = cfg.string(a_bands, "a-bands");
            let b_bands = cfg.string(b_bands, "b-bands");

            let pair = |a: Option<PathBuf>, b: Option<PathBuf>| -> Result<(PathBuf, PathBuf), CliError> {
                Ok((require(a, "a")?, require(b, "b")?))
            };
            let stacks = |a: Option<String>, b: Option<String>| -> Result<(Vec<PathBuf>, Vec<PathBuf>), CliError> {
                Ok((
                    split_paths(&require(a, "a-bands")?),
                    split_paths(&require(b, "b-bands")?),
                ))
            };

            let (method, inputs) = match method_name {
                ChangeMethodName::Diff => {
                    let (a, b) = pair(a, b)?;
                    (ChangeMethodArg::Diff, ChangeInputs::Grids { a, b })
                }
                ChangeMethodName::Multiscale => {
                    let (a, b) = pair(a, b)?;
                    (
                        ChangeMethodArg::Multiscale {
                            levels: cfg.count(levels, "levels")?.unwrap_or(3),
                        },
                        ChangeInputs::Grids { a, b },
                    )
                }
                ChangeMethodName::Pca => {
                    let (a, b) = stacks(a_bands, b_bands)?;
                    (ChangeMethodArg::Pca, ChangeInputs::Stacks { a, b })
                }
                ChangeMethodName::Cva => {
                    let (a, b) = stacks(a_bands, b_bands)?;
                    (ChangeMethodArg::Cva, ChangeInputs::Stacks { a, b })
                }
                ChangeMethodName::Postclass => {
                    let (a, b) = pair(a, b)?;
                    (ChangeMethodArg::Postclass, ChangeInputs::Classes { a, b })
                }
                ChangeMethodName::Thematic => {
                    let (a, b) = pair(a, b)?;
                    let theme = split_ids(&require(cfg.string(theme, "theme"), "theme")?, "theme")?;
                    (ChangeMethodArg::Thematic { theme }, ChangeInputs::Classes { a, b })
                }
            };
            run_change(ChangeParams {
                method,
                inputs,
                k_sigma: cfg.real(k_sigma, "k-sigma")?.unwrap_or(DEFAULT_K_SIGMA),
                out: require(cfg.path(out, "out"), "out")?,
            })?;
            Ok(None)
        }
        Command::Report {
            classes,
            names,
            format,
            out,
        } => {
            let text = run_report(ReportParams {
                classes: require(cfg.path(classes, "classes"), "classes")?,
                names: cfg.path(names, "names"),
                format: match format {
                    FormatArg::Csv => ReportFormat::Csv,
                    FormatArg::Json => ReportFormat::Json,
                },
                out: cfg.path(out, "out"),
            })?;
            Ok(Some(text))
        }
        Command::Pipeline {
            a_bands,
            b_bands,
            k,
            seed,
            max_iter,
            tol,
            sample_cap,
            names,
            format,
            out_dir,
        } => {
            run_pipeline(PipelineParams {
                a_bands: split_paths(&require(cfg.string(a_bands, "a-bands"), "a-bands")?),
                b_bands: split_paths(&require(cfg.string(b_bands, "b-bands"), "b-bands")?),
                k: require(cfg.count(k, "k")?, "k")?,
                seed: cfg.seed(seed, "seed")?.unwrap_or(DEFAULT_SEED),
                max_iter: cfg.count(max_iter, "max-iter")?.unwrap_or(DEFAULT_MAX_ITER),
                tol: cfg.real(tol, "tol")?.unwrap_or(DEFAULT_TOL),
                sample_cap: cfg
                    .count(sample_cap, "sample-cap")?
                    .unwrap_or(DEFAULT_SAMPLE_CAP),
                names: cfg.path(names, "names"),
                format: match format {
                    FormatArg::Csv => ReportFormat::Csv,
                    FormatArg::Json => ReportFormat::Json,
                },
                out_dir: require(cfg.path(out_dir, "out-dir"), "out-dir")?,
            })?;
            Ok(None)
        }
    }
}
