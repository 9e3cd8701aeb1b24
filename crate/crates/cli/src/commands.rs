//! One function per subcommand, plus the shared load/write plumbing.
//!
//! Outputs are staged to temp files in the destination directory and only
//! renamed into place once every artifact has been produced, so a failed
//! run never leaves a truncated or partial grid behind.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use terrascope_core::change::{
    change_vector_analysis, image_difference, multiscale_fuse, pca_change, postclass_compare,
    thematic_change, ChangeResult,
};
use terrascope_core::cluster::{classify_stack, ClassMap};
use terrascope_core::edge::{laplacian_zero_crossings, link_edges, nonmax_suppress, sobel_gradient_field};
use terrascope_core::gstat::{g_permutation_test, general_g, raster_observations, SpatialWeights, WeightScheme};
use terrascope_core::io::{load_ascii_grid, load_pgm, read_world_file, render_ascii_grid};
use terrascope_core::raster::{stack_bands, BandStack, RasterGrid};
use terrascope_core::report::{class_areas, read_names_csv};
use terrascope_core::segment::{edge_based_segment, read_seeds, region_grow, threshold_segment};

use crate::CliError;

// --- shared plumbing ---

fn in_file<T>(path: &Path, result: terrascope_core::Result<T>) -> Result<T, CliError> {
    result.map_err(|e| CliError::from_core(e).contextualize(path))
}

/// Loads a grid by extension: `.pgm` as PGM (with an optional world file
/// alongside), anything else as an ASCII grid.
pub fn load_grid(path: &Path) -> Result<RasterGrid, CliError> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if !is_pgm {
        return in_file(path, load_ascii_grid(path));
    }
    let grid = in_file(path, load_pgm(path))?;
    let world = path.with_extension("wld");
    if world.exists() {
        let geo = in_file(&world, read_world_file(&world))?;
        return Ok(grid.with_geo(geo));
    }
    Ok(grid)
}

pub fn load_stack(paths: &[PathBuf]) -> Result<BandStack, CliError> {
    let mut bands = Vec::with_capacity(paths.len());
    for path in paths {
        bands.push(load_grid(path)?);
    }
    stack_bands(bands).map_err(CliError::from_core)
}

pub fn load_class_map(path: &Path) -> Result<ClassMap, CliError> {
    let grid = load_grid(path)?;
    in_file(path, ClassMap::from_grid(&grid))
}

/// Comma-separated paths: `b1.asc,b2.asc`.
pub fn split_paths(list: &str) -> Vec<PathBuf> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .collect()
}

pub fn split_reals(list: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::input(format!("--{flag}: not a number: `{s}`")))
        })
        .collect()
}

pub fn split_ids(list: &str, flag: &str) -> Result<BTreeSet<u32>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|_| CliError::input(format!("--{flag}: not a class id: `{s}`")))
        })
        .collect()
}

/// `mask.asc` + `_magnitude` -> `mask_magnitude.asc`.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match ext {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

/// Stages every output, then renames them all into place.
pub fn write_outputs(outputs: Vec<(PathBuf, String)>) -> Result<(), CliError> {
    let mut staged = Vec::with_capacity(outputs.len());
    for (path, content) in outputs {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)
            .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        tmp.write_all(content.as_bytes())
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(&path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn grid_text(grid: &RasterGrid) -> Result<String, CliError> {
    render_ascii_grid(grid).map_err(CliError::from_core)
}

// --- subcommands ---

pub enum EdgeMethod {
    Sobel,
    Laplacian,
}

pub struct EdgesParams {
    pub input: PathBuf,
    pub method: EdgeMethod,
    pub nms_threshold: f64,
    pub min_slope: f64,
    pub dilate: usize,
    pub out: PathBuf,
}

pub fn run_edges(p: EdgesParams) -> Result<(), CliError> {
    let grid = load_grid(&p.input)?;
    let mask = match p.method {
        EdgeMethod::Sobel => {
            let field = in_file(&p.input, sobel_gradient_field(&grid))?;
            nonmax_suppress(&field, p.nms_threshold)
        }
        EdgeMethod::Laplacian => in_file(&p.input, laplacian_zero_crossings(&grid, p.min_slope))?,
    };
    let linked = link_edges(&mask, p.dilate);
    write_outputs(vec![(p.out, grid_text(&linked.to_grid())?)])
}

pub enum SegmentMethod {
    Threshold { cuts: Vec<f64> },
    Region { seeds: PathBuf, tolerance: f64 },
    Edge { nms_threshold: f64, dilate: usize },
}

pub struct SegmentParams {
    pub input: PathBuf,
    pub method: SegmentMethod,
    pub out: PathBuf,
}

pub fn run_segment(p: SegmentParams) -> Result<(), CliError> {
    let grid = load_grid(&p.input)?;
    let seg = match p.method {
        SegmentMethod::Threshold { cuts } => in_file(&p.input, threshold_segment(&grid, &cuts))?,
        SegmentMethod::Region { seeds, tolerance } => {
            let seed_list = in_file(&seeds, read_seeds(&seeds))?;
            in_file(&p.input, region_grow(&grid, &seed_list, tolerance))?
        }
        SegmentMethod::Edge {
            nms_threshold,
            dilate,
        } => in_file(&p.input, edge_based_segment(&grid, nms_threshold, dilate))?,
    };
    write_outputs(vec![(p.out, grid_text(&seg.to_grid())?)])
}

pub struct ClassifyParams {
    pub bands: Vec<PathBuf>,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub sample_cap: usize,
    pub out: PathBuf,
    pub model_out: Option<PathBuf>,
}

pub fn run_classify(p: ClassifyParams) -> Result<(), CliError> {
    let stack = load_stack(&p.bands)?;
    let (map, model) =
        classify_stack(&stack, p.k, p.seed, p.max_iter, p.tol, p.sample_cap).map_err(CliError::from_core)?;
    let mut outputs = vec![(p.out, grid_text(&map.to_grid())?)];
    if let Some(model_path) = p.model_out {
        outputs.push((model_path, model.to_json()));
    }
    write_outputs(outputs)
}

pub enum GstatSource {
    Points(PathBuf),
    Grid(PathBuf),
}

pub struct GstatParams {
    pub source: GstatSource,
    pub d: f64,
    pub scheme: WeightScheme,
    pub perms: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn run_gstat(p: GstatParams) -> Result<String, CliError> {
    let (weights, values) = match &p.source {
        GstatSource::Points(path) => {
            let (points, values) =
                in_file(path, terrascope_core::gstat::read_points_csv(path))?;
            let weights =
                in_file(path, SpatialWeights::from_points(&points, p.d, p.scheme))?;
            (weights, values)
        }
        GstatSource::Grid(path) => {
            let grid = load_grid(path)?;
            let weights = in_file(path, SpatialWeights::from_raster(&grid, p.d, p.scheme))?;
            let values = raster_observations(&grid).into_iter().map(|(_, v)| v).collect();
            (weights, values)
        }
    };
    let result = match p.perms {
        Some(n_perm) => g_permutation_test(&values, &weights, n_perm, p.seed),
        None => general_g(&values, &weights),
    }
    .map_err(CliError::from_core)?;

    let json = result.to_json();
    if let Some(out) = p.out {
        write_outputs(vec![(out, json.clone())])?;
    }
    Ok(json)
}

pub enum ChangeInputs {
    Grids { a: PathBuf, b: PathBuf },
    Stacks { a: Vec<PathBuf>, b: Vec<PathBuf> },
    Classes { a: PathBuf, b: PathBuf },
}

pub enum ChangeMethodArg {
    Diff,
    Pca,
    Cva,
    Postclass,
    Thematic { theme: BTreeSet<u32> },
    Multiscale { levels: usize },
}

pub struct ChangeParams {
    pub method: ChangeMethodArg,
    pub inputs: ChangeInputs,
    pub k_sigma: f64,
    pub out: PathBuf,
}

fn change_outputs(result: &ChangeResult, out: &Path) -> Result<Vec<(PathBuf, String)>, CliError> {
    let mut outputs = vec![(out.to_path_buf(), grid_text(&result.mask.to_grid())?)];
    if let Some(mag) = &result.magnitude {
        outputs.push((with_suffix(out, "_magnitude"), grid_text(mag)?));
    }
    if let Some(dir) = &result.direction {
        outputs.push((with_suffix(out, "_direction"), grid_text(dir)?));
    }
    for (level, mask) in result.level_masks.iter().enumerate() {
        if level == 0 {
            continue; // level 0 equals the plain per-pixel mask
        }
        outputs.push((
            with_suffix(out, &format!("_level{level}")),
            grid_text(&mask.to_grid())?,
        ));
    }
    Ok(outputs)
}

pub fn run_change(p: ChangeParams) -> Result<(), CliError> {
    let mut outputs: Vec<(PathBuf, String)>;
    match (&p.method, &p.inputs) {
        (ChangeMethodArg::Diff, ChangeInputs::Grids { a, b }) => {
            let result = image_difference(&load_grid(a)?, &load_grid(b)?, p.k_sigma)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
        }
        (ChangeMethodArg::Multiscale { levels }, ChangeInputs::Grids { a, b }) => {
            let result = multiscale_fuse(&load_grid(a)?, &load_grid(b)?, *levels, p.k_sigma)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
        }
        (ChangeMethodArg::Pca, ChangeInputs::Stacks { a, b }) => {
            let (result, components) = pca_change(&load_stack(a)?, &load_stack(b)?, p.k_sigma)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
            outputs.push((with_suffix(&p.out, "_pca").with_extension("json"), components.to_json()));
        }
        (ChangeMethodArg::Cva, ChangeInputs::Stacks { a, b }) => {
            let result = change_vector_analysis(&load_stack(a)?, &load_stack(b)?, p.k_sigma)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
        }
        (ChangeMethodArg::Postclass, ChangeInputs::Classes { a, b }) => {
            let (matrix, result) = postclass_compare(&load_class_map(a)?, &load_class_map(b)?)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
            outputs.push((
                with_suffix(&p.out, "_transitions").with_extension("csv"),
                matrix.to_csv(),
            ));
        }
        (ChangeMethodArg::Thematic { theme }, ChangeInputs::Classes { a, b }) => {
            let result = thematic_change(&load_class_map(a)?, &load_class_map(b)?, theme)
                .map_err(CliError::from_core)?;
            outputs = change_outputs(&result, &p.out)?;
        }
        _ => {
            return Err(CliError::input(
                "this change method and input combination does not match; \
                 diff/multiscale take --a/--b grids, pca/cva take --a-bands/--b-bands, \
                 postclass/thematic take --a/--b class grids"
                    .to_string(),
            ))
        }
    }
    write_outputs(outputs)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub struct ReportParams {
    pub classes: PathBuf,
    pub names: Option<PathBuf>,
    pub format: ReportFormat,
    pub out: Option<PathBuf>,
}

pub fn run_report(p: ReportParams) -> Result<String, CliError> {
    let grid = load_grid(&p.classes)?;
    let geo = grid.geo().ok_or_else(|| {
        CliError::input(format!(
            "{}: class grid carries no georeferencing; cannot compute areas",
            p.classes.display()
        ))
    })?;
    let map = in_file(&p.classes, ClassMap::from_grid(&grid))?;
    let names = match &p.names {
        Some(path) => Some(in_file(path, read_names_csv(path))?),
        None => None,
    };
    let report = class_areas(&map, &geo, names.as_ref()).map_err(CliError::from_core)?;
    let text = match p.format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => report.to_json(),
    };
    if let Some(out) = p.out {
        write_outputs(vec![(out, text.clone())])?;
    }
    Ok(text)
}

pub struct PipelineParams {
    pub a_bands: Vec<PathBuf>,
    pub b_bands: Vec<PathBuf>,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub sample_cap: usize,
    pub names: Option<PathBuf>,
    pub format: ReportFormat,
    pub out_dir: PathBuf,
}

/// classify both dates, compare the class maps, report both areas.
pub fn run_pipeline(p: PipelineParams) -> Result<(), CliError> {
    std::fs::create_dir_all(&p.out_dir)
        .map_err(|e| CliError::input(format!("{}: {e}", p.out_dir.display())))?;

    let stack_a = load_stack(&p.a_bands)?;
    let stack_b = load_stack(&p.b_bands)?;
    let (map_a, model_a) =
        classify_stack(&stack_a, p.k, p.seed, p.max_iter, p.tol, p.sample_cap)
            .map_err(CliError::from_core)?;
    let (map_b, model_b) =
        classify_stack(&stack_b, p.k, p.seed, p.max_iter, p.tol, p.sample_cap)
            .map_err(CliError::from_core)?;

    let (matrix, change) = postclass_compare(&map_a, &map_b).map_err(CliError::from_core)?;

    let names = match &p.names {
        Some(path) => Some(in_file(path, read_names_csv(path))?),
        None => None,
    };
    let geo_a = stack_a.geo().ok_or_else(|| {
        CliError::input("date A bands carry no georeferencing; cannot compute areas".to_string())
    })?;
    let geo_b = stack_b.geo().ok_or_else(|| {
        CliError::input("date B bands carry no georeferencing; cannot compute areas".to_string())
    })?;
    let report_a = class_areas(&map_a, &geo_a, names.as_ref()).map_err(CliError::from_core)?;
    let report_b = class_areas(&map_b, &geo_b, names.as_ref()).map_err(CliError::from_core)?;

    let (render, report_ext): (fn(&terrascope_core::report::AreaReport) -> String, &str) =
        match p.format {
            ReportFormat::Csv => (|r| r.to_csv(), "csv"),
            ReportFormat::Json => (|r| r.to_json(), "json"),
        };

    let at = |name: &str| p.out_dir.join(name);
    write_outputs(vec![
        (at("classes_a.asc"), grid_text(&map_a.to_grid())?),
        (at("classes_b.asc"), grid_text(&map_b.to_grid())?),
        (at("model_a.json"), model_a.to_json()),
        (at("model_b.json"), model_b.to_json()),
        (at("transitions.csv"), matrix.to_csv()),
        (at("change_mask.asc"), grid_text(&change.mask.to_grid())?),
        (at(&format!("report_a.{report_ext}")), render(&report_a)),
        (at(&format!("report_b.{report_ext}")), render(&report_b)),
    ])
}
