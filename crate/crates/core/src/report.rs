//! Per-class area tabulation in hectares and deterministic CSV/JSON
//! rendering of reports.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::cluster::ClassMap;
use crate::error::{Error, Result};
use crate::raster::GeoTransform;

/// One tabulated class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaRow {
    pub class_id: u32,
    pub name: Option<String>,
    pub pixels: u64,
    pub hectares: f64,
}

/// Per-class areas for a class map; one row per class present, ordered by
/// class id. `hectares` is `pixels * cell_area_m2 / 10000` per row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaReport {
    pub rows: Vec<AreaRow>,
    pub total_hectares: f64,
    pub cell_area_m2: f64,
}

impl AreaReport {
    pub fn total_pixels(&self) -> u64 {
        self.rows.iter().map(|r| r.pixels).sum()
    }

    /// CSV with columns `category,name,pixels,hectares` and a final Total
    /// row. Byte-stable for equal inputs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,name,pixels,hectares\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.class_id,
                row.name.as_deref().unwrap_or(""),
                row.pixels,
                row.hectares
            ));
        }
        out.push_str(&format!(
            "Total,,{},{}\n",
            self.total_pixels(),
            self.total_hectares
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Tabulates class areas using the cell footprint `|a*e - b*d|` of `geo`
/// (meters per axis, so hectares = m^2 / 10000). Nodata pixels are skipped.
pub fn class_areas(
    map: &ClassMap,
    geo: &GeoTransform,
    names: Option<&BTreeMap<u32, String>>,
) -> Result<AreaReport> {
    let cell_area_m2 = geo.cell_area();
    if cell_area_m2 == 0.0 {
        return Err(Error::DegenerateTransform);
    }

    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for &label in map.labels() {
        if label > 0 {
            *counts.entry(label).or_insert(0) += 1;
        }
    }

    let name_of = |id: u32| -> Option<String> {
        if let Some(table) = names {
            return table.get(&id).cloned();
        }
        map.names()
            .and_then(|ns| ns.get(id as usize - 1))
            .cloned()
    };

    let rows: Vec<AreaRow> = counts
        .into_iter()
        .map(|(class_id, pixels)| AreaRow {
            class_id,
            name: name_of(class_id),
            pixels,
            hectares: pixels as f64 * cell_area_m2 / 10_000.0,
        })
        .collect();
    let total_hectares = rows.iter().fold(0.0, |acc, r| acc + r.hectares);

    Ok(AreaReport {
        rows,
        total_hectares,
        cell_area_m2,
    })
}

/// Reads a class-name table from CSV lines `id,name`.
pub fn read_names_csv(path: impl AsRef<std::path::Path>) -> Result<BTreeMap<u32, String>> {
    let text = std::fs::read_to_string(path)?;
    parse_names_csv(&text)
}

fn parse_names_csv(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut names = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (id, name) = line.split_once(',').ok_or(Error::WrongFieldCount {
            expected: 2,
            found: 1,
            line: i + 1,
        })?;
        let id: u32 = id.trim().parse().map_err(|_| Error::NonNumericLine {
            token: id.trim().to_string(),
            line: i + 1,
        })?;
        names.insert(id, name.trim().to_string());
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// A class map with the given per-class pixel counts laid out row-major.
    fn map_with_counts(counts: &[(u32, u64)], cols: usize) -> ClassMap {
        let mut labels = Vec::new();
        for &(class, count) in counts {
            labels.extend(std::iter::repeat_n(class, count as usize));
        }
        while labels.len() % cols != 0 {
            labels.push(0);
        }
        let rows = labels.len() / cols;
        let k = counts.iter().map(|&(c, _)| c).max().unwrap_or(0) as usize;
        ClassMap::new(rows, cols, labels, k, None)
    }

    fn land_use_names() -> BTreeMap<u32, String> {
        [
            (1, "Water"),
            (2, "Aquatic Vegetation"),
            (3, "Urban/Edge"),
            (4, "Grassland"),
            (5, "Bare Soil"),
            (6, "Forest"),
        ]
        .into_iter()
        .map(|(id, name)| (id, name.to_string()))
        .collect()
    }

    // 100 m cells make every pixel exactly one hectare, reproducing the
    // reference six-class table with a 1064 ha total.
    #[test]
    fn hectare_table_with_hundred_meter_cells() {
        let counts = [(1u32, 135u64), (2, 210), (3, 90), (4, 190), (5, 169), (6, 270)];
        let map = map_with_counts(&counts, 56);
        let geo = GeoTransform::north_up(100.0, 50.0, 50.0);
        let report = class_areas(&map, &geo, Some(&land_use_names())).unwrap();

        assert_eq!(report.cell_area_m2, 10_000.0);
        let hectares: Vec<f64> = report.rows.iter().map(|r| r.hectares).collect();
        assert_eq!(hectares, vec![135.0, 210.0, 90.0, 190.0, 169.0, 270.0]);
        assert_eq!(report.total_hectares, 1064.0);
        assert_eq!(report.rows[0].name.as_deref(), Some("Water"));
        assert_eq!(report.rows[5].name.as_deref(), Some("Forest"));

        let csv = report.to_csv();
        assert!(csv.ends_with("Total,,1064,1064\n"));
        assert!(csv.contains("2,Aquatic Vegetation,210,210\n"));
    }

    #[test]
    fn empty_map_reports_zero_rows() {
        let map = ClassMap::new(2, 2, vec![0, 0, 0, 0], 0, None);
        let geo = GeoTransform::north_up(100.0, 0.0, 0.0);
        let report = class_areas(&map, &geo, None).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.total_hectares, 0.0);
        assert_eq!(report.to_csv(), "category,name,pixels,hectares\nTotal,,0,0\n");
    }

    #[test]
    fn ten_meter_cells_scale_by_hundredth() {
        let map = map_with_counts(&[(1, 250)], 25);
        let geo = GeoTransform::north_up(10.0, 5.0, 5.0);
        let report = class_areas(&map, &geo, None).unwrap();
        assert_relative_eq!(report.rows[0].hectares, 2.5, epsilon = 1e-12);
        assert_relative_eq!(report.total_hectares, 2.5, max_relative = 1e-9);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let map = map_with_counts(&[(1, 4)], 2);
        let geo = GeoTransform::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            class_areas(&map, &geo, None),
            Err(Error::DegenerateTransform)
        ));
    }

    #[test]
    fn pixel_conservation() {
        let map = ClassMap::new(3, 3, vec![1, 2, 0, 2, 2, 1, 0, 3, 3], 3, None);
        let geo = GeoTransform::north_up(30.0, 0.0, 0.0);
        let report = class_areas(&map, &geo, None).unwrap();
        let valid = map.labels().iter().filter(|&&l| l > 0).count() as u64;
        assert_eq!(report.total_pixels(), valid);
        let row_sum: f64 = report.rows.iter().map(|r| r.hectares).sum();
        assert_relative_eq!(report.total_hectares, row_sum, max_relative = 1e-9);
    }

    #[test]
    fn rendering_is_deterministic() {
        let map = map_with_counts(&[(1, 3), (2, 5)], 4);
        let geo = GeoTransform::north_up(100.0, 0.0, 0.0);
        let report = class_areas(&map, &geo, None).unwrap();
        assert_eq!(report.to_csv(), report.to_csv());
        assert_eq!(report.to_json(), report.to_json());
    }

    #[test]
    fn names_csv_parses_table() {
        let names = parse_names_csv("1,Water\n2, Forest # trees\n").unwrap();
        assert_eq!(names.get(&1).map(String::as_str), Some("Water"));
        assert_eq!(names.get(&2).map(String::as_str), Some("Forest"));
        assert!(parse_names_csv("x,Water\n").is_err());
    }
}
