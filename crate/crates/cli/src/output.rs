//! CSV artifacts and their provenance header.
//!
//! Every file starts with a block of `#` comment lines carrying the artifact
//! version, the SHA-256 of the resolved config and the config itself, then a
//! header row and LF-terminated data rows. Floats are written in shortest
//! round-trip form; missing values are empty fields.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tipwarn::grid::SpatialGrid;
use tipwarn::indicators::{IndicatorRow, IndicatorSeries, QuasiStaticLinear, QuasiStaticNonlinear, Snapshot};

use crate::config::{ScenarioConfig, ARTIFACT_VERSION};
use crate::CliError;

pub const SERIES_COLUMNS: [&str; 14] = [
    "t",
    "variance",
    "lag1",
    "lag1_per_unit_time",
    "decay_rate",
    "escape_rate",
    "survival",
    "cumulative_escape",
    "kramers_rate",
    "qs_lin_kappa",
    "qs_lin_a",
    "qs_lin_v",
    "qs_nl_kappa",
    "qs_nl_v",
];

/// Comment block identifying the config behind an artifact, followed by
/// `extra` key/value lines.
pub fn header(cfg: &ScenarioConfig, extra: &[(&str, String)]) -> String {
    let mut out = format!(
        "# {ARTIFACT_VERSION}\n# config_hash: {}\n# config: {}\n",
        cfg.hash(),
        cfg.canonical_json()
    );
    for (k, v) in extra {
        writeln!(out, "# {k}: {v}").unwrap();
    }
    out
}

/// Value of a `# key: value` header line.
pub fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .map_while(|l| l.strip_prefix('#'))
        .find_map(|l| l.trim_start().strip_prefix(key)?.strip_prefix(':'))
        .map(str::trim)
}

/// Writes `contents` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot write in {}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(&path)
        .map_err(|e| CliError::Io(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(path)
}

pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Metadata lines needed to rebuild a series from its CSV.
pub fn series_meta(series: &IndicatorSeries) -> Vec<(&'static str, String)> {
    vec![
        ("dt", fmt(series.dt)),
        ("final_survival", fmt(series.final_survival)),
    ]
}

/// Header row and data rows of an indicator series.
pub fn series_table(series: &IndicatorSeries) -> String {
    let mut out = SERIES_COLUMNS.join(",");
    out.push('\n');
    for r in &series.rows {
        let lin = r.qs_linear;
        let nl = r.qs_nonlinear;
        let fields = [
            fmt(r.t),
            fmt(r.variance),
            fmt_opt(r.lag1),
            fmt_opt(r.lag1_per_unit_time),
            fmt_opt(r.decay_rate),
            fmt_opt(r.escape_rate),
            fmt_opt(r.survival),
            fmt(r.cumulative_escape),
            fmt_opt(r.kramers_rate),
            fmt_opt(lin.map(|q| q.kappa)),
            fmt_opt(lin.map(|q| q.a)),
            fmt_opt(lin.map(|q| q.v)),
            fmt_opt(nl.map(|q| q.kappa)),
            fmt_opt(nl.map(|q| q.v)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn series_csv(cfg: &ScenarioConfig, series: &IndicatorSeries, extra: &[(&str, String)]) -> String {
    let mut meta = series_meta(series);
    meta.extend(extra.iter().map(|(k, v)| (*k, v.clone())));
    header(cfg, &meta) + &series_table(series)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Rebuilds a series (without snapshots) from a CSV written by [`series_csv`].
/// The Kramers cumulative is recomputed from the rates.
pub fn parse_series(text: &str) -> Result<IndicatorSeries, CliError> {
    let num = |key: &str| -> Result<f64, CliError> {
        header_value(text, key)
            .ok_or_else(|| bad(format!("missing `{key}` header line")))?
            .parse()
            .map_err(|e| bad(format!("bad `{key}` header: {e}")))
    };
    let dt = num("dt")?;
    let final_survival = num("final_survival")?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(SERIES_COLUMNS.join(",").as_str()) {
        return Err(bad("series CSV header row does not match the column contract"));
    }
    let mut rows = Vec::new();
    let mut kramers_product: Option<f64> = None;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != SERIES_COLUMNS.len() {
            return Err(bad(format!("row {i}: {} fields", fields.len())));
        }
        let opt = |k: usize| -> Result<Option<f64>, CliError> {
            if fields[k].is_empty() {
                Ok(None)
            } else {
                fields[k]
                    .parse()
                    .map(Some)
                    .map_err(|e| bad(format!("row {i}, {}: {e}", SERIES_COLUMNS[k])))
            }
        };
        let req = |k: usize| opt(k)?.ok_or_else(|| bad(format!("row {i}: empty {}", SERIES_COLUMNS[k])));
        let kramers_rate = opt(8)?;
        kramers_product = match (i, kramers_product, kramers_rate) {
            (0, _, Some(_)) => Some(1.0),
            (_, Some(p), Some(r)) if i > 0 => Some(p * (1.0 - r * dt)),
            _ => None,
        };
        let qs_linear = match (opt(9)?, opt(10)?, opt(11)?) {
            (Some(kappa), Some(a), Some(v)) => Some(QuasiStaticLinear { kappa, a, v }),
            (None, None, None) => None,
            _ => return Err(bad(format!("row {i}: partial linear reference"))),
        };
        let qs_nonlinear = match (opt(12)?, opt(13)?) {
            (Some(kappa), Some(v)) => Some(QuasiStaticNonlinear { kappa, v }),
            (None, None) => None,
            _ => return Err(bad(format!("row {i}: partial nonlinear reference"))),
        };
        rows.push(IndicatorRow {
            t: req(0)?,
            variance: req(1)?,
            lag1: opt(2)?,
            lag1_per_unit_time: opt(3)?,
            decay_rate: opt(4)?,
            escape_rate: opt(5)?,
            survival: opt(6)?,
            cumulative_escape: req(7)?,
            kramers_rate,
            kramers_cumulative: kramers_product.map(|p| 1.0 - p),
            qs_linear,
            qs_nonlinear,
        });
    }
    if rows.is_empty() {
        return Err(bad("series CSV has no rows"));
    }
    Ok(IndicatorSeries {
        dt,
        rows,
        final_survival,
        snapshots: Vec::new(),
    })
}

/// Density snapshots as columns `p@t`, followed by `analytic@t` columns when
/// an exact solution is supplied.
pub fn density_table(
    g: &SpatialGrid,
    snapshots: &[Snapshot],
    analytic: Option<&dyn Fn(f64, f64) -> f64>,
) -> String {
    let mut cols = vec!["x".to_string()];
    cols.extend(snapshots.iter().map(|s| format!("p@{}", fmt(s.t))));
    if analytic.is_some() {
        cols.extend(snapshots.iter().map(|s| format!("analytic@{}", fmt(s.t))));
    }
    let mut out = cols.join(",") + "\n";
    for k in 0..g.len() {
        let x = g.node(k);
        let mut row = vec![fmt(x)];
        row.extend(snapshots.iter().map(|s| fmt(s.values[k])));
        if let Some(f) = analytic {
            row.extend(snapshots.iter().map(|s| fmt(f(x, s.t))));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
