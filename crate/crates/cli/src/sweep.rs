//! Parameter sweeps: one exact/maxent comparison record per grid point,
//! embedded per-point errors, deterministic CSV emission.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use entroq::{
    auto_truncate, entropy_closed_form, entropy_direct, kl_divergence, maxent_distribution,
    simulate, solve_stationary, JointDistribution, Moments, Params, SimConfig, SolveOptions,
    SparseGenerator, TruncateOptions,
};

use crate::format::sig12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("grid must be strictly increasing (violation at index {index})")]
    GridNotIncreasing { index: usize },
    #[error("swept parameter and family parameter must differ")]
    SweptEqualsFamily,
    #[error("{field:?} value {value} is not a valid block capacity")]
    BadCapacity { field: ParamField, value: f64 },
    #[error("invalid base parameters: {0}")]
    BadParams(String),
    #[error("unknown parameter field {0:?} (expected lambda, mu1, mu2, or b)")]
    UnknownField(String),
}

/// Which parameter a sweep axis drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamField {
    Lambda,
    Mu1,
    Mu2,
    B,
}

impl std::str::FromStr for ParamField {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(ParamField::Lambda),
            "mu1" => Ok(ParamField::Mu1),
            "mu2" => Ok(ParamField::Mu2),
            "b" => Ok(ParamField::B),
            other => Err(SpecError::UnknownField(other.to_string())),
        }
    }
}

fn apply_field(base: Params, field: ParamField, value: f64) -> Result<Params, SpecError> {
    let mut p = base;
    match field {
        ParamField::Lambda => p.lambda = value,
        ParamField::Mu1 => p.mu1 = value,
        ParamField::Mu2 => p.mu2 = value,
        ParamField::B => {
            if value < 1.0 || value.fract() != 0.0 || value > u32::MAX as f64 {
                return Err(SpecError::BadCapacity { field, value });
            }
            p.b = value as u32;
        }
    }
    Ok(p)
}

/// Externally supplied moment pair for one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub family: f64,
    pub point: f64,
    #[serde(rename = "I")]
    pub block_mean: f64,
    #[serde(rename = "J")]
    pub pool_mean: f64,
}

/// Where each point's `(I, J)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MomentSource {
    /// Truncated stationary solve (full record including entropy gap and KL).
    Exact,
    /// Discrete-event simulation with the given horizon; the seed is combined
    /// with the point index so runs stay independent but reproducible.
    Simulator { horizon: f64, seed: u64 },
    /// User-supplied measurements, matched on (family value, grid value).
    Table(Vec<MomentRow>),
}

/// Numeric knobs shared by the solve-backed paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverKnobs {
    pub tail_eps: f64,
    pub residual_tol: f64,
    pub max_level: u32,
    /// Fixed truncation level instead of the automatic search.
    pub pool_cap: Option<u32>,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        SolverKnobs { tail_eps: 1e-10, residual_tol: 1e-10, max_level: 8192, pool_cap: None }
    }
}

impl SolverKnobs {
    pub fn truncate_options(&self) -> TruncateOptions {
        TruncateOptions {
            tail_eps: self.tail_eps,
            start_level: None,
            max_level: self.max_level,
            solve: SolveOptions { residual_tol: self.residual_tol, ..SolveOptions::default() },
        }
    }
}

/// A sweep: one family parameter taking a few values, one swept parameter on
/// a grid, everything else fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: Params,
    pub swept: ParamField,
    pub grid: Vec<f64>,
    pub family: ParamField,
    pub family_values: Vec<f64>,
    pub source: MomentSource,
    #[serde(default)]
    pub knobs: SolverKnobs,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.swept == self.family {
            return Err(SpecError::SweptEqualsFamily);
        }
        for values in [&self.grid, &self.family_values] {
            for (k, pair) in values.windows(2).enumerate() {
                if !(pair[1] > pair[0]) {
                    return Err(SpecError::GridNotIncreasing { index: k });
                }
            }
        }
        // Surface bad capacity values eagerly rather than per point.
        for &v in &self.grid {
            apply_field(self.base, self.swept, v)?;
        }
        for &v in &self.family_values {
            apply_field(self.base, self.family, v)?;
        }
        Ok(())
    }

    pub fn params_at(&self, family_value: f64, grid_value: f64) -> Result<Params, SpecError> {
        let p = apply_field(self.base, self.family, family_value)?;
        apply_field(p, self.swept, grid_value)
    }
}

/// The paper-style experiment grids: 20 interior points on an open interval.
pub fn open_interval_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points + 1) as f64;
    (1..=points).map(|k| lo + step * k as f64).collect()
}

/// Built-in experiment specs. Experiments 1 and 2 share one grid (block
/// capacity 80, building rate 2, generation rate family {6, 7.5, 10}, arrival
/// rate swept over (1, 3.5)); they differ only in which response is examined.
/// Experiment 3 fixes the arrival rate at 1.5 and sweeps the generation rate
/// over (1, 2.5) for capacities {40, 80, 160}.
pub fn example_spec(number: u8) -> Option<SweepSpec> {
    let base = Params { lambda: 1.5, mu1: 6.0, mu2: 2.0, b: 80 };
    match number {
        1 | 2 => Some(SweepSpec {
            base,
            swept: ParamField::Lambda,
            grid: open_interval_grid(1.0, 3.5, 20),
            family: ParamField::Mu1,
            family_values: vec![6.0, 7.5, 10.0],
            source: MomentSource::Exact,
            knobs: SolverKnobs::default(),
        }),
        3 => Some(SweepSpec {
            base,
            swept: ParamField::Mu1,
            grid: open_interval_grid(1.0, 2.5, 20),
            family: ParamField::B,
            family_values: vec![40.0, 80.0, 160.0],
            source: MomentSource::Exact,
            knobs: SolverKnobs::default(),
        }),
        _ => None,
    }
}

/// One evaluated sweep point. Unstable points carry the stability fields
/// only; failed points carry the error message; everything else is filled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRecord {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub b: u32,
    pub bound: f64,
    pub stable: bool,
    /// Where the moments came from: "exact", "simulator", or "table".
    pub source: &'static str,
    pub block_mean: Option<f64>,
    pub pool_mean: Option<f64>,
    pub y: Option<f64>,
    pub z: Option<f64>,
    pub x: Option<f64>,
    pub entropy_maxent: Option<f64>,
    pub entropy_exact: Option<f64>,
    pub kl: Option<f64>,
    pub tail_exact: Option<f64>,
    pub tail_approx: Option<f64>,
    /// Truncation level used by the exact path (JSON only, not a CSV column).
    pub pool_cap: Option<u32>,
    pub millis: f64,
    pub error: Option<String>,
}

impl ComparisonRecord {
    fn skeleton(params: &Params, source: &'static str) -> Self {
        let report = params.stability();
        ComparisonRecord {
            lambda: params.lambda,
            mu1: params.mu1,
            mu2: params.mu2,
            b: params.b,
            bound: report.bound,
            stable: report.stable,
            source,
            block_mean: None,
            pool_mean: None,
            y: None,
            z: None,
            x: None,
            entropy_maxent: None,
            entropy_exact: None,
            kl: None,
            tail_exact: None,
            tail_approx: None,
            pool_cap: None,
            millis: 0.0,
            error: None,
        }
    }
}

/// Fixed CSV schema (the `pool_cap`, `source`, and `error` fields are carried
/// in the JSON stream only).
pub const CSV_HEADER: [&str; 16] = [
    "lambda",
    "mu1",
    "mu2",
    "b",
    "bound",
    "stable",
    "I",
    "J",
    "y",
    "z",
    "x",
    "H_maxent",
    "H_exact",
    "kl",
    "tail_exact",
    "tail_approx",
];

/// `CSV_HEADER` plus the trailing timing column.
pub fn csv_header() -> Vec<&'static str> {
    let mut h = CSV_HEADER.to_vec();
    h.push("ms");
    h
}

pub fn csv_row(r: &ComparisonRecord) -> Vec<String> {
    let opt = |v: &Option<f64>| v.map(sig12).unwrap_or_default();
    vec![
        sig12(r.lambda),
        sig12(r.mu1),
        sig12(r.mu2),
        r.b.to_string(),
        sig12(r.bound),
        r.stable.to_string(),
        opt(&r.block_mean),
        opt(&r.pool_mean),
        opt(&r.y),
        opt(&r.z),
        opt(&r.x),
        opt(&r.entropy_maxent),
        opt(&r.entropy_exact),
        opt(&r.kl),
        opt(&r.tail_exact),
        opt(&r.tail_approx),
        sig12(r.millis),
    ]
}

enum Resolved {
    Exact,
    Simulator { horizon: f64, seed: u64 },
    Given(Option<Moments>),
}

/// Evaluates one parameter point: stability gate, moments from the chosen
/// source, product-form fit, entropy and divergence diagnostics. Errors are
/// embedded in the record, never propagated.
fn evaluate_point(params: &Params, source: &Resolved, knobs: &SolverKnobs) -> ComparisonRecord {
    let label = match source {
        Resolved::Exact => "exact",
        Resolved::Simulator { .. } => "simulator",
        Resolved::Given(_) => "table",
    };
    let mut record = ComparisonRecord::skeleton(params, label);
    if let Err(e) = params.validate() {
        record.error = Some(e.to_string());
        return record;
    }
    if !record.stable {
        return record;
    }
    let start = Instant::now();

    let mut exact_dist: Option<JointDistribution> = None;
    let moments: Option<Moments> = match source {
        Resolved::Exact => {
            let solved = match knobs.pool_cap {
                Some(cap) => SparseGenerator::build(*params, cap)
                    .map_err(|e| e.to_string())
                    .and_then(|gen| {
                        solve_stationary(
                            &gen,
                            &SolveOptions {
                                residual_tol: knobs.residual_tol,
                                ..SolveOptions::default()
                            },
                        )
                        .map_err(|e| e.to_string())
                    })
                    .map(|dist| {
                        record.pool_cap = Some(cap);
                        dist
                    }),
                None => auto_truncate(params, &knobs.truncate_options())
                    .map(|t| {
                        record.pool_cap = Some(t.level);
                        t.distribution
                    })
                    .map_err(|e| e.to_string()),
            };
            match solved {
                Ok(dist) => {
                    let m = dist.moments();
                    exact_dist = Some(dist);
                    Some(m)
                }
                Err(e) => {
                    record.error = Some(e);
                    None
                }
            }
        }
        Resolved::Simulator { horizon, seed } => {
            match simulate(params, &SimConfig::new(*horizon, *seed)) {
                Ok(est) => Some(Moments { block_mean: est.block_mean, pool_mean: est.pool_mean }),
                Err(e) => {
                    record.error = Some(e.to_string());
                    None
                }
            }
        }
        Resolved::Given(m) => {
            if m.is_none() {
                record.error = Some("no table row for this point".to_string());
            }
            *m
        }
    };

    if let Some(m) = moments {
        record.block_mean = Some(m.block_mean);
        record.pool_mean = Some(m.pool_mean);
        match maxent_distribution(m.block_mean, m.pool_mean, params.b) {
            Ok(sol) => {
                record.y = Some(sol.y);
                record.z = Some(sol.z);
                record.x = Some(sol.x);
                record.entropy_maxent = Some(entropy_closed_form(&sol));
                if let Some(dist) = &exact_dist {
                    record.entropy_exact = Some(entropy_direct(dist));
                    match kl_divergence(dist, &sol) {
                        Ok(report) => {
                            record.kl = Some(report.kl);
                            record.tail_exact = Some(report.exact_tail_mass);
                            record.tail_approx = Some(report.approx_tail_mass);
                        }
                        Err(e) => record.error = Some(e.to_string()),
                    }
                }
            }
            Err(e) => record.error = Some(e.to_string()),
        }
    }
    record.millis = start.elapsed().as_secs_f64() * 1e3;
    record
}

/// A single evaluated point of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub family_value: f64,
    pub grid_value: f64,
    pub record: ComparisonRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub points: Vec<SweepPoint>,
}

/// Runs the sweep: one record per (family value, grid point), evaluated in
/// parallel, emitted in grid order. Per-point failures are embedded in the
/// records; only a malformed spec aborts.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable, SpecError> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &family_value in &spec.family_values {
        for &grid_value in &spec.grid {
            cells.push((family_value, grid_value));
        }
    }
    let points: Vec<SweepPoint> = cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(family_value, grid_value))| {
            let record = match spec.params_at(family_value, grid_value) {
                Ok(params) => {
                    let resolved = match &spec.source {
                        MomentSource::Exact => Resolved::Exact,
                        MomentSource::Simulator { horizon, seed } => Resolved::Simulator {
                            horizon: *horizon,
                            seed: seed.wrapping_add(idx as u64),
                        },
                        MomentSource::Table(rows) => Resolved::Given(
                            rows.iter()
                                .find(|r| r.family == family_value && r.point == grid_value)
                                .map(|r| Moments {
                                    block_mean: r.block_mean,
                                    pool_mean: r.pool_mean,
                                }),
                        ),
                    };
                    evaluate_point(&params, &resolved, &spec.knobs)
                }
                Err(e) => {
                    let mut rec = ComparisonRecord::skeleton(&spec.base, "exact");
                    rec.error = Some(e.to_string());
                    rec
                }
            };
            SweepPoint { family_value, grid_value, record }
        })
        .collect();
    Ok(SweepTable { spec: spec.clone(), points })
}

/// Evaluates one standalone parameter point against the exact source.
pub fn evaluate_exact_point(params: &Params, knobs: &SolverKnobs) -> ComparisonRecord {
    evaluate_point(params, &Resolved::Exact, knobs)
}

pub fn write_csv<W: Write>(table: &SweepTable, w: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(csv_header())?;
    for point in &table.points {
        writer.write_record(csv_row(&point.record))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn to_csv_string(table: &SweepTable) -> String {
    let mut buf = Vec::new();
    write_csv(table, &mut buf).expect("in-memory csv");
    String::from_utf8(buf).expect("csv is utf-8")
}
