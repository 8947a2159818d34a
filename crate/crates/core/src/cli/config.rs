use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chart::ChartConfig;
use crate::disintegrate::{MixtureConfig, Region};
use crate::error::{Error, Result};
use crate::leafdetect::DetectConfig;
use crate::linalg::{self, Point};
use crate::lipmap::{AtlasEntry, MapSpec, MeasureSpec};

/// One experiment, as read from the JSON config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapSpec,
    #[serde(default = "default_measure")]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub classify: Option<ClassifyBlock>,
    #[serde(default)]
    pub chart: Option<ChartBlock>,
    #[serde(default)]
    pub disintegrate: Option<DisintegrateBlock>,
    #[serde(default)]
    pub cdcheck: Option<CdcheckBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

fn default_measure() -> MeasureSpec {
    MeasureSpec::Lebesgue
}

/// Point sets named in a config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSpec {
    Points {
        points: Vec<Vec<f64>>,
    },
    /// `count` nodes per axis, endpoints included.
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        count: usize,
    },
    Random {
        lo: Vec<f64>,
        hi: Vec<f64>,
        count: usize,
    },
    /// Circle in the first two coordinates; the remaining coordinates are
    /// taken from `rest`.
    Circle {
        radius: f64,
        count: usize,
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default)]
        rest: Vec<f64>,
    },
    Line {
        from: Vec<f64>,
        to: Vec<f64>,
        count: usize,
    },
}

impl SampleSpec {
    pub fn points(&self, n: usize, seed: u64) -> Result<Vec<Point>> {
        let dim_err = || Error::Config(format!("sample points must lie in R^{n}"));
        let pts: Vec<Point> = match self {
            SampleSpec::Points { points } => {
                if points.iter().any(|p| p.len() != n) {
                    return Err(dim_err());
                }
                points.iter().map(|p| DVector::from_column_slice(p)).collect()
            }
            SampleSpec::Grid { lo, hi, count } => {
                if lo.len() != n || hi.len() != n {
                    return Err(dim_err());
                }
                let total = count.checked_pow(n as u32).ok_or_else(|| Error::Config("grid too large".into()))?;
                (0..total)
                    .map(|flat| {
                        let mut r = flat;
                        DVector::from_fn(n, |i, _| {
                            let c = r % count;
                            r /= count;
                            if *count == 1 {
                                0.5 * (lo[i] + hi[i])
                            } else {
                                lo[i] + (hi[i] - lo[i]) * c as f64 / (*count - 1) as f64
                            }
                        })
                    })
                    .collect()
            }
            SampleSpec::Random { lo, hi, count } => {
                if lo.len() != n || hi.len() != n {
                    return Err(dim_err());
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Config("random box bounds are inverted".into()));
                }
                let mut rng = linalg::seeded_rng(seed, 0x5A3);
                (0..*count)
                    .map(|_| DVector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>()))
                    .collect()
            }
            SampleSpec::Circle {
                radius,
                count,
                center,
                rest,
            } => {
                if n < 2 || rest.len() != n - 2 {
                    return Err(Error::Config(format!("circle needs n >= 2 and {} trailing coordinates", n.saturating_sub(2))));
                }
                let [cx, cy] = center.unwrap_or([0.0, 0.0]);
                (0..*count)
                    .map(|i| {
                        let t = 2.0 * std::f64::consts::PI * i as f64 / *count as f64;
                        let mut v = vec![cx + radius * t.cos(), cy + radius * t.sin()];
                        v.extend_from_slice(rest);
                        DVector::from_vec(v)
                    })
                    .collect()
            }
            SampleSpec::Line { from, to, count } => {
                if from.len() != n || to.len() != n {
                    return Err(dim_err());
                }
                let a = DVector::from_column_slice(from);
                let b = DVector::from_column_slice(to);
                (0..*count)
                    .map(|i| {
                        let t = if *count == 1 { 0.0 } else { i as f64 / (*count - 1) as f64 };
                        &a + (&b - &a) * t
                    })
                    .collect()
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("sample set is empty".into()));
        }
        if pts.iter().any(|p| !linalg::is_finite(p)) {
            return Err(Error::Config("sample points must be finite".into()));
        }
        Ok(pts)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClassifyBlock {
    pub samples: SampleSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub level: Vec<f64>,
    pub seeds: SampleSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    /// Levels and seeds; the atlas default chart when absent.
    #[serde(default)]
    pub charts: Option<Vec<LevelSpec>>,
    #[serde(default)]
    pub config: ChartConfig,
}

impl ChartBlock {
    pub fn levels(&self, entry: &AtlasEntry, seed: u64) -> Result<Vec<(DVector<f64>, Vec<Point>)>> {
        let n = entry.n();
        let m = entry.m();
        match &self.charts {
            None => {
                if entry.chart_seeds.is_empty() {
                    return Err(Error::Config(format!("map {} has no default chart", entry.key)));
                }
                Ok(vec![(DVector::from_column_slice(&entry.chart_level), entry.chart_seeds.clone())])
            }
            Some(list) => {
                if list.is_empty() {
                    return Err(Error::Config("chart list is empty".into()));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, l)| {
                        if l.level.len() != m {
                            return Err(Error::Config(format!("chart level must lie in R^{m}")));
                        }
                        Ok((DVector::from_column_slice(&l.level), l.seeds.points(n, seed ^ i as u64)?))
                    })
                    .collect()
            }
        }
    }
}

fn default_max_rel_err() -> f64 {
    0.02
}

fn default_density_grid() -> usize {
    8
}

fn default_density_leaves() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DisintegrateBlock {
    pub region: Region,
    #[serde(default)]
    pub mixture: MixtureConfig,
    #[serde(default = "default_max_rel_err")]
    pub max_rel_err: f64,
    /// Nodes per axis of the per-leaf density table.
    #[serde(default = "default_density_grid")]
    pub density_grid: usize,
    /// Number of leaves exported to the density table.
    #[serde(default = "default_density_leaves")]
    pub density_leaves: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CdMode {
    Ambient,
    Leaf,
}

fn default_dirs() -> usize {
    8
}

fn default_rel_step() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CdcheckBlock {
    pub mode: CdMode,
    pub kappa: f64,
    /// A number or "inf".
    pub n_eff: serde_json::Value,
    pub samples: SampleSpec,
    #[serde(default = "default_dirs")]
    pub dirs: usize,
    #[serde(default = "default_rel_step")]
    pub rel_step: f64,
}

impl CdcheckBlock {
    pub fn n_eff(&self) -> Result<f64> {
        match &self.n_eff {
            serde_json::Value::Number(v) => v.as_f64().ok_or_else(|| Error::Config("bad n_eff".into())),
            serde_json::Value::String(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            other => Err(Error::Config(format!("n_eff must be a number or \"inf\", got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub chart_out: Option<String>,
}

pub fn parse(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
