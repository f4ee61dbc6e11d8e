//! Unsupervised traffic classification over feature rows: standardize,
//! project onto the leading principal components, then cluster.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::extract::{extract_trace, ExtractConfig};
use super::features::{FeatureMatrix, RowKey};
use super::AppError;
use crate::ml::{
    adjusted_rand_index, dbscan, gmm_fit, kmeans_restarts, pca_fit, pca_transform, standardize,
    Matrix, NOISE,
};
use crate::store::{RegionConfig, Signal, VipRegion};
use crate::traffic::{gen_trace_with_truth, FlowProfile, WorkloadSpec};

pub const DEFAULT_COMPONENTS: usize = 25;
pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_MIN_PTS: usize = 5;
const N_CLUSTERS: usize = 4;
const KMEANS_RESTARTS: usize = 10;
const MAX_ITER: usize = 300;
const GMM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMethod {
    Kmeans4,
    Gmm4,
    Dbscan { eps: f64, min_pts: usize },
}

impl ClassMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ClassMethod::Kmeans4 => "kmeans4",
            ClassMethod::Gmm4 => "gmm4",
            ClassMethod::Dbscan { .. } => "dbscan",
        }
    }
}

impl FromStr for ClassMethod {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans4" => Ok(ClassMethod::Kmeans4),
            "gmm4" => Ok(ClassMethod::Gmm4),
            "dbscan" => Ok(ClassMethod::Dbscan {
                eps: DEFAULT_EPS,
                min_pts: DEFAULT_MIN_PTS,
            }),
            other => Err(AppError::Config(format!(
                "unknown method {other:?} (expected kmeans4, gmm4 or dbscan)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub method: ClassMethod,
    pub seed: u64,
    /// Principal components kept; capped by the data's rank bound.
    pub n_components: usize,
}

impl ClassifyConfig {
    pub fn new(method: ClassMethod, seed: u64) -> Self {
        Self {
            method,
            seed,
            n_components: DEFAULT_COMPONENTS,
        }
    }
}

/// Mean feature values of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProfile {
    pub label: i64,
    pub size: usize,
    /// Raw feature means, one per column.
    pub mean: Vec<f64>,
    /// Means of the standardized features; large magnitudes mark the
    /// features that set the cluster apart.
    pub z_mean: Vec<f64>,
}

impl ClusterProfile {
    /// The `n` columns with the largest positive standardized mean.
    pub fn dominant<'a>(&self, col_names: &'a [String], n: usize) -> Vec<&'a str> {
        let mut idx: Vec<usize> = (0..self.z_mean.len()).collect();
        idx.sort_by(|&a, &b| self.z_mean[b].total_cmp(&self.z_mean[a]).then(a.cmp(&b)));
        idx.into_iter().take(n).map(|i| col_names[i].as_str()).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyReport {
    pub method: String,
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    pub n_noise: usize,
    /// Against the supplied ground truth, if any.
    pub ari: Option<f64>,
    pub explained_variance_ratio: f64,
    pub profiles: Vec<ClusterProfile>,
}

/// Standardized rows projected onto the leading components.
pub struct Embedding {
    pub z: Matrix,
    pub standardized: Matrix,
    pub explained_variance_ratio: f64,
}

pub fn embed(x: &Matrix, n_components: usize) -> Result<Embedding, AppError> {
    let st = standardize(x)?;
    let p = n_components.min(x.ncols()).min(x.nrows() - 1).max(1);
    let model = pca_fit(&st.x, p)?;
    let z = pca_transform(&model, &st.x)?;
    let kept: f64 = model.explained_variance.iter().sum();
    let ratio = if model.total_variance > 0.0 {
        kept / model.total_variance
    } else {
        1.0
    };
    Ok(Embedding {
        z,
        standardized: st.x,
        explained_variance_ratio: ratio,
    })
}

/// Clusters the rows of `fm` with the fixed standardize, PCA, cluster order.
///
/// `truth` (one label per row) only feeds the ARI in the report.
pub fn classify(
    fm: &FeatureMatrix,
    cfg: &ClassifyConfig,
    truth: Option<&[i64]>,
) -> Result<ClassifyReport, AppError> {
    let n = fm.x.nrows();
    if n < 2 {
        return Err(AppError::Config(format!("need at least 2 rows, got {n}")));
    }
    if let Some(t) = truth {
        if t.len() != n {
            return Err(AppError::Config(format!("{} truth labels for {n} rows", t.len())));
        }
    }
    let emb = embed(&fm.x, cfg.n_components)?;
    let labels: Vec<i64> = match cfg.method {
        ClassMethod::Kmeans4 => {
            let r = kmeans_restarts(&emb.z, N_CLUSTERS.min(n), cfg.seed, MAX_ITER, KMEANS_RESTARTS)?;
            r.labels.into_iter().map(|l| l as i64).collect()
        }
        ClassMethod::Gmm4 => gmm_fit(&emb.z, N_CLUSTERS.min(n), cfg.seed, MAX_ITER, GMM_TOL)?
            .labels()
            .into_iter()
            .map(|l| l as i64)
            .collect(),
        ClassMethod::Dbscan { eps, min_pts } => dbscan(&emb.z, eps, min_pts)?,
    };

    let mut ids: Vec<i64> = labels.clone();
    ids.sort_unstable();
    ids.dedup();
    let profiles = ids
        .iter()
        .map(|&label| {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == label).collect();
            ClusterProfile {
                label,
                size: rows.len(),
                mean: fm.x.select_rows(&rows).column_means(),
                z_mean: emb.standardized.select_rows(&rows).column_means(),
            }
        })
        .collect();
    Ok(ClassifyReport {
        method: cfg.method.name().to_string(),
        n_clusters: ids.iter().filter(|&&l| l != NOISE).count(),
        n_noise: labels.iter().filter(|&&l| l == NOISE).count(),
        ari: truth.map(|t| adjusted_rand_index(&labels, t)),
        explained_variance_ratio: emb.explained_variance_ratio,
        labels,
        profiles,
    })
}

/// Per-row labels, header `egress,t_start,t_end,label` plus `truth` when
/// given.
pub fn write_labels_csv<W: Write>(
    keys: &[RowKey],
    labels: &[i64],
    truth: Option<&[i64]>,
    out: W,
) -> Result<(), AppError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["egress", "t_start", "t_end", "label"];
    if truth.is_some() {
        header.push("truth");
    }
    w.write_record(&header)?;
    for (i, (k, l)) in keys.iter().zip(labels).enumerate() {
        let mut rec = vec![k.egress.to_string(), k.t_start.to_string(), k.t_end.to_string(), l.to_string()];
        if let Some(t) = truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a single-column label file (header `truth` or `label`), or the
/// matching column of a labels CSV.
pub fn read_truth_csv<R: Read>(input: R) -> Result<Vec<i64>, AppError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "truth")
        .or_else(|| headers.iter().position(|h| h == "label"))
        .ok_or_else(|| AppError::Parse("label file needs a `truth` or `label` column".into()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec[col]
                .trim()
                .parse::<i64>()
                .map_err(|e| AppError::Parse(format!("label {:?}: {e}", &rec[col])))
        })
        .collect()
}

/// The four synthetic traffic classes, in ground-truth label order.
pub const CLASS_NAMES: [&str; 4] = ["cpu", "io", "mixed", "flood"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub duration_s: f64,
    /// Rows from windows starting before this are dropped, as are windows
    /// ending after `duration_s` (drain). The flood fills the flow table
    /// over roughly one SYN timeout, so this should cover that.
    pub warmup_s: f64,
    pub window: f64,
    pub arrival_rate: f64,
    /// Mean CPU work per flow.
    pub mean_work: f64,
    pub flood_rate: f64,
    pub n_servers: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            duration_s: 90.0,
            warmup_s: 30.0,
            window: 1.0,
            // 40% utilisation on four unit servers; enough flows per window
            // that the flood class, where most legitimate SYNs miss the
            // table, still has stable per-window statistics
            arrival_rate: 640.0,
            mean_work: 0.0025,
            flood_rate: 5000.0,
            n_servers: 4,
        }
    }
}

impl CorpusSpec {
    /// Workload of class `c` (an index into [`CLASS_NAMES`]).
    pub fn workload(&self, c: usize) -> WorkloadSpec {
        let seed = self.seed.wrapping_mul(31).wrapping_add(c as u64);
        let mut spec = WorkloadSpec::new(self.arrival_rate, self.duration_s, vec![1.0; self.n_servers], seed);
        spec.mean_duration = self.mean_work;
        spec.profile = match c {
            0 => FlowProfile::Exponential,
            1 => FlowProfile::FixedFiles,
            _ => FlowProfile::Mixture,
        };
        if c == 3 {
            spec.flood_rate = Some(self.flood_rate);
        }
        spec
    }
}

/// Feature rows of all four classes, each extracted through its own region,
/// with the class index as ground truth.
pub fn synthetic_corpus(spec: &CorpusSpec) -> Result<(FeatureMatrix, Vec<i64>), AppError> {
    let mut parts = Vec::new();
    for c in 0..CLASS_NAMES.len() {
        let (events, _) = gen_trace_with_truth(&spec.workload(c))?;
        let region = VipRegion::anonymous(RegionConfig {
            n_egress: spec.n_servers,
            ..RegionConfig::default()
        })?;
        let cfg = ExtractConfig {
            window: spec.window,
            seed: spec.seed.wrapping_add(c as u64),
            ..ExtractConfig::default()
        };
        let fm = extract_trace(&events, &region, &cfg, &Signal::ALL)?.features;
        let keep: Vec<usize> = (0..fm.keys.len())
            .filter(|&i| fm.keys[i].t_start >= spec.warmup_s && fm.keys[i].t_end <= spec.duration_s)
            .collect();
        parts.push(FeatureMatrix {
            x: fm.x.select_rows(&keep),
            keys: keep.iter().map(|&i| fm.keys[i]).collect(),
            valid: keep.iter().map(|&i| fm.valid[i]).collect(),
            ..fm
        });
    }
    let mut data = Vec::new();
    let mut keys = Vec::new();
    let mut valid = Vec::new();
    let mut truth = Vec::new();
    for (c, p) in parts.iter().enumerate() {
        data.extend_from_slice(p.x.data());
        keys.extend_from_slice(&p.keys);
        valid.extend_from_slice(&p.valid);
        truth.extend(std::iter::repeat_n(c as i64, p.x.nrows()));
    }
    let first = &parts[0];
    Ok((
        FeatureMatrix {
            x: Matrix::from_vec(keys.len(), first.x.ncols(), data)?,
            col_names: first.col_names.clone(),
            keys,
            valid,
            signals: first.signals.clone(),
        },
        truth,
    ))
}
