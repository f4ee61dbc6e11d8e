//! Threshold autoscaling driven by per-server CPU predictions, run against
//! the simulator with ECMP dispatch over the active set.
//!
//! A removed server drains: it keeps its running jobs and costs
//! server-seconds until they finish, but receives no new flows.

use std::collections::VecDeque;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::extract::{ExtractConfig, Extractor};
use super::features::build_feature_rows;
use super::lb::percentile;
use super::AppError;
use crate::ml::{linreg_fit, linreg_predict, LinearModel, Matrix};
use crate::store::{ObservationFrame, RegionConfig, Signal, VipRegion};
use crate::traffic::{gen_arrivals, RateStep, Simulation, WorkloadSpec};

/// Upper clamp on predictions before they reach the scaling rule.
pub const PREDICTION_CAP: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscaleConfig {
    pub n_servers_min: usize,
    pub n_servers_max: usize,
    pub cpu_lo: f64,
    pub cpu_hi: f64,
    /// Seconds per control step.
    pub step: f64,
    /// Prediction horizon in steps.
    pub horizon: u32,
    /// Steps skipped after a scaling action.
    pub cooldown: u32,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        Self {
            n_servers_min: 8,
            n_servers_max: 14,
            cpu_lo: 0.7,
            cpu_hi: 0.8,
            step: 0.25,
            horizon: 16,
            cooldown: 8,
        }
    }
}

impl AutoscaleConfig {
    pub fn validate(&self) -> Result<(), AppError> {
        if self.n_servers_min == 0 || self.n_servers_min >= self.n_servers_max {
            return Err(AppError::Config(format!(
                "need 0 < n_servers_min < n_servers_max, got {} and {}",
                self.n_servers_min, self.n_servers_max
            )));
        }
        if !(self.cpu_lo < self.cpu_hi) {
            return Err(AppError::Config(format!(
                "need cpu_lo < cpu_hi, got {} and {}",
                self.cpu_lo, self.cpu_hi
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(AppError::Config(format!("step must be > 0, got {}", self.step)));
        }
        Ok(())
    }

    pub fn horizon_s(&self) -> f64 {
        f64::from(self.horizon) * self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Up,
    Down,
    Hold,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Up => "up",
            Decision::Down => "down",
            Decision::Hold => "hold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoscaleState {
    /// Active server ids, ascending.
    pub active: Vec<usize>,
    /// Ids available to scale into are `0..pool`.
    pub pool: usize,
    /// Index of the next step.
    pub step: u64,
    /// First step at which the rule is evaluated again.
    pub resume_at: u64,
    pub last_scale_step: Option<u64>,
    /// Value of δ at the last evaluated step.
    pub delta: i64,
    pub threshold: usize,
}

impl AutoscaleState {
    /// Starts with servers `0..initial` active.
    pub fn new(initial: usize, pool: usize, cfg: &AutoscaleConfig) -> Result<Self, AppError> {
        cfg.validate()?;
        if initial < cfg.n_servers_min || initial > cfg.n_servers_max || pool < cfg.n_servers_max {
            return Err(AppError::Config(format!(
                "initial {initial} servers must lie in [{}, {}] and the pool ({pool}) cover the maximum",
                cfg.n_servers_min, cfg.n_servers_max
            )));
        }
        Ok(Self {
            active: (0..initial).collect(),
            pool,
            step: 0,
            resume_at: 0,
            last_scale_step: None,
            delta: 0,
            threshold: initial.div_ceil(3),
        })
    }

    pub fn in_cooldown(&self) -> bool {
        self.step < self.resume_at
    }
}

/// One control step of the scaling rule.
///
/// `y` is indexed by server id and must hold a finite prediction for every
/// active server. Scaling down removes the highest active id; scaling up adds
/// the lowest inactive id. After either, the next `cooldown` steps return
/// `Hold` without looking at `y`.
pub fn autoscale_step(
    state: &mut AutoscaleState,
    y: &[f64],
    cfg: &AutoscaleConfig,
) -> Result<Decision, AppError> {
    if state.in_cooldown() {
        state.step += 1;
        return Ok(Decision::Hold);
    }
    let mut delta = 0i64;
    for &s in &state.active {
        let v = y.get(s).copied().filter(|v| !v.is_nan()).ok_or(AppError::MissingPrediction(s))?;
        if v < cfg.cpu_lo {
            delta += 1;
        } else if v > cfg.cpu_hi {
            delta -= 1;
        }
    }
    let n = state.active.len();
    let threshold = n.div_ceil(3);
    state.delta = delta;
    state.threshold = threshold;
    let decision = if delta > threshold as i64 && n > cfg.n_servers_min {
        state.active.pop();
        Decision::Down
    } else if delta < -(threshold as i64) && n < cfg.n_servers_max {
        let next = (0..state.pool)
            .find(|i| state.active.binary_search(i).is_err())
            .ok_or_else(|| AppError::Config("server pool exhausted".into()))?;
        let at = state.active.partition_point(|&i| i < next);
        state.active.insert(at, next);
        Decision::Up
    } else {
        Decision::Hold
    };
    if decision != Decision::Hold {
        state.last_scale_step = Some(state.step);
        state.resume_at = state.step + 1 + u64::from(cfg.cooldown);
        log::debug!(
            "step {}: scale {} (delta {delta}, threshold {threshold}), now {} servers",
            state.step,
            decision.as_str(),
            state.active.len()
        );
    }
    state.step += 1;
    Ok(decision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Expected per-server load at the horizon from the scheduled rate.
    Oracle,
    /// CPU busy fraction over the last step, as polled.
    Reactive,
    /// Linear regression over feature rows.
    Linreg,
}

impl FromStr for PredictorKind {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(PredictorKind::Oracle),
            "reactive" => Ok(PredictorKind::Reactive),
            "linreg" => Ok(PredictorKind::Linreg),
            other => Err(AppError::Config(format!(
                "unknown predictor {other:?} (expected oracle, reactive or linreg)"
            ))),
        }
    }
}

/// Regression from one server's recent feature row to its CPU usage
/// `horizon` steps later.
#[derive(Debug, Clone, PartialEq)]
pub struct LinregPredictor {
    pub model: LinearModel,
    /// Steps covered by the feature window.
    pub lookback: usize,
    /// R² on the held-out tail of the training run.
    pub holdout_r2: f64,
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Oracle,
    Reactive,
    Linreg(LinregPredictor),
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Oracle => "oracle",
            Predictor::Reactive => "reactive",
            Predictor::Linreg(_) => "linreg",
        }
    }

    fn needs_features(&self) -> bool {
        matches!(self, Predictor::Linreg(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoscaleScenario {
    /// Arrivals and server pool; `server_capacities` lists the whole pool.
    pub workload: WorkloadSpec,
    pub initial_servers: usize,
    /// Trailing window over which true CPU usage is measured, seconds.
    pub cpu_window: f64,
    /// A step counts as steady once the scheduled rate has been constant
    /// this long.
    pub settle_s: f64,
    /// True-CPU band used for the steady-state score.
    pub band: (f64, f64),
}

/// Step load over a pool of 14 dual-core servers: 6.75 server-loads, then
/// 9.75, then 6.75 again, 60 s each. At the 0.75 midpoint of the target
/// band these need 9 and 13 servers.
pub fn step_load_scenario(seed: u64) -> AutoscaleScenario {
    let mean_work = 0.005;
    let rate = |load: f64| load / mean_work;
    let mut workload = WorkloadSpec::new(rate(6.75), 180.0, vec![1.0; 14], seed);
    workload.mean_duration = mean_work;
    workload.server_cores = vec![2; 14];
    workload.schedule = vec![
        RateStep { start: 0.0, rate: rate(6.75) },
        RateStep { start: 60.0, rate: rate(9.75) },
        RateStep { start: 120.0, rate: rate(6.75) },
    ];
    AutoscaleScenario {
        workload,
        initial_servers: 9,
        cpu_window: 1.0,
        settle_s: 20.0,
        band: (0.65, 0.85),
    }
}

impl AutoscaleScenario {
    fn steady(&self, t: f64) -> bool {
        let w = &self.workload;
        let last_change = w
            .schedule
            .iter()
            .map(|s| s.start)
            .filter(|&s| s <= t)
            .fold(0.0, f64::max);
        t - last_change >= self.settle_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub step: u64,
    pub t: f64,
    pub n_active: usize,
    pub decision: Decision,
    pub delta: i64,
    pub steady: bool,
    /// Share of active servers whose true CPU lies in the band.
    pub in_band: f64,
    /// True CPU per pool server; `None` when it is neither active nor
    /// draining.
    pub cpu: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutoscaleSummary {
    pub predictor: String,
    pub steps: u64,
    pub events: u64,
    pub ups: u64,
    pub downs: u64,
    /// Integral over time of servers that are active or draining.
    pub server_seconds: f64,
    pub steady_steps: u64,
    /// Steady steps with at least two thirds of active servers in the band.
    pub steady_in_band_steps: u64,
    pub steady_in_band_frac: f64,
    pub mean_fct: f64,
    pub p95_fct: f64,
}

#[derive(Debug, Clone)]
pub struct AutoscaleRun {
    pub timeline: Vec<TimelineRow>,
    pub summary: AutoscaleSummary,
}

/// Feature rows and later CPU readings gathered for training.
#[derive(Debug, Default)]
struct Collected {
    /// (step, server, row)
    rows: Vec<(u64, usize, Vec<f64>)>,
    /// cpu[step][server]
    cpu: Vec<Vec<Option<f64>>>,
}

pub fn run_autoscaler(
    scenario: &AutoscaleScenario,
    predictor: &Predictor,
    cfg: &AutoscaleConfig,
) -> Result<AutoscaleRun, AppError> {
    run_inner(scenario, predictor, cfg, None, 0, true)
}

fn run_inner(
    scenario: &AutoscaleScenario,
    predictor: &Predictor,
    cfg: &AutoscaleConfig,
    mut collect: Option<&mut Collected>,
    collect_lookback: usize,
    control: bool,
) -> Result<AutoscaleRun, AppError> {
    cfg.validate()?;
    let spec = &scenario.workload;
    let pool = spec.server_capacities.len();
    let mut state = AutoscaleState::new(scenario.initial_servers, pool, cfg)?;
    if !(scenario.cpu_window > 0.0) {
        return Err(AppError::Config("cpu_window must be > 0".into()));
    }
    let lookback = match predictor {
        Predictor::Linreg(p) => p.lookback,
        _ => collect_lookback,
    };
    let features = predictor.needs_features() || collect.is_some();
    if features && lookback == 0 {
        return Err(AppError::Config("feature lookback must be >= 1 step".into()));
    }

    let arrivals = gen_arrivals(spec)?;
    let mut sim = Simulation::with_cluster(arrivals, spec.cluster(), features);
    for i in 0..pool {
        sim.cluster_mut().set_accepting(i, state.active.binary_search(&i).is_ok());
    }
    let region = VipRegion::anonymous(RegionConfig {
        n_egress: pool,
        ..RegionConfig::default()
    })?;
    let mut ex = Extractor::new(
        &region,
        ExtractConfig {
            window: cfg.step,
            seed: spec.seed,
            auto_add: false,
            record_frames: false,
            ..ExtractConfig::default()
        },
    )?;
    if features {
        for i in 0..pool {
            ex.add_egress(i)?;
        }
    }
    let mut history: Vec<VecDeque<ObservationFrame>> = vec![VecDeque::new(); pool];

    let n_steps = (spec.duration_s / cfg.step).round() as u64;
    let cpu_lag = ((scenario.cpu_window / cfg.step).round() as usize).max(1);
    let mut busy_hist: VecDeque<Vec<f64>> = VecDeque::from([vec![0.0; pool]]);
    let mut timeline = Vec::with_capacity(n_steps as usize);
    let (mut ups, mut downs, mut server_seconds) = (0u64, 0u64, 0.0);

    for k in 0..n_steps {
        let t = (k + 1) as f64 * cfg.step;
        let t_prev = k as f64 * cfg.step;
        let running_before: Vec<bool> = (0..pool)
            .map(|i| sim.cluster().is_accepting(i) || sim.cluster().servers[i].active_jobs() > 0)
            .collect();
        while let Some(a) = sim.peek_arrival() {
            if a.t >= t {
                break;
            }
            let (at, digest) = (a.t, a.fid.digest());
            if features {
                sim.advance_to(at);
                for p in sim.drain_packets(at) {
                    ex.push(&p)?;
                }
            }
            let pick = state.active[(digest % state.active.len() as u64) as usize];
            sim.dispatch_next(pick);
        }
        sim.advance_to(t);
        if features {
            for p in sim.drain_packets(t) {
                ex.push(&p)?;
            }
            ex.advance(t)?;
        }

        let busy: Vec<f64> = sim.cluster().servers.iter().map(|s| s.busy_time()).collect();
        busy_hist.push_back(busy.clone());
        if busy_hist.len() > cpu_lag + 1 {
            busy_hist.pop_front();
        }
        let oldest = &busy_hist[0];
        let span = (busy_hist.len() - 1) as f64 * cfg.step;
        let prev_step = &busy_hist[busy_hist.len() - 2];
        let running: Vec<bool> = (0..pool)
            .map(|i| running_before[i] || sim.cluster().is_accepting(i) || sim.cluster().servers[i].active_jobs() > 0)
            .collect();
        server_seconds += running.iter().filter(|&&r| r).count() as f64 * cfg.step;
        let cpu: Vec<Option<f64>> = (0..pool)
            .map(|i| running[i].then(|| (busy[i] - oldest[i]) / span))
            .collect();

        let mut rows: Vec<Option<Vec<f64>>> = vec![None; pool];
        if features {
            for i in 0..pool {
                let h = &mut history[i];
                h.push_back(region.read_latest(i, t)?);
                if h.len() > lookback + 1 {
                    h.pop_front();
                }
                if h.len() == lookback + 1 {
                    let pair = [h[0].clone(), h[lookback].clone()];
                    let fm = build_feature_rows(&pair, lookback as f64 * cfg.step, &Signal::ALL)?;
                    rows[i] = Some(fm.x.row(0).to_vec());
                }
            }
        }
        if let Some(c) = collect.as_deref_mut() {
            for &i in &state.active {
                if let Some(r) = &rows[i] {
                    c.rows.push((k, i, r.clone()));
                }
            }
            c.cpu.push(cpu.clone());
        }

        let last_step = |i: usize| (busy[i] - prev_step[i]) / cfg.step;
        let y: Vec<f64> = match predictor {
            Predictor::Oracle => {
                let load = spec.rate_at(t + cfg.horizon_s()) * spec.mean_work();
                let n = state.active.len() as f64;
                (0..pool).map(|i| load / (n * spec.server_capacities[i])).collect()
            }
            Predictor::Reactive => (0..pool).map(last_step).collect(),
            Predictor::Linreg(p) => {
                let mut y: Vec<f64> = (0..pool).map(last_step).collect();
                let have: Vec<usize> = (0..pool).filter(|&i| rows[i].is_some()).collect();
                if !have.is_empty() {
                    let x = Matrix::from_rows(&have.iter().map(|&i| rows[i].clone().expect("present")).collect::<Vec<_>>())?;
                    for (&i, v) in have.iter().zip(linreg_predict(&p.model, &x)?) {
                        y[i] = v;
                    }
                }
                y
            }
        }
        .into_iter()
        .map(|v| v.clamp(0.0, PREDICTION_CAP))
        .collect();

        let before = state.active.clone();
        let decision = if control {
            autoscale_step(&mut state, &y, cfg)?
        } else {
            Decision::Hold
        };
        match decision {
            Decision::Up => {
                ups += 1;
                let added = state.active.iter().find(|i| before.binary_search(i).is_err());
                sim.cluster_mut().set_accepting(*added.expect("one server added"), true);
            }
            Decision::Down => {
                downs += 1;
                let removed = before.iter().find(|i| state.active.binary_search(i).is_err());
                sim.cluster_mut().set_accepting(*removed.expect("one server removed"), false);
            }
            Decision::Hold => {}
        }

        let band = scenario.band;
        let in_band = before
            .iter()
            .filter(|&&i| cpu[i].is_some_and(|c| c >= band.0 && c <= band.1))
            .count() as f64
            / before.len() as f64;
        timeline.push(TimelineRow {
            step: k,
            t,
            n_active: before.len(),
            decision,
            delta: if state.last_scale_step == Some(k) || !state.in_cooldown() || decision != Decision::Hold {
                state.delta
            } else {
                0
            },
            steady: scenario.steady(t_prev) && scenario.steady(t),
            in_band,
            cpu,
        });
    }
    sim.finish();

    let mut fct: Vec<f64> = sim.records().filter(|r| !r.flood).filter_map(|r| r.fct()).collect();
    fct.sort_by(f64::total_cmp);
    let steady_steps = timeline.iter().filter(|r| r.steady).count() as u64;
    let steady_in_band_steps = timeline
        .iter()
        .filter(|r| r.steady && r.in_band >= 2.0 / 3.0 - 1e-12)
        .count() as u64;
    let summary = AutoscaleSummary {
        predictor: predictor.name().to_string(),
        steps: n_steps,
        events: ups + downs,
        ups,
        downs,
        server_seconds,
        steady_steps,
        steady_in_band_steps,
        steady_in_band_frac: if steady_steps > 0 {
            steady_in_band_steps as f64 / steady_steps as f64
        } else {
            0.0
        },
        mean_fct: if fct.is_empty() { f64::NAN } else { fct.iter().sum::<f64>() / fct.len() as f64 },
        p95_fct: percentile(&fct, 0.95),
    };
    Ok(AutoscaleRun { timeline, summary })
}

/// Training run for the regression predictor: 11 of the 14 servers held
/// fixed while the load steps every 15 s through per-server utilisations
/// from about 0.45 to 1.1.
pub fn linreg_training_scenario(seed: u64) -> AutoscaleScenario {
    let mut s = step_load_scenario(seed);
    let loads = [6.0, 9.0, 11.5, 7.5, 5.0, 10.0, 12.0, 8.5, 6.5, 11.0, 9.5, 5.5];
    s.workload.schedule = loads
        .iter()
        .enumerate()
        .map(|(i, &l)| RateStep {
            start: 15.0 * i as f64,
            rate: l / s.workload.mean_duration,
        })
        .collect();
    s.workload.arrival_rate = s.workload.schedule[0].rate;
    s.initial_servers = 11;
    s
}

/// Fits the regression predictor on a run of `scenario` with the active
/// set held at its initial size, so that labels follow the load rather than
/// a controller. Samples are ordered by time; the first `train_frac` of
/// steps train the model and the rest score it.
pub fn train_linreg_predictor(
    scenario: &AutoscaleScenario,
    cfg: &AutoscaleConfig,
    lookback: usize,
    train_frac: f64,
) -> Result<LinregPredictor, AppError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(AppError::Config(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let mut c = Collected::default();
    run_inner(scenario, &Predictor::Oracle, cfg, Some(&mut c), lookback, false)?;
    let h = cfg.horizon as usize;
    let split = (c.cpu.len() as f64 * train_frac) as u64;
    let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, i, row) in c.rows {
        let Some(Some(label)) = c.cpu.get(k as usize + h).map(|v| v[i]) else {
            continue;
        };
        // train rows must not see labels from the held-out period
        if k + (h as u64) < split {
            xtr.push(row);
            ytr.push(label);
        } else if k >= split {
            xte.push(row);
            yte.push(label);
        }
    }
    if xtr.len() < 2 {
        return Err(AppError::Config("too few training samples".into()));
    }
    let model = linreg_fit(&Matrix::from_rows(&xtr)?, &ytr)?;
    let holdout_r2 = if xte.len() >= 2 {
        let pred = linreg_predict(&model, &Matrix::from_rows(&xte)?)?;
        let mean = yte.iter().sum::<f64>() / yte.len() as f64;
        let ss_tot: f64 = yte.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = yte.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum();
        if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN }
    } else {
        f64::NAN
    };
    Ok(LinregPredictor {
        model,
        lookback,
        holdout_r2,
    })
}

/// Per-step timeline, header
/// `step,t,n_active,decision,delta,steady,in_band,cpu_0,...,cpu_{pool-1}`.
/// Servers neither active nor draining have an empty cpu cell.
pub fn write_timeline_csv<W: Write>(rows: &[TimelineRow], out: W) -> Result<(), AppError> {
    let mut w = csv::Writer::from_writer(out);
    let pool = rows.first().map_or(0, |r| r.cpu.len());
    let mut header: Vec<String> = ["step", "t", "n_active", "decision", "delta", "steady", "in_band"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..pool).map(|i| format!("cpu_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.step.to_string(),
            r.t.to_string(),
            r.n_active.to_string(),
            r.decision.as_str().to_string(),
            r.delta.to_string(),
            u8::from(r.steady).to_string(),
            r.in_band.to_string(),
        ];
        rec.extend(r.cpu.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(n: usize) -> AutoscaleState {
        AutoscaleState::new(n, 14, &AutoscaleConfig::default()).unwrap()
    }

    #[test]
    fn hand_case_scales_down() {
        // |S| = 9: five under, one over, three in range -> delta 4 > 3
        let mut s = state(9);
        let y = [0.5, 0.6, 0.1, 0.65, 0.69, 0.9, 0.75, 0.75, 0.7];
        let d = autoscale_step(&mut s, &y, &AutoscaleConfig::default()).unwrap();
        assert_eq!(d, Decision::Down);
        assert_eq!(s.delta, 4);
        assert_eq!(s.threshold, 3);
        assert_eq!(s.active, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn floor_binds() {
        let mut s = state(8);
        let d = autoscale_step(&mut s, &[0.1; 14], &AutoscaleConfig::default()).unwrap();
        assert_eq!(d, Decision::Hold);
        assert_eq!(s.delta, 8);
    }

    #[test]
    fn in_range_holds() {
        let mut s = state(11);
        assert_eq!(autoscale_step(&mut s, &[0.75; 14], &AutoscaleConfig::default()).unwrap(), Decision::Hold);
        assert_eq!(s.delta, 0);
    }

    #[test]
    fn up_adds_lowest_free_id_and_cools_down() {
        let cfg = AutoscaleConfig::default();
        let mut s = state(9);
        s.active = vec![0, 1, 2, 4, 5, 6, 7, 8, 9];
        assert_eq!(autoscale_step(&mut s, &[0.95; 14], &cfg).unwrap(), Decision::Up);
        assert_eq!(s.active, (0..10).collect::<Vec<_>>());
        for _ in 0..8 {
            assert_eq!(autoscale_step(&mut s, &[0.95; 14], &cfg).unwrap(), Decision::Hold);
        }
        assert_eq!(autoscale_step(&mut s, &[0.95; 14], &cfg).unwrap(), Decision::Up);
        assert_eq!(s.last_scale_step, Some(9));
    }

    #[test]
    fn missing_prediction() {
        let mut s = state(9);
        let r = autoscale_step(&mut s, &[0.75; 5], &AutoscaleConfig::default());
        assert!(matches!(r, Err(AppError::MissingPrediction(5))));
        let mut y = [0.75; 14];
        y[3] = f64::NAN;
        let r = autoscale_step(&mut s, &y, &AutoscaleConfig::default());
        assert!(matches!(r, Err(AppError::MissingPrediction(3))));
    }

    #[test]
    fn config_validation() {
        let cfg = AutoscaleConfig { cpu_lo: 0.9, ..AutoscaleConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = AutoscaleConfig { n_servers_min: 14, ..AutoscaleConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(AutoscaleState::new(15, 14, &AutoscaleConfig::default()).is_err());
    }

    fn light_scenario(seed: u64) -> AutoscaleScenario {
        // 2.4 server-loads: 0.3 per server at the floor of 8
        let mut s = step_load_scenario(seed);
        s.workload.schedule.clear();
        s.workload.arrival_rate = 2.4 / s.workload.mean_duration;
        s.workload.duration_s = 20.0;
        s
    }

    #[test]
    fn oracle_settles_at_floor_under_light_load() {
        let cfg = AutoscaleConfig::default();
        let run = run_autoscaler(&light_scenario(1), &Predictor::Oracle, &cfg).unwrap();
        let s = &run.summary;
        assert_eq!(s.downs, 1);
        assert_eq!(s.ups, 0);
        assert!(run.timeline.iter().skip(1).all(|r| r.n_active == 8));
        assert_eq!(s.steps, 80);
    }

    #[test]
    fn drained_servers_finish_their_jobs() {
        let cfg = AutoscaleConfig::default();
        let run = run_autoscaler(&light_scenario(2), &Predictor::Oracle, &cfg).unwrap();
        // server 8 was removed at the first step; it still shows usage while
        // its jobs drain, then drops out
        assert!(run.timeline[0].cpu[8].is_some());
        assert!(run.timeline.last().unwrap().cpu[8].is_none());
        assert!(run.timeline.last().unwrap().cpu[13].is_none());
    }

    #[test]
    fn step_up_triggers_up_within_horizon_and_cooldown() {
        let cfg = AutoscaleConfig::default();
        let mut sc = step_load_scenario(3);
        sc.workload.duration_s = 75.0;
        let run = run_autoscaler(&sc, &Predictor::Reactive, &cfg).unwrap();
        let step_at = (60.0 / cfg.step) as u64;
        let limit = step_at + u64::from(cfg.horizon + cfg.cooldown);
        let up = run
            .timeline
            .iter()
            .find(|r| r.step >= step_at && r.decision == Decision::Up)
            .expect("an up event after the step");
        assert!(up.step <= limit, "first up at step {}", up.step);
    }

    #[test]
    fn timeline_csv_header() {
        let cfg = AutoscaleConfig::default();
        let run = run_autoscaler(&light_scenario(4), &Predictor::Oracle, &cfg).unwrap();
        let mut buf = Vec::new();
        write_timeline_csv(&run.timeline, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("step,t,n_active,decision,delta,steady,in_band,cpu_0,"));
        assert!(header.ends_with(",cpu_13"));
        assert_eq!(text.lines().count(), 81);
    }

    #[test]
    fn linreg_trains_and_runs() {
        let cfg = AutoscaleConfig::default();
        let mut sc = step_load_scenario(5);
        sc.workload.duration_s = 40.0;
        sc.workload.schedule = vec![
            RateStep { start: 0.0, rate: 1200.0 },
            RateStep { start: 20.0, rate: 1800.0 },
        ];
        let p = train_linreg_predictor(&sc, &cfg, 4, 0.7).unwrap();
        assert_eq!(p.model.coef.len(), 73);
        let run = run_autoscaler(&sc, &Predictor::Linreg(p), &cfg).unwrap();
        assert_eq!(run.summary.predictor, "linreg");
        assert!(run.timeline.iter().all(|r| (8..=14).contains(&r.n_active)));
    }
}
